//! JSON scenario files: plant, graph, simulation and learner settings.
//!
//! Matrices are arrays of rows. Fields documented as accepting `"auto"` take
//! either that keyword or a concrete value.

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Digraph, Edge};
use crate::learn::{LearnConfig, Method, PiOptions, StepSchedule, ViOptions};
use crate::matlib::{from_rows, Mat};
use crate::plant::Scenario;
use crate::sim::{InitialConditions, NoiseSpec, SimConfig, StartTime};

/// `"auto"` or a value.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Auto<T> {
    #[default]
    #[serde(serialize_with = "ser_auto")]
    Auto,
    Value(T),
}

fn ser_auto<S: serde::Serializer>(s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str("auto")
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Auto<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw<T> {
            Word(String),
            Value(T),
        }
        match Raw::<T>::deserialize(d)? {
            Raw::Word(w) if w == "auto" => Ok(Auto::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("expected \"auto\" or a value, got {w:?}"))),
            Raw::Value(v) => Ok(Auto::Value(v)),
        }
    }
}

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSection {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    #[serde(rename = "N")]
    pub followers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatricesSection {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "F")]
    pub f: Rows,
    #[serde(rename = "S")]
    pub s: Rows,
    #[serde(rename = "E")]
    pub e: Vec<Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub t0: Auto<f64>,
    pub t0_max: f64,
    pub samples: usize,
    pub spacing: f64,
    pub mu: f64,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub v0: Option<Vec<f64>>,
    pub x0: Option<Rows>,
    pub z0: Option<Rows>,
    pub eta0: Option<Rows>,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            dt: d.dt,
            t0: Auto::Auto,
            t0_max: d.t0_max,
            samples: 32,
            spacing: d.spacing,
            mu: d.mu,
            seed: d.seed,
            noise: d.noise,
            v0: None,
            x0: None,
            z0: None,
            eta0: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViSection {
    pub eps_a: f64,
    pub eps_b: f64,
    pub confine_c: f64,
    pub eps_stop: f64,
    pub max_iter: usize,
}

impl Default for ViSection {
    fn default() -> Self {
        let d = ViOptions::default();
        let StepSchedule::Harmonic { a, b } = d.schedule else {
            unreachable!("default schedule is harmonic")
        };
        Self {
            eps_a: a,
            eps_b: b,
            confine_c: d.confine_c,
            eps_stop: d.eps_stop,
            max_iter: d.max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnSection {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
    pub omega: Auto<f64>,
    #[serde(rename = "K0")]
    pub k0: Auto<Rows>,
    pub vi: ViSection,
}

impl Default for LearnSection {
    fn default() -> Self {
        let d = PiOptions::default();
        Self {
            method: Method::Ipi,
            tol: d.tol,
            max_iter: d.max_iter,
            omega: Auto::Auto,
            k0: Auto::Auto,
            vi: ViSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub horizon: f64,
    pub dt: f64,
    /// Integration steps between rows of `tracking.csv`.
    pub stride: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            horizon: 60.0,
            dt: 1e-3,
            stride: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    pub dims: DimsSection,
    pub matrices: MatricesSection,
    pub graph: GraphSection,
    /// Monic minimal polynomial of `S`, highest power first; derived when absent.
    #[serde(default)]
    pub minpoly: Option<Vec<f64>>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub learn: LearnSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// A parsed scenario with every section validated.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    /// SHA-256 of the raw file bytes.
    pub hash: String,
}

pub fn parse_str(text: &str) -> Result<Loaded> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| {
        Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    let scenario = file.to_scenario()?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    Ok(Loaded { file, scenario, hash })
}

pub fn load(path: &std::path::Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn matrix(rows: &Rows, shape: (usize, usize), what: &str) -> Result<Mat> {
    let m = if rows.is_empty() || rows.iter().all(|r| r.is_empty()) {
        Mat::zeros(rows.len(), 0)
    } else {
        from_rows(rows).map_err(|e| Error::Config(format!("{what}: {e}")))?
    };
    if m.shape() != shape {
        return Err(Error::Config(format!(
            "{what} is {}x{}, dims require {}x{}",
            m.nrows(),
            m.ncols(),
            shape.0,
            shape.1
        )));
    }
    Ok(m)
}

impl ScenarioFile {
    pub fn to_scenario(&self) -> Result<Scenario> {
        let d = &self.dims;
        let mx = &self.matrices;
        if mx.e.len() != d.followers {
            return Err(Error::Config(format!(
                "E lists {} matrices for N = {}",
                mx.e.len(),
                d.followers
            )));
        }
        let e = mx
            .e
            .iter()
            .enumerate()
            .map(|(i, ei)| matrix(ei, (d.n, d.q), &format!("E[{}]", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let graph = Digraph::new(d.followers, self.graph.edges.clone())?;
        Scenario::new(
            matrix(&mx.a, (d.n, d.n), "A")?,
            matrix(&mx.b, (d.n, d.m), "B")?,
            matrix(&mx.c, (d.p, d.n), "C")?,
            matrix(&mx.f, (d.p, d.q), "F")?,
            matrix(&mx.s, (d.q, d.q), "S")?,
            e,
            graph,
        )
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            dt: s.dt,
            t0: match s.t0 {
                Auto::Auto => StartTime::Auto,
                Auto::Value(t) => StartTime::Fixed(t),
            },
            t0_max: s.t0_max,
            samples: s.samples,
            spacing: s.spacing,
            mu: s.mu,
            noise: s.noise,
            seed: s.seed,
            init: InitialConditions {
                v0: s.v0.clone(),
                x0: s.x0.clone(),
                z0: s.z0.clone(),
                eta0: s.eta0.clone(),
            },
            trajectory_stride: None,
        }
    }

    /// Learner options; `K0` is resolved by the caller.
    pub fn learn_config(&self, k0: Option<Mat>) -> LearnConfig {
        let l = &self.learn;
        LearnConfig {
            k0,
            pi: PiOptions {
                tol: l.tol,
                max_iter: l.max_iter,
                ..PiOptions::default()
            },
            vi: ViOptions {
                p0: None,
                schedule: StepSchedule::Harmonic {
                    a: l.vi.eps_a,
                    b: l.vi.eps_b,
                },
                confine_c: l.vi.confine_c,
                eps_stop: l.vi.eps_stop,
                max_iter: l.vi.max_iter,
            },
        }
    }

    /// Explicit `K0`, if the file gives one.
    pub fn explicit_k0(&self, shape: (usize, usize)) -> Result<Option<Mat>> {
        match &self.learn.k0 {
            Auto::Auto => Ok(None),
            Auto::Value(rows) => matrix(rows, shape, "K0").map(Some),
        }
    }

    /// The D1 desk scenario as a file.
    pub fn d1() -> Self {
        let s = Scenario::d1();
        let rows = crate::matlib::to_rows;
        ScenarioFile {
            name: Some("d1".into()),
            dims: DimsSection {
                n: 2,
                m: 1,
                p: 1,
                q: 2,
                followers: 3,
            },
            matrices: MatricesSection {
                a: rows(&s.a),
                b: rows(&s.b),
                c: rows(&s.c),
                f: rows(&s.f),
                s: rows(&s.s),
                e: s.e.iter().map(rows).collect(),
            },
            graph: GraphSection {
                edges: s.graph.edges().to_vec(),
            },
            minpoly: None,
            sim: SimSection::default(),
            learn: LearnSection::default(),
            eval: EvalSection::default(),
        }
    }
}
