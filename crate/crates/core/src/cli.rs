//! `corp-lab` command-line front end.
//!
//! Exit codes: 0 ok, 1 assumption or convergence failure, 2 parse/usage
//! error, 3 rank failure, 4 divergence.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::eval::{
    assemble_ac_hat, closed_loop_simulate, dim_report, dim_report_csv, theorem2_sweep, ClosedLoopConfig,
    ClosedLoopResult, DimInput,
};
use crate::graph::{build_matrices, omega_bound, GraphMatrices, OMEGA_SAFETY};
use crate::learn::{
    gain_from_k, gain_from_p, kleinman_oracle, learn_follower, rank_check, share_solution, stabilizing_gain,
    Gains, LearnReport, Method, OracleResult, ORACLE_TOL,
};
use crate::matlib::{eig, spectral_abscissa, to_rows, Mat};
use crate::par::{init_threads, Execution};
use crate::plant::{build_augmented, build_internal_model, check_assumptions, minimal_polynomial, AugmentedPlant,
    InternalModel};
use crate::scenario::{load, Auto, Loaded};
use crate::sim::{simulate_collection, InitialConditions, Policy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_RANK: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

/// Scale applied to the oracle gain when `K0` is `"auto"`.
pub const AUTO_K0_SCALE: f64 = 1.1;

#[derive(Debug, Parser)]
#[command(name = "corp-lab", version, about = "Data-driven cooperative output regulation lab")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the solvability conditions of a scenario.
    Check { scenario: PathBuf },
    /// Model-based Riccati solution, gains and closed-loop spectrum.
    Oracle {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect data, learn the gains and evaluate the closed loop.
    Learn {
        scenario: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Learn at one follower (1-based) and reuse its solution everywhere (ipi/ivi).
        #[arg(long)]
        share_from: Option<usize>,
        /// Override the number of sample intervals.
        #[arg(long)]
        samples: Option<usize>,
        /// Learn followers one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Simulate the closed loop with oracle gains or gains from a learn report.
    Eval {
        scenario: PathBuf,
        /// `report.json` written by `learn`.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also check this many random leader-rooted graphs with oracle gains.
        #[arg(long)]
        sweep: Option<usize>,
        #[arg(long, default_value_t = 1)]
        sweep_seed: u64,
        #[arg(long, default_value_t = 5)]
        sweep_max_followers: usize,
    },
    /// Unknown and rank counts of the learners.
    Tables {
        /// `n,m,p,q,nz,neighbors`
        #[arg(long, value_parser = parse_dims)]
        dims: Option<DimInput>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method {s:?}; expected pi, vi, ipi or ivi"))
}

fn parse_dims(s: &str) -> std::result::Result<DimInput, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let [n, m, p, q, nz, neighbors] = v[..] else {
        return Err(format!("expected six comma-separated counts, got {}", v.len()));
    };
    Ok(DimInput { n, m, p, q, nz, neighbors })
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Dimension(_) => EXIT_PARSE,
        Error::RankDeficient { .. } => EXIT_RANK,
        Error::Divergence { .. } | Error::IterateDivergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return EXIT_PARSE;
    }
    let result = match cli.command {
        Command::Check { scenario } => cmd_check(&scenario),
        Command::Oracle { scenario, out } => cmd_oracle(&scenario, out.as_deref()),
        Command::Learn {
            scenario,
            method,
            out,
            share_from,
            samples,
            sequential,
        } => cmd_learn(&LearnArgs {
            scenario,
            method,
            out,
            share_from,
            samples,
            exec: if sequential { Execution::Sequential } else { Execution::Parallel },
        }),
        Command::Eval {
            scenario,
            from,
            out,
            sweep,
            sweep_seed,
            sweep_max_followers,
        } => cmd_eval(&scenario, from.as_deref(), &out, sweep, sweep_seed, sweep_max_followers),
        Command::Tables { dims, out } => cmd_tables(dims.unwrap_or(DimInput::MODERATE), out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Verdicts in a fixed order; the last one only makes sense when the first three hold.
fn verdicts(loaded: &Loaded) -> (Vec<(&'static str, bool)>, Vec<String>) {
    let r = check_assumptions(&loaded.scenario);
    let mut details = r.details.clone();
    let augmented = if r.stabilizable && r.exosystem_antistable && r.rank_condition {
        match internal_model(loaded).and_then(|im| build_augmented(&loaded.scenario, &im)) {
            Ok(_) => true,
            Err(e) => {
                details.push(e.to_string());
                false
            }
        }
    } else {
        false
    };
    (
        vec![
            ("(A,B) stabilizable", r.stabilizable),
            ("eigenvalues of S in the closed right half-plane", r.exosystem_antistable),
            ("rank [A-λI B; C 0] = n+p on σ(S)", r.rank_condition),
            ("leader-rooted spanning tree", r.spanning_tree),
            ("augmented pair (Y,J) stabilizable", augmented),
        ],
        details,
    )
}

fn cmd_check(path: &Path) -> Result<i32> {
    let loaded = load(path)?;
    let (list, details) = verdicts(&loaded);
    for (name, ok) in &list {
        println!("{}  {name}", if *ok { "pass" } else { "FAIL" });
    }
    for d in &details {
        println!("  note: {d}");
    }
    Ok(if list.iter().all(|(_, ok)| *ok) { EXIT_OK } else { EXIT_FAILURE })
}

fn internal_model(loaded: &Loaded) -> Result<InternalModel> {
    let s = &loaded.scenario;
    let mp = minimal_polynomial(&s.s, loaded.file.minpoly.as_deref())?;
    build_internal_model(&mp, s.dims().p)
}

/// Everything derived from the true model: used for simulation, the oracle
/// and evaluation, never handed to a learner.
struct Model {
    loaded: Loaded,
    im: InternalModel,
    ap: AugmentedPlant,
    gm: GraphMatrices,
    omega_bound: f64,
}

fn prepare(path: &Path) -> Result<Model> {
    let loaded = load(path)?;
    let (list, details) = verdicts(&loaded);
    let failed: Vec<&str> = list.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    if !failed.is_empty() {
        let mut msg = format!("solvability check failed: {}", failed.join("; "));
        for d in details {
            msg.push_str(&format!("\n  note: {d}"));
        }
        return Err(Error::Assumption(msg));
    }
    let im = internal_model(&loaded)?;
    let ap = build_augmented(&loaded.scenario, &im)?;
    let gm = build_matrices(&loaded.scenario.graph)?;
    let omega_bound = omega_bound(&gm)?;
    Ok(Model {
        loaded,
        im,
        ap,
        gm,
        omega_bound,
    })
}

impl Model {
    fn oracle(&self) -> Result<OracleResult> {
        let k = stabilizing_gain(&self.ap)?;
        kleinman_oracle(&self.ap, &k, ORACLE_TOL, 100)
    }

    fn omega(&self) -> Result<(f64, &'static str)> {
        match self.loaded.file.learn.omega {
            Auto::Auto => Ok((OMEGA_SAFETY * self.omega_bound, "auto: 0.9 x omega_bound")),
            Auto::Value(w) if w > 0.0 && w <= self.omega_bound => Ok((w, "file")),
            Auto::Value(w) => Err(Error::Config(format!(
                "omega = {w} outside (0, {}]",
                self.omega_bound
            ))),
        }
    }

    fn n(&self) -> usize {
        self.loaded.scenario.dims().n
    }

    fn closed_loop(&self, gains: &[Gains], stride: Option<usize>) -> Result<ClosedLoopResult> {
        let sim = &self.loaded.file.sim;
        let ev = &self.loaded.file.eval;
        let cfg = ClosedLoopConfig {
            horizon: ev.horizon,
            dt: ev.dt,
            init: InitialConditions {
                v0: sim.v0.clone(),
                x0: sim.x0.clone(),
                z0: sim.z0.clone(),
                eta0: None,
            },
            trajectory_stride: stride,
            ..ClosedLoopConfig::default()
        };
        closed_loop_simulate(&self.loaded.scenario, &self.im, gains, &cfg)
    }
}

fn rows(m: &Mat) -> Value {
    json!(to_rows(m))
}

fn gains_json(g: &Gains) -> Value {
    json!({ "K_x": rows(&g.kx), "K_z": rows(&g.kz), "omega": g.omega })
}

fn closed_loop_json(r: &ClosedLoopResult) -> Value {
    serde_json::to_value(r).expect("closed-loop result serializes")
}

fn meta(command: &str, loaded: &Loaded, started: Instant) -> Value {
    json!({
        "tool": "corp-lab",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "scenario": loaded.file.name,
        "scenario_hash": loaded.hash,
        "seed": loaded.file.sim.seed,
        "threads": std::env::var(crate::par::THREADS_ENV).ok(),
        "wall_time_s": started.elapsed().as_secs_f64(),
    })
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Result<()> {
    let mut body = serde_json::to_string_pretty(v).expect("json value serializes");
    body.push('\n');
    write(dir, name, &body)
}

fn cmd_oracle(path: &Path, out: Option<&Path>) -> Result<i32> {
    let started = Instant::now();
    let model = prepare(path)?;
    let oracle = model.oracle()?;
    let (omega, omega_source) = model.omega()?;
    let gains = gain_from_p(&oracle.p, &model.ap.j, model.n(), omega, model.omega_bound)?;
    let ac = assemble_ac_hat(&model.loaded.scenario, &model.im, &model.gm, std::slice::from_ref(&gains))?;
    let spectrum = eig(&ac)?;
    let abscissa = spectrum.max_re();

    println!("riccati residual {:.3e} after {} iterations", oracle.residual, oracle.iterations);
    for row in to_rows(&oracle.p) {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        println!("P* {}", cells.join(" "));
    }
    println!("omega {omega:.6} (bound {:.6}), closed-loop abscissa {abscissa:.6e}", model.omega_bound);

    if let Some(dir) = out {
        let report = json!({
            "meta": meta("oracle", &model.loaded, started),
            "p_star": rows(&oracle.p),
            "k_star": rows(&oracle.k),
            "riccati_residual": oracle.residual,
            "iterations": oracle.iterations,
            "converged": oracle.converged,
            "omega": omega,
            "omega_source": omega_source,
            "omega_bound": model.omega_bound,
            "gains": gains_json(&gains),
            "ac_abscissa": abscissa,
            "ac_hurwitz": abscissa < -crate::eval::HURWITZ_MARGIN,
        });
        write_json(dir, "oracle.json", &report)?;
        let mut spec = String::from("re,im\n");
        for z in &spectrum.eigenvalues {
            spec.push_str(&format!("{:.16e},{:.16e}\n", z.re, z.im));
        }
        write(dir, "spectrum.csv", &spec)?;
        write(dir, "p_star.csv", &matrix_csv(&oracle.p))?;
    }
    Ok(if oracle.converged { EXIT_OK } else { EXIT_FAILURE })
}

fn matrix_csv(m: &Mat) -> String {
    let mut out = String::new();
    for row in to_rows(m) {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

struct LearnArgs {
    scenario: PathBuf,
    method: Option<Method>,
    out: PathBuf,
    share_from: Option<usize>,
    samples: Option<usize>,
    exec: Execution,
}

fn learn_report_json(r: &LearnReport, follower: usize, p_star: &Mat) -> Value {
    json!({
        "follower": follower,
        "method": r.method.name(),
        "converged": r.converged,
        "iterations": r.iterations,
        "confinement_resets": r.resets,
        "P": rows(&r.p),
        "K": rows(&r.k),
        "B_hat": r.b_hat.as_ref().map(rows),
        "E_hat": r.e_hat.as_ref().map(rows),
        "ranks": r.ranks,
        "p_rel_error_vs_oracle": (&r.p - p_star).norm() / p_star.norm(),
    })
}

fn iterations_csv(reports: &[(usize, LearnReport)]) -> String {
    let mut out = String::from("follower,k,p_norm,delta,step\n");
    for (i, r) in reports {
        for (k, it) in r.iterates.iter().enumerate() {
            let step = it.step.map(|s| format!("{s:.16e}")).unwrap_or_default();
            out.push_str(&format!("{i},{k},{:.16e},{:.16e},{step}\n", it.p.norm(), it.delta));
        }
    }
    out
}

fn cmd_learn(args: &LearnArgs) -> Result<i32> {
    let started = Instant::now();
    let model = prepare(&args.scenario)?;
    let file = &model.loaded.file;
    let method = args.method.unwrap_or(file.learn.method);
    let d = model.loaded.scenario.dims();
    let l = model.ap.order();

    if let Some(r) = args.share_from {
        if !method.is_reduced() {
            return Err(Error::Config(format!(
                "--share-from needs a reduced method (ipi or ivi), not {}",
                method.name()
            )));
        }
        if r == 0 || r > d.followers {
            return Err(Error::Config(format!("--share-from {r} outside 1..={}", d.followers)));
        }
    }

    let oracle = model.oracle()?;
    let explicit = file.explicit_k0((d.m, l))?;
    let (k0, k0_source) = if method.needs_stabilizing_gain() {
        match explicit {
            Some(k) => {
                let a = spectral_abscissa(&(&model.ap.y + &model.ap.j * &k))?;
                if a >= 0.0 {
                    log::warn!("K0 from the file does not stabilize Y + JK0 (abscissa {a:.3e})");
                }
                (Some(k), "file".to_string())
            }
            None => (Some(&oracle.k * AUTO_K0_SCALE), format!("auto: {AUTO_K0_SCALE} x oracle gain")),
        }
    } else {
        if explicit.is_some() {
            eprintln!("warning: K0 ignored by {}: it needs no stabilizing gain", method.name());
        }
        (None, "unused".to_string())
    };
    let (omega, omega_source) = model.omega()?;

    let mut sim_cfg = file.sim_config();
    if let Some(s) = args.samples {
        sim_cfg.samples = s;
    }
    let policy = match &k0 {
        Some(k) => Policy::Stabilizing(k.clone()),
        None => Policy::ExplorationOnly,
    };
    let (log, regs) = simulate_collection(&model.loaded.scenario, &model.im, &policy, &sim_cfg)?;

    let followers: Vec<usize> = match args.share_from {
        Some(r) => vec![r - 1],
        None => (0..d.followers).collect(),
    };
    let mut rank_rows = Vec::new();
    let mut rank_failure = None;
    for &i in &followers {
        for &eq in method.equations() {
            let rc = rank_check(&regs.followers[i], eq);
            if !rc.ok && rank_failure.is_none() {
                rank_failure = Some((i, rc));
            }
            rank_rows.push(json!({ "follower": i + 1, "check": rc }));
        }
    }
    let resolved = json!({
        "method": method.name(),
        "t0": log.t0,
        "observer_error_at_t0": log.observer_error_at_t0,
        "samples": sim_cfg.samples,
        "omega": omega,
        "omega_source": omega_source,
        "omega_bound": model.omega_bound,
        "K0": k0.as_ref().map(rows),
        "K0_source": k0_source,
        "share_from": args.share_from,
    });
    if let Some((i, rc)) = rank_failure {
        let report = json!({
            "meta": meta("learn", &model.loaded, started),
            "resolved": resolved,
            "ranks": rank_rows,
        });
        write_json(&args.out, "report.json", &report)?;
        eprintln!(
            "error: rank condition fails at follower {} ({:?}): achieved {} < required {}",
            i + 1,
            rc.equation,
            rc.achieved,
            rc.required
        );
        return Ok(EXIT_RANK);
    }

    let cfg = file.learn_config(k0);
    let results = args.exec.map(&followers, |&i| learn_follower(&regs.followers[i], method, &cfg));
    let mut reports = Vec::new();
    for (&i, r) in followers.iter().zip(results) {
        reports.push((i + 1, r?));
    }

    let gains: Vec<Gains> = match args.share_from {
        Some(_) => share_solution(&reports[0].1, d.followers, model.n(), omega, model.omega_bound)?,
        None => reports
            .iter()
            .map(|(_, r)| gain_from_k(&r.k, model.n(), omega, model.omega_bound))
            .collect::<Result<_>>()?,
    };
    let stride = file.eval.stride.max(1);
    let cl = model.closed_loop(&gains, Some(stride))?;
    let converged = reports.iter().all(|(_, r)| r.converged);

    for (i, r) in &reports {
        println!(
            "follower {i}: {} {} after {} iterations, |P-P*|/|P*| = {:.3e}",
            method.name(),
            if r.converged { "converged" } else { "did NOT converge" },
            r.iterations,
            (&r.p - &oracle.p).norm() / oracle.p.norm()
        );
    }
    println!(
        "closed loop: hurwitz {}, abscissa {:.4e}, tail error {:.3e}",
        cl.hurwitz, cl.abscissa, cl.tail_error
    );

    let report = json!({
        "meta": meta("learn", &model.loaded, started),
        "resolved": resolved,
        "converged": converged,
        "ranks": rank_rows,
        "learn": reports.iter().map(|(i, r)| learn_report_json(r, *i, &oracle.p)).collect::<Vec<_>>(),
        "gains": gains.iter().map(gains_json).collect::<Vec<_>>(),
        "closed_loop": closed_loop_json(&cl),
        "oracle": { "p_star": rows(&oracle.p), "riccati_residual": oracle.residual },
        "dims": dim_report(DimInput {
            n: d.n,
            m: d.m,
            p: d.p,
            q: d.q,
            nz: model.im.nz(),
            neighbors: max_neighbors(&model),
        }),
    });
    write_json(&args.out, "report.json", &report)?;
    write(&args.out, "iterations.csv", &iterations_csv(&reports))?;
    if let Some(tr) = &cl.trajectory {
        write(&args.out, "tracking.csv", &tr.to_csv())?;
    }
    Ok(if converged && cl.hurwitz { EXIT_OK } else { EXIT_FAILURE })
}

fn max_neighbors(model: &Model) -> usize {
    let g = &model.loaded.scenario.graph;
    (1..=g.n_followers()).map(|i| g.follower_neighbors(i).len()).max().unwrap_or(0)
}

fn mat_from_json(v: &Value, what: &str) -> Result<Mat> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone())
        .map_err(|e| Error::Config(format!("{what}: {e}")))?;
    crate::matlib::from_rows(&rows).map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn gains_from_report(path: &Path) -> Result<Vec<Gains>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))?;
    let list = v["gains"]
        .as_array()
        .ok_or_else(|| Error::Config(format!("{} has no gains", path.display())))?;
    list.iter()
        .map(|g| {
            Ok(Gains {
                kx: mat_from_json(&g["K_x"], "K_x")?,
                kz: mat_from_json(&g["K_z"], "K_z")?,
                omega: g["omega"].as_f64().ok_or_else(|| Error::Config("gain without omega".into()))?,
            })
        })
        .collect()
}

fn cmd_eval(
    path: &Path,
    from: Option<&Path>,
    out: &Path,
    sweep: Option<usize>,
    sweep_seed: u64,
    sweep_max_followers: usize,
) -> Result<i32> {
    let started = Instant::now();
    let model = prepare(path)?;
    let oracle = model.oracle()?;
    let (gains, source) = match from {
        Some(p) => (gains_from_report(p)?, p.display().to_string()),
        None => {
            let (omega, _) = model.omega()?;
            (
                vec![gain_from_p(&oracle.p, &model.ap.j, model.n(), omega, model.omega_bound)?],
                "oracle".to_string(),
            )
        }
    };
    let cl = model.closed_loop(&gains, Some(model.loaded.file.eval.stride.max(1)))?;
    println!(
        "closed loop ({source}): hurwitz {}, abscissa {:.4e}, tail error {:.3e}, settle {:?}",
        cl.hurwitz, cl.abscissa, cl.tail_error, cl.settle_time
    );
    let mut ok = cl.hurwitz;
    let mut sweep_json = Value::Null;
    if let Some(cases) = sweep {
        let results = theorem2_sweep(
            &model.loaded.scenario,
            &model.im,
            &model.ap.j,
            &oracle.p,
            cases,
            sweep_max_followers,
            sweep_seed,
            Execution::Parallel,
        );
        let mut csv = String::from("seed,followers,edges,omega,abscissa,hurwitz\n");
        let mut all = true;
        for r in results {
            let c = r?;
            all &= c.hurwitz;
            csv.push_str(&format!(
                "{},{},{},{:.16e},{:.16e},{}\n",
                c.seed, c.followers, c.edges, c.omega, c.abscissa, c.hurwitz
            ));
        }
        println!("sweep: {cases} random graphs, all hurwitz: {all}");
        write(out, "sweep.csv", &csv)?;
        sweep_json = json!({ "cases": cases, "all_hurwitz": all, "seed": sweep_seed });
        ok &= all;
    }
    let report = json!({
        "meta": meta("eval", &model.loaded, started),
        "gains_source": source,
        "gains": gains.iter().map(gains_json).collect::<Vec<_>>(),
        "closed_loop": closed_loop_json(&cl),
        "sweep": sweep_json,
    });
    write_json(out, "eval.json", &report)?;
    if let Some(tr) = &cl.trajectory {
        write(out, "tracking.csv", &tr.to_csv())?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_tables(dims: DimInput, out: Option<&Path>) -> Result<i32> {
    let rows = dim_report(dims);
    if rows.iter().any(|r| r.degenerate) {
        eprintln!("warning: a zero dimension makes these counts degenerate");
    }
    let csv = dim_report_csv(&rows);
    print!("{csv}");
    if let Some(path) = out {
        fs::write(path, &csv).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(EXIT_OK)
}
