//! Fixed-step simulation of the leader–follower network and collection of the
//! trajectory integrals every learner runs on.
//!
//! Each follower carries its plant state `x_i`, the internal-model state `ẑ_i`
//! driven by the normalised virtual error, and a distributed-observer copy
//! `η_i` of the exosystem state. The integrals of Kronecker products between
//! consecutive sample instants are carried as auxiliary states inside the
//! same RK4 step.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::build_matrices;
use crate::matlib::{duplication, kron, spectral_abscissa, tri, vecv, Mat};
use crate::plant::{InternalModel, Scenario};

/// Plant-state magnitude treated as divergence.
pub const BLOW_UP_GUARD: f64 = 1e8;

/// Relative observer accuracy that triggers automatic data collection.
pub const OBSERVER_SETTLE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Sinusoids per input component.
    pub count: usize,
    /// Bound on each component of the perturbation.
    pub amplitude: f64,
    /// Frequency range in Hz.
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            count: 10,
            amplitude: 2.0,
            fmin: 0.1,
            fmax: 10.0,
        }
    }
}

/// Deterministic sum-of-sinusoids exploration signal, one bank per follower.
#[derive(Clone, Debug)]
pub struct ExplorationNoise {
    gain: f64,
    // [follower][component] -> (angular frequency, phase)
    tones: Vec<Vec<Vec<(f64, f64)>>>,
}

impl ExplorationNoise {
    pub fn new(spec: &NoiseSpec, seed: u64, followers: usize, m: usize) -> Self {
        let gain = if spec.count == 0 {
            0.0
        } else {
            spec.amplitude / spec.count as f64
        };
        let ratio = (spec.fmax / spec.fmin).max(1.0);
        let tones = (0..followers)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                (0..m)
                    .map(|_| {
                        (0..spec.count)
                            .map(|_| {
                                let f = spec.fmin * ratio.powf(rng.random::<f64>());
                                let phase = 2.0 * PI * rng.random::<f64>();
                                (2.0 * PI * f, phase)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { gain, tones }
    }

    /// Writes follower `i`'s perturbation at time `t` into `out` (length m).
    pub fn sample_into(&self, i: usize, t: f64, out: &mut [f64]) {
        for (o, comp) in out.iter_mut().zip(&self.tones[i]) {
            *o = self.gain * comp.iter().map(|(w, ph)| (w * t + ph).sin()).sum::<f64>();
        }
    }

    pub fn sample(&self, i: usize, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.tones[i].len()];
        self.sample_into(i, t, &mut out);
        out
    }
}

/// One-shot evaluation of follower `i`'s exploration perturbation `δ_i(t)` (0-based `i`).
pub fn exploration_noise(spec: &NoiseSpec, seed: u64, i: usize, m: usize, t: f64) -> Vec<f64> {
    ExplorationNoise::new(spec, seed, i + 1, m).sample(i, t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StartTime {
    /// Smallest multiple of the sample spacing at which the observer has settled.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitialConditions {
    pub v0: Option<Vec<f64>>,
    pub x0: Option<Vec<Vec<f64>>>,
    pub z0: Option<Vec<Vec<f64>>>,
    pub eta0: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub dt: f64,
    pub t0: StartTime,
    /// Upper limit for the automatic start-time search.
    pub t0_max: f64,
    pub samples: usize,
    pub spacing: f64,
    pub mu: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub init: InitialConditions,
    /// Record a trajectory row every `stride` integration steps.
    pub trajectory_stride: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t0: StartTime::Auto,
            t0_max: 200.0,
            samples: 60,
            spacing: 0.2,
            mu: 5.0,
            noise: NoiseSpec::default(),
            seed: 7,
            init: InitialConditions::default(),
            trajectory_stride: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.spacing >= self.dt) {
            return Err(Error::Config("sample spacing must be at least dt".into()));
        }
        let ratio = self.spacing / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "sample spacing {} is not a multiple of dt {}",
                self.spacing, self.dt
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("at least one sample interval is required".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config("observer gain mu must be positive".into()));
        }
        if let StartTime::Fixed(t0) = self.t0 {
            if !(t0 >= 0.0) {
                return Err(Error::Config("t0 must be nonnegative".into()));
            }
        }
        if self.noise.count > 0 && !(self.noise.fmin > 0.0 && self.noise.fmax >= self.noise.fmin) {
            return Err(Error::Config("noise frequency range must satisfy 0 < fmin ≤ fmax".into()));
        }
        Ok(())
    }

    fn steps_per_sample(&self) -> usize {
        (self.spacing / self.dt).round() as usize
    }
}

/// Input applied while collecting data.
#[derive(Clone, Debug)]
pub enum Policy {
    /// `u_i = K0·ξ̂_i + δ_i` with `Y + J·K0` Hurwitz.
    Stabilizing(Mat),
    /// `u_i = δ_i`.
    ExplorationOnly,
}

/// `I_N ⊗ S − μ (H ⊗ I_q)`, the distributed-observer error dynamics.
pub fn observer_error_matrix(s: &Scenario, mu: f64) -> Result<Mat> {
    let gm = build_matrices(&s.graph)?;
    let n = s.graph.n_followers();
    let q = s.s.nrows();
    Ok(kron(&Mat::identity(n, n), &s.s) - kron(&gm.h, &Mat::identity(q, q)) * mu)
}

/// Classical fixed-step fourth-order Runge–Kutta on a flat state vector.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(len: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    pub(crate) fn step<F>(&mut self, mut f: F, t: f64, y: &mut [f64], h: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        f(t, y, &mut self.k1);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4);
        for i in 0..y.len() {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// `out += scale · M x`.
fn matvec_add(m: &Mat, x: &[f64], scale: f64, out: &mut [f64]) {
    for c in 0..m.ncols() {
        let xc = scale * x[c];
        if xc == 0.0 {
            continue;
        }
        for (r, o) in out.iter_mut().enumerate().take(m.nrows()) {
            *o += m[(r, c)] * xc;
        }
    }
}

/// `out[i*len(b) + j] = a_i b_j`.
fn kron_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    let nb = b.len();
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i * nb + j] = ai * bj;
        }
    }
}

/// Trajectory dump with columns `t, v[..], x{i}[..], zhat{i}[..], eta{i}[..], u{i}[..], e{i}[..]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trajectory {
    pub(crate) fn new(dims: &NetworkDims) -> Self {
        let mut header = vec!["t".to_string()];
        header.extend((0..dims.q).map(|k| format!("v[{k}]")));
        for i in 1..=dims.followers {
            header.extend((0..dims.n).map(|k| format!("x{i}[{k}]")));
            header.extend((0..dims.nz).map(|k| format!("zhat{i}[{k}]")));
            header.extend((0..dims.q).map(|k| format!("eta{i}[{k}]")));
            header.extend((0..dims.m).map(|k| format!("u{i}[{k}]")));
            header.extend((0..dims.p).map(|k| format!("e{i}[{k}]")));
        }
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct NetworkDims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub nz: usize,
    pub followers: usize,
}

impl NetworkDims {
    pub fn xi(&self) -> usize {
        self.n + self.nz
    }

    /// Per-follower block `x, ẑ, η`.
    fn block(&self) -> usize {
        self.n + self.nz + self.q
    }

    pub(crate) fn plant_len(&self) -> usize {
        self.q + self.followers * self.block()
    }

    fn acc_len(&self) -> usize {
        let l = self.xi();
        l * l + l * self.m + l * self.q + l * l + self.n * self.m + self.n * self.q
    }
}

/// Control law used by [`Network::derivative`].
pub(crate) enum Control<'a> {
    Collect {
        policy: &'a Policy,
        noise: &'a ExplorationNoise,
    },
    /// `u_i = K_x,i (Σ a_ij (x_i − x_j) + a_i0 x_i)/Σ a_ij + K_z,i ẑ_i`.
    Feedback { kx: &'a [Mat], kz: &'a [Mat] },
}

/// Joint network dynamics with precomputed neighbour lists.
pub(crate) struct Network<'a> {
    pub(crate) s: &'a Scenario,
    pub(crate) im: &'a InternalModel,
    pub(crate) dims: NetworkDims,
    mu: f64,
    // (neighbour index 0..=N, weight), normalised weights a_ij / Σ a_ij
    neighbors: Vec<Vec<(usize, f64)>>,
    in_weight: Vec<f64>,
    with_accumulators: bool,
}

pub(crate) struct Scratch {
    y_out: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    xi: Vec<f64>,
    gamma: Vec<f64>,
    ev: Vec<f64>,
}

impl<'a> Network<'a> {
    pub(crate) fn new(s: &'a Scenario, im: &'a InternalModel, mu: f64, with_accumulators: bool) -> Result<Self> {
        let d = s.dims();
        let followers = d.followers;
        let mut neighbors = Vec::with_capacity(followers);
        let mut in_weight = Vec::with_capacity(followers);
        for i in 1..=followers {
            let total = s.graph.in_weight(i);
            if total <= 0.0 {
                return Err(Error::Graph(format!(
                    "follower {i} has no in-neighbour: normalization undefined"
                )));
            }
            neighbors.push(s.graph.in_neighbors(i));
            in_weight.push(total);
        }
        Ok(Self {
            s,
            im,
            dims: NetworkDims {
                n: d.n,
                m: d.m,
                p: d.p,
                q: d.q,
                nz: im.nz(),
                followers,
            },
            mu,
            neighbors,
            in_weight,
            with_accumulators,
        })
    }

    pub(crate) fn state_len(&self) -> usize {
        self.dims.plant_len()
            + if self.with_accumulators {
                self.dims.followers * self.dims.acc_len()
            } else {
                0
            }
    }

    pub(crate) fn scratch(&self) -> Scratch {
        let d = &self.dims;
        Scratch {
            y_out: vec![vec![0.0; d.p]; d.followers + 1],
            u: vec![vec![0.0; d.m]; d.followers],
            xi: vec![0.0; d.xi()],
            gamma: vec![0.0; d.xi()],
            ev: vec![0.0; d.p],
        }
    }

    fn block_offset(&self, i: usize) -> usize {
        self.dims.q + i * self.dims.block()
    }

    fn acc_offset(&self, i: usize) -> usize {
        self.dims.plant_len() + i * self.dims.acc_len()
    }

    pub(crate) fn v<'y>(&self, y: &'y [f64]) -> &'y [f64] {
        &y[..self.dims.q]
    }

    pub(crate) fn x<'y>(&self, y: &'y [f64], i: usize) -> &'y [f64] {
        let o = self.block_offset(i);
        &y[o..o + self.dims.n]
    }

    pub(crate) fn z<'y>(&self, y: &'y [f64], i: usize) -> &'y [f64] {
        let o = self.block_offset(i) + self.dims.n;
        &y[o..o + self.dims.nz]
    }

    pub(crate) fn eta<'y>(&self, y: &'y [f64], i: usize) -> &'y [f64] {
        let o = self.block_offset(i) + self.dims.n + self.dims.nz;
        &y[o..o + self.dims.q]
    }

    pub(crate) fn xi(&self, y: &[f64], i: usize) -> Vec<f64> {
        let o = self.block_offset(i);
        y[o..o + self.dims.xi()].to_vec()
    }

    /// Tracking error `e_i = C x_i + F v`.
    pub(crate) fn tracking_error(&self, y: &[f64], i: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.dims.p];
        matvec_add(&self.s.c, self.x(y, i), 1.0, &mut e);
        matvec_add(&self.s.f, self.v(y), 1.0, &mut e);
        e
    }

    pub(crate) fn inputs(&self, t: f64, y: &[f64], control: &Control, sc: &mut Scratch) {
        let d = self.dims;
        for i in 0..d.followers {
            let u = &mut sc.u[i];
            u.iter_mut().for_each(|x| *x = 0.0);
            match control {
                Control::Collect { policy, noise } => {
                    noise.sample_into(i, t, u);
                    if let Policy::Stabilizing(k0) = policy {
                        let o = self.block_offset(i);
                        matvec_add(k0, &y[o..o + d.xi()], 1.0, u);
                    }
                }
                Control::Feedback { kx, kz } => {
                    let xi = self.x(y, i);
                    let mut rel = vec![0.0; d.n];
                    for &(j, w) in &self.neighbors[i] {
                        if j == 0 {
                            for k in 0..d.n {
                                rel[k] += w * xi[k];
                            }
                        } else {
                            let xj = self.x(y, j - 1);
                            for k in 0..d.n {
                                rel[k] += w * (xi[k] - xj[k]);
                            }
                        }
                    }
                    matvec_add(&kx[i], &rel, 1.0 / self.in_weight[i], u);
                    matvec_add(&kz[i], self.z(y, i), 1.0, u);
                }
            }
        }
    }

    pub(crate) fn derivative(&self, t: f64, y: &[f64], dy: &mut [f64], control: &Control, sc: &mut Scratch) {
        let d = self.dims;
        let (s, im) = (self.s, self.im);
        dy.iter_mut().for_each(|x| *x = 0.0);

        let v = &y[..d.q];
        matvec_add(&s.s, v, 1.0, &mut dy[..d.q]);

        // outputs: index 0 is the leader's reference y_0 = −F v
        sc.y_out[0].iter_mut().for_each(|x| *x = 0.0);
        matvec_add(&s.f, v, -1.0, &mut sc.y_out[0]);
        for i in 0..d.followers {
            let o = self.block_offset(i);
            let out = &mut sc.y_out[i + 1];
            out.iter_mut().for_each(|x| *x = 0.0);
            matvec_add(&s.c, &y[o..o + d.n], 1.0, out);
        }
        self.inputs(t, y, control, sc);

        for i in 0..d.followers {
            let o = self.block_offset(i);
            let x = &y[o..o + d.n];
            let z = &y[o + d.n..o + d.n + d.nz];
            let eta = &y[o + d.n + d.nz..o + d.block()];
            let total = self.in_weight[i];

            {
                let dx = &mut dy[o..o + d.n];
                matvec_add(&s.a, x, 1.0, dx);
                matvec_add(&s.b, &sc.u[i], 1.0, dx);
                matvec_add(&s.e[i], v, 1.0, dx);
            }

            // normalised virtual error and the neighbour-output term of γ̂_i
            sc.ev.iter_mut().for_each(|x| *x = 0.0);
            let mut nbr = vec![0.0; d.p];
            for &(j, w) in &self.neighbors[i] {
                for k in 0..d.p {
                    sc.ev[k] += w * (sc.y_out[i + 1][k] - sc.y_out[j][k]) / total;
                    nbr[k] += w * sc.y_out[j][k] / total;
                }
            }
            {
                let dz = &mut dy[o + d.n..o + d.n + d.nz];
                matvec_add(&im.g1, z, 1.0, dz);
                matvec_add(&im.g2, &sc.ev, 1.0, dz);
            }

            {
                let deta = &mut dy[o + d.n + d.nz..o + d.block()];
                matvec_add(&s.s, eta, 1.0, deta);
                for &(j, w) in &self.neighbors[i] {
                    let eta_j = if j == 0 { v } else { self.eta(y, j - 1) };
                    for k in 0..d.q {
                        deta[k] += self.mu * w * (eta_j[k] - eta[k]);
                    }
                }
            }

            if self.with_accumulators {
                sc.xi.copy_from_slice(&y[o..o + d.xi()]);
                sc.gamma.iter_mut().for_each(|x| *x = 0.0);
                matvec_add(&im.g2, &nbr, -1.0, &mut sc.gamma[d.n..]);
                let l = d.xi();
                let mut a = self.acc_offset(i);
                kron_into(&sc.xi, &sc.xi, &mut dy[a..a + l * l]);
                a += l * l;
                kron_into(&sc.xi, &sc.u[i], &mut dy[a..a + l * d.m]);
                a += l * d.m;
                kron_into(&sc.xi, eta, &mut dy[a..a + l * d.q]);
                a += l * d.q;
                kron_into(&sc.xi, &sc.gamma, &mut dy[a..a + l * l]);
                a += l * l;
                kron_into(x, &sc.u[i], &mut dy[a..a + d.n * d.m]);
                a += d.n * d.m;
                kron_into(x, eta, &mut dy[a..a + d.n * d.q]);
            }
        }
    }

    pub(crate) fn initial_state(&self, init: &InitialConditions) -> Result<Vec<f64>> {
        let d = self.dims;
        let mut y = vec![0.0; self.state_len()];
        let set = |y: &mut [f64], off: usize, vals: &[f64], len: usize, what: &str| -> Result<()> {
            if vals.len() != len {
                return Err(Error::Config(format!(
                    "initial {what} has length {}, expected {len}",
                    vals.len()
                )));
            }
            y[off..off + len].copy_from_slice(vals);
            Ok(())
        };
        match &init.v0 {
            Some(v0) => set(&mut y, 0, v0, d.q, "v")?,
            None => y[0] = 1.0,
        }
        let per = |list: &Option<Vec<Vec<f64>>>, what: &str| -> Result<()> {
            if let Some(l) = list {
                if l.len() != d.followers {
                    return Err(Error::Config(format!(
                        "initial {what} given for {} followers, expected {}",
                        l.len(),
                        d.followers
                    )));
                }
            }
            Ok(())
        };
        per(&init.x0, "x")?;
        per(&init.z0, "zhat")?;
        per(&init.eta0, "eta")?;
        for i in 0..d.followers {
            let o = self.block_offset(i);
            if let Some(x0) = &init.x0 {
                set(&mut y, o, &x0[i], d.n, "x")?;
            }
            if let Some(z0) = &init.z0 {
                set(&mut y, o + d.n, &z0[i], d.nz, "zhat")?;
            }
            if let Some(e0) = &init.eta0 {
                set(&mut y, o + d.n + d.nz, &e0[i], d.q, "eta")?;
            }
        }
        Ok(y)
    }

    pub(crate) fn plant_norm(&self, y: &[f64]) -> f64 {
        y[..self.dims.plant_len()]
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    pub(crate) fn observer_error(&self, y: &[f64]) -> f64 {
        let v = self.v(y);
        (0..self.dims.followers)
            .map(|i| {
                self.eta(y, i)
                    .iter()
                    .zip(v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn trajectory_row(&self, t: f64, y: &[f64], sc: &Scratch) -> Vec<f64> {
        let mut row = vec![t];
        row.extend_from_slice(self.v(y));
        for i in 0..self.dims.followers {
            row.extend_from_slice(self.x(y, i));
            row.extend_from_slice(self.z(y, i));
            row.extend_from_slice(self.eta(y, i));
            row.extend_from_slice(&sc.u[i]);
            row.extend(self.tracking_error(y, i));
        }
        row
    }

    fn clear_accumulators(&self, y: &mut [f64]) {
        let start = self.dims.plant_len();
        y[start..].iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Raw samples and per-interval integrals for one follower.
#[derive(Clone, Debug, PartialEq)]
pub struct FollowerLog {
    /// `ξ̂_i(t_j)`, `j = 0..=s`.
    pub xi: Vec<Vec<f64>>,
    pub xi_xi: Vec<Vec<f64>>,
    pub xi_u: Vec<Vec<f64>>,
    pub xi_eta: Vec<Vec<f64>>,
    pub xi_gamma: Vec<Vec<f64>>,
    pub x_u: Vec<Vec<f64>>,
    pub x_eta: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataLog {
    pub dims: NetworkDims,
    pub t0: f64,
    pub times: Vec<f64>,
    /// `max_i |η_i − v|` at `t0`.
    pub observer_error_at_t0: f64,
    /// `|v(t0)|`.
    pub leader_norm_at_t0: f64,
    pub followers: Vec<FollowerLog>,
    pub trajectory: Option<Trajectory>,
}

/// Dimensions shared by every regressor block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RegressorDims {
    pub n: usize,
    pub nz: usize,
    pub m: usize,
    pub q: usize,
}

impl RegressorDims {
    pub fn xi(&self) -> usize {
        self.n + self.nz
    }
}

/// The data one follower's learners see: `δ_ξ̂` and the `Γ` integral matrices
/// (one row per sample interval).
#[derive(Clone, Debug, PartialEq)]
pub struct FollowerRegressors {
    pub dims: RegressorDims,
    pub delta_xi: Mat,
    pub xi_xi: Mat,
    pub xi_u: Mat,
    pub xi_eta: Mat,
    pub xi_gamma: Mat,
    pub x_u: Mat,
    pub x_eta: Mat,
    /// `Γ_ξ̂ξ̂·M`, the integrated `vecv(ξ̂)` rows.
    pub hat_xi: Mat,
}

impl FollowerRegressors {
    pub fn samples(&self) -> usize {
        self.delta_xi.nrows()
    }

    /// Assembles regressors from per-interval rows, validating every width.
    pub fn from_rows(dims: RegressorDims, xi: &[Vec<f64>], rows: &IntervalRows) -> Result<Self> {
        let s = xi.len().saturating_sub(1);
        let l = dims.xi();
        let build = |data: &[Vec<f64>], width: usize, what: &str| -> Result<Mat> {
            if data.len() != s {
                return Err(Error::Dimension(format!(
                    "{what}: {} rows for {s} intervals",
                    data.len()
                )));
            }
            if data.iter().any(|r| r.len() != width) {
                return Err(Error::Dimension(format!("{what}: rows must have width {width}")));
            }
            Ok(DMatrix::from_fn(s, width, |r, c| data[r][c]))
        };
        if xi.iter().any(|x| x.len() != l) {
            return Err(Error::Dimension("sampled ξ̂ has wrong length".into()));
        }
        let deltas: Vec<Vec<f64>> = xi
            .windows(2)
            .map(|w| {
                let a = vecv(&w[1]);
                let b = vecv(&w[0]);
                (a - b).as_slice().to_vec()
            })
            .collect();
        let delta_xi = build(&deltas, tri(l), "delta_xi")?;
        let xi_xi = build(&rows.xi_xi, l * l, "xi_xi")?;
        let hat_xi = &xi_xi * duplication(l);
        Ok(Self {
            dims,
            delta_xi,
            xi_u: build(&rows.xi_u, l * dims.m, "xi_u")?,
            xi_eta: build(&rows.xi_eta, l * dims.q, "xi_eta")?,
            xi_gamma: build(&rows.xi_gamma, l * l, "xi_gamma")?,
            x_u: build(&rows.x_u, dims.n * dims.m, "x_u")?,
            x_eta: build(&rows.x_eta, dims.n * dims.q, "x_eta")?,
            xi_xi,
            hat_xi,
        })
    }
}

/// Per-interval integral rows, in the order of the `Γ` blocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntervalRows {
    pub xi_xi: Vec<Vec<f64>>,
    pub xi_u: Vec<Vec<f64>>,
    pub xi_eta: Vec<Vec<f64>>,
    pub xi_gamma: Vec<Vec<f64>>,
    pub x_u: Vec<Vec<f64>>,
    pub x_eta: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorSet {
    pub followers: Vec<FollowerRegressors>,
}

pub fn finalize_regressors(log: &DataLog) -> Result<RegressorSet> {
    let d = log.dims;
    let dims = RegressorDims {
        n: d.n,
        nz: d.nz,
        m: d.m,
        q: d.q,
    };
    let followers = log
        .followers
        .iter()
        .map(|f| {
            let rows = IntervalRows {
                xi_xi: f.xi_xi.clone(),
                xi_u: f.xi_u.clone(),
                xi_eta: f.xi_eta.clone(),
                xi_gamma: f.xi_gamma.clone(),
                x_u: f.x_u.clone(),
                x_eta: f.x_eta.clone(),
            };
            FollowerRegressors::from_rows(dims, &f.xi, &rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegressorSet { followers })
}

/// Runs the network under the data-collection policy and returns the raw log
/// together with the assembled regressors.
pub fn simulate_collection(
    s: &Scenario,
    im: &InternalModel,
    policy: &Policy,
    cfg: &SimConfig,
) -> Result<(DataLog, RegressorSet)> {
    cfg.validate()?;
    let abscissa = spectral_abscissa(&observer_error_matrix(s, cfg.mu)?)?;
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz {
            abscissa,
            context: format!("observer error dynamics with mu = {}", cfg.mu),
        });
    }
    let net = Network::new(s, im, cfg.mu, true)?;
    let d = net.dims;
    if let Policy::Stabilizing(k0) = policy {
        if k0.shape() != (d.m, d.xi()) {
            return Err(Error::Dimension(format!(
                "K0 is {}x{}, expected {}x{}",
                k0.nrows(),
                k0.ncols(),
                d.m,
                d.xi()
            )));
        }
    }
    let noise = ExplorationNoise::new(&cfg.noise, cfg.seed, d.followers, d.m);
    let control = Control::Collect {
        policy,
        noise: &noise,
    };
    let mut y = net.initial_state(&cfg.init)?;
    let mut sc = net.scratch();
    let mut rk = Rk4::new(y.len());
    let per_sample = cfg.steps_per_sample();
    let dt = cfg.dt;
    let mut trajectory = cfg.trajectory_stride.map(|_| Trajectory::new(&d));

    let mut step: u64 = 0;
    let time = |step: u64| step as f64 * dt;
    let mut advance = |y: &mut Vec<f64>, step: &mut u64, sc: &mut Scratch, traj: &mut Option<Trajectory>| -> Result<()> {
        if let (Some(tr), Some(stride)) = (traj.as_mut(), cfg.trajectory_stride) {
            if step.is_multiple_of(stride.max(1) as u64) {
                net.inputs(time(*step), y, &control, sc);
                tr.rows.push(net.trajectory_row(time(*step), y, sc));
            }
        }
        let t = time(*step);
        rk.step(|tt, yy, dd| net.derivative(tt, yy, dd, &control, sc), t, y, dt);
        *step += 1;
        if net.plant_norm(y) > BLOW_UP_GUARD || y.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { t: time(*step) });
        }
        Ok(())
    };

    // warm-up until t0
    match cfg.t0 {
        StartTime::Fixed(t0) => {
            let target = (t0 / dt).round() as u64;
            while step < target {
                advance(&mut y, &mut step, &mut sc, &mut trajectory)?;
            }
        }
        StartTime::Auto => loop {
            let v_norm = net.v(&y).iter().map(|x| x * x).sum::<f64>().sqrt();
            if net.observer_error(&y) < OBSERVER_SETTLE_TOL * (1.0 + v_norm) {
                break;
            }
            if time(step) > cfg.t0_max {
                return Err(Error::Config(format!(
                    "observer did not settle before t0_max = {}",
                    cfg.t0_max
                )));
            }
            for _ in 0..per_sample {
                advance(&mut y, &mut step, &mut sc, &mut trajectory)?;
            }
        },
    }

    let t0 = time(step);
    let observer_error_at_t0 = net.observer_error(&y);
    let leader_norm_at_t0 = net.v(&y).iter().map(|x| x * x).sum::<f64>().sqrt();
    net.clear_accumulators(&mut y);
    let mut logs: Vec<FollowerLog> = (0..d.followers)
        .map(|i| FollowerLog {
            xi: vec![net.xi(&y, i)],
            xi_xi: Vec::new(),
            xi_u: Vec::new(),
            xi_eta: Vec::new(),
            xi_gamma: Vec::new(),
            x_u: Vec::new(),
            x_eta: Vec::new(),
        })
        .collect();
    let mut times = vec![t0];

    let l = d.xi();
    for _ in 0..cfg.samples {
        for _ in 0..per_sample {
            advance(&mut y, &mut step, &mut sc, &mut trajectory)?;
        }
        times.push(time(step));
        for (i, log) in logs.iter_mut().enumerate() {
            log.xi.push(net.xi(&y, i));
            let mut a = net.acc_offset(i);
            let mut take = |len: usize| {
                let out = y[a..a + len].to_vec();
                a += len;
                out
            };
            log.xi_xi.push(take(l * l));
            log.xi_u.push(take(l * d.m));
            log.xi_eta.push(take(l * d.q));
            log.xi_gamma.push(take(l * l));
            log.x_u.push(take(d.n * d.m));
            log.x_eta.push(take(d.n * d.q));
        }
        net.clear_accumulators(&mut y);
    }

    let log = DataLog {
        dims: d,
        t0,
        times,
        observer_error_at_t0,
        leader_norm_at_t0,
        followers: logs,
        trajectory,
    };
    let reg = finalize_regressors(&log)?;
    Ok((log, reg))
}

/// Per-interval constant signals for [`exact_regressors`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExactInputs {
    pub u: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
}

impl ExactInputs {
    /// Uniform random levels in `[-1, 1)`; `γ` only excites the internal-model block.
    pub fn random(seed: u64, samples: usize, m: usize, n: usize, nz: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = (0..samples)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let gamma = (0..samples)
            .map(|_| {
                let mut g = vec![0.0; n + nz];
                for x in &mut g[n..] {
                    *x = rng.random_range(-1.0..1.0);
                }
                g
            })
            .collect();
        Self { u, gamma }
    }
}

/// Regressors of `ξ̇ = Yξ + Ju + Ēη + γ`, `η̇ = Sη` with `u`, `γ` constant on
/// each interval, integrated in closed form through the matrix exponential of
/// the lifted system `d/dt (w⊗w) = (G⊗I + I⊗G)(w⊗w)`, `w = [ξ; η; 1]`.
#[allow(clippy::too_many_arguments)]
pub fn exact_regressors(
    y: &Mat,
    j: &Mat,
    e_aug: &Mat,
    s: &Mat,
    n: usize,
    xi0: &[f64],
    eta0: &[f64],
    h: f64,
    inputs: &ExactInputs,
) -> Result<FollowerRegressors> {
    let l = y.nrows();
    let (m, q) = (j.ncols(), s.nrows());
    if j.nrows() != l || e_aug.shape() != (l, q) || xi0.len() != l || eta0.len() != q || n > l {
        return Err(Error::Dimension("exact_regressors: inconsistent shapes".into()));
    }
    if inputs.u.len() != inputs.gamma.len() {
        return Err(Error::Dimension("exact_regressors: u and gamma lengths differ".into()));
    }
    let big = l + q + 1;
    let lift = big * big;
    let mut w = vec![0.0; big];
    w[..l].copy_from_slice(xi0);
    w[l..l + q].copy_from_slice(eta0);
    w[big - 1] = 1.0;

    let mut xi = vec![xi0.to_vec()];
    let mut rows = IntervalRows::default();
    for (u, gamma) in inputs.u.iter().zip(&inputs.gamma) {
        if u.len() != m || gamma.len() != l {
            return Err(Error::Dimension("exact_regressors: bad input length".into()));
        }
        let mut g = Mat::zeros(big, big);
        g.view_mut((0, 0), (l, l)).copy_from(y);
        g.view_mut((0, l), (l, q)).copy_from(e_aug);
        g.view_mut((l, l), (q, q)).copy_from(s);
        let drive = j * DMatrix::from_column_slice(m, 1, u) + DMatrix::from_column_slice(l, 1, gamma);
        g.view_mut((0, big - 1), (l, 1)).copy_from(&drive);

        let id = Mat::identity(big, big);
        let k = kron(&g, &id) + kron(&id, &g);
        let mut aug = Mat::zeros(2 * lift, 2 * lift);
        aug.view_mut((0, 0), (lift, lift)).copy_from(&(k * h));
        aug.view_mut((0, lift), (lift, lift)).copy_from(&(Mat::identity(lift, lift) * h));
        let e = aug.exp();
        let ww = kron(
            &DMatrix::from_column_slice(big, 1, &w),
            &DMatrix::from_column_slice(big, 1, &w),
        );
        let integral = e.view((0, lift), (lift, lift)) * &ww;
        let at = |a: usize, b: usize| integral[a * big + b];

        let mut xixi = vec![0.0; l * l];
        let mut xiu = vec![0.0; l * m];
        let mut xieta = vec![0.0; l * q];
        let mut xigamma = vec![0.0; l * l];
        for a in 0..l {
            let xi_int = at(a, big - 1);
            for b in 0..l {
                xixi[a * l + b] = at(a, b);
                xigamma[a * l + b] = xi_int * gamma[b];
            }
            for b in 0..m {
                xiu[a * m + b] = xi_int * u[b];
            }
            for b in 0..q {
                xieta[a * q + b] = at(a, l + b);
            }
        }
        rows.x_u.push(xiu[..n * m].to_vec());
        rows.x_eta.push(xieta[..n * q].to_vec());
        rows.xi_xi.push(xixi);
        rows.xi_u.push(xiu);
        rows.xi_eta.push(xieta);
        rows.xi_gamma.push(xigamma);

        let w_next = (g * h).exp() * DMatrix::from_column_slice(big, 1, &w);
        w = w_next.as_slice().to_vec();
        xi.push(w[..l].to_vec());
    }
    let dims = RegressorDims {
        n,
        nz: l - n,
        m,
        q,
    };
    FollowerRegressors::from_rows(dims, &xi, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::{vec as vec_of, vecs};
    use crate::plant::{build_augmented, build_internal_model, minimal_polynomial};

    fn d1_model() -> (Scenario, InternalModel) {
        let s = Scenario::d1();
        let mp = minimal_polynomial(&s.s, None).unwrap();
        let im = build_internal_model(&mp, 1).unwrap();
        (s, im)
    }

    fn short_cfg() -> SimConfig {
        SimConfig {
            samples: 20,
            spacing: 0.1,
            dt: 2e-3,
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_amplitude_noise_vanishes() {
        let spec = NoiseSpec {
            amplitude: 0.0,
            ..NoiseSpec::default()
        };
        for t in [0.0, 0.3, 7.1] {
            assert_eq!(exploration_noise(&spec, 3, 1, 2, t), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let spec = NoiseSpec::default();
        let a = ExplorationNoise::new(&spec, 11, 3, 1);
        let b = ExplorationNoise::new(&spec, 11, 3, 1);
        let c = ExplorationNoise::new(&spec, 12, 3, 1);
        let mut differs = false;
        for k in 0..500 {
            let t = k as f64 * 0.013;
            for i in 0..3 {
                assert_eq!(a.sample(i, t), b.sample(i, t));
                assert!(a.sample(i, t)[0].abs() <= spec.amplitude + 1e-12);
                differs |= a.sample(i, t) != c.sample(i, t);
            }
        }
        assert!(differs);
        assert_ne!(a.sample(0, 0.5), a.sample(1, 0.5));
    }

    #[test]
    fn leader_stays_on_unit_circle() {
        let (s, im) = d1_model();
        let net = Network::new(&s, &im, 5.0, false).unwrap();
        let policy = Policy::ExplorationOnly;
        let noise = ExplorationNoise::new(&NoiseSpec::default(), 1, 3, 1);
        let control = Control::Collect {
            policy: &policy,
            noise: &noise,
        };
        let mut y = net
            .initial_state(&InitialConditions {
                v0: Some(vec![1.0, 0.0]),
                ..Default::default()
            })
            .unwrap();
        let mut sc = net.scratch();
        let mut rk = Rk4::new(y.len());
        let dt = 1e-3;
        let mut worst: f64 = 0.0;
        for k in 0..50_000 {
            rk.step(|t, yy, dd| net.derivative(t, yy, dd, &control, &mut sc), k as f64 * dt, &mut y, dt);
            let r = net.v(&y).iter().map(|x| x * x).sum::<f64>().sqrt();
            worst = worst.max((r - 1.0).abs());
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn observer_synchronises() {
        let (s, im) = d1_model();
        let net = Network::new(&s, &im, 5.0, false).unwrap();
        let policy = Policy::ExplorationOnly;
        let noise = ExplorationNoise::new(&NoiseSpec::default(), 1, 3, 1);
        let control = Control::Collect {
            policy: &policy,
            noise: &noise,
        };
        let mut y = net
            .initial_state(&InitialConditions {
                v0: Some(vec![1.0, 0.0]),
                eta0: Some(vec![vec![-2.0, 1.0], vec![0.5, 3.0], vec![0.0, -1.0]]),
                ..Default::default()
            })
            .unwrap();
        assert!(net.observer_error(&y) > 1.0);
        let mut sc = net.scratch();
        let mut rk = Rk4::new(y.len());
        let dt = 1e-3;
        for k in 0..10_000 {
            rk.step(|t, yy, dd| net.derivative(t, yy, dd, &control, &mut sc), k as f64 * dt, &mut y, dt);
        }
        assert!(net.observer_error(&y) < 1e-4);
        let abscissa = spectral_abscissa(&observer_error_matrix(&s, 5.0).unwrap()).unwrap();
        assert!(abscissa < 0.0);
    }

    #[test]
    fn zero_excitation_gives_zero_integrals() {
        let (s, im) = d1_model();
        let cfg = SimConfig {
            noise: NoiseSpec {
                amplitude: 0.0,
                ..NoiseSpec::default()
            },
            init: InitialConditions {
                v0: Some(vec![0.0, 0.0]),
                ..Default::default()
            },
            t0: StartTime::Fixed(0.0),
            ..short_cfg()
        };
        let k0 = Mat::zeros(1, 4);
        let (log, reg) = simulate_collection(&s, &im, &Policy::Stabilizing(k0), &cfg).unwrap();
        assert_eq!(log.times.len(), 21);
        for f in &reg.followers {
            for m in [&f.xi_xi, &f.xi_u, &f.xi_eta, &f.xi_gamma, &f.x_u, &f.x_eta, &f.delta_xi] {
                assert!(m.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn constant_state_regressor_rows() {
        let dims = RegressorDims { n: 1, nz: 1, m: 1, q: 1 };
        let c = vec![2.0, -1.0];
        let h = 0.5;
        let rows = IntervalRows {
            xi_xi: vec![vec![4.0 * h, -2.0 * h, -2.0 * h, 1.0 * h]],
            xi_u: vec![vec![0.0, 0.0]],
            xi_eta: vec![vec![0.0, 0.0]],
            xi_gamma: vec![vec![0.0; 4]],
            x_u: vec![vec![0.0]],
            x_eta: vec![vec![0.0]],
        };
        let reg = FollowerRegressors::from_rows(dims, &[c.clone(), c.clone()], &rows).unwrap();
        assert!(reg.delta_xi.iter().all(|&x| x == 0.0));
        let cc = kron(&Mat::from_column_slice(2, 1, &c), &Mat::from_column_slice(2, 1, &c));
        assert!((reg.xi_xi.row(0).transpose() - cc * h).amax() < 1e-15);
        assert!((reg.hat_xi.row(0).transpose() - vecv(&c) * h).amax() < 1e-15);
    }

    #[test]
    fn collection_is_deterministic_with_auto_t0() {
        let (s, im) = d1_model();
        let ap = build_augmented(&s, &im).unwrap();
        let k0 = -ap.j.transpose() * 2.0;
        let cfg = short_cfg();
        let (a, ra) = simulate_collection(&s, &im, &Policy::Stabilizing(k0.clone()), &cfg).unwrap();
        let (b, rb) = simulate_collection(&s, &im, &Policy::Stabilizing(k0), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(a.observer_error_at_t0 < OBSERVER_SETTLE_TOL * (1.0 + a.leader_norm_at_t0));
        let steps = a.t0 / cfg.spacing;
        assert!((steps - steps.round()).abs() < 1e-9);
        for f in &ra.followers {
            assert!((&f.xi_xi * duplication(4) - &f.hat_xi).amax() < 1e-10);
        }
    }

    /// With the true model, the collected data satisfy the integral identity
    /// `δ·vecs(P) = Γ̂·vecs(YᵀP+PY) + 2Γ_ξu·vec(JᵀP) + 2Γ_ξη·vec([E;0]ᵀP) + 2Γ_ξγ·vec(P)` for any symmetric P.
    #[test]
    fn integral_identity_holds_on_collected_data() {
        let (s, im) = d1_model();
        let ap = build_augmented(&s, &im).unwrap();
        let p = crate::matlib::mat(
            4,
            4,
            &[3.0, 0.5, -0.2, 0.1, 0.5, 2.0, 0.3, 0.0, -0.2, 0.3, 1.5, -0.4, 0.1, 0.0, -0.4, 2.5],
        );
        let k0 = -ap.j.transpose() * 2.0;
        let (_, reg) = simulate_collection(&s, &im, &Policy::Stabilizing(k0), &SimConfig::default()).unwrap();
        let h = ap.y.transpose() * &p + &p * &ap.y;
        for (i, f) in reg.followers.iter().enumerate() {
            let mut e_aug = Mat::zeros(4, 2);
            e_aug.view_mut((0, 0), (2, 2)).copy_from(&s.e[i]);
            let lhs = &f.delta_xi * vecs(&p).unwrap();
            let rhs = &f.hat_xi * vecs(&h).unwrap()
                + &f.xi_u * vec_of(&(ap.j.transpose() * &p)) * 2.0
                + &f.xi_eta * vec_of(&(e_aug.transpose() * &p)) * 2.0
                + &f.xi_gamma * vec_of(&p) * 2.0;
            let err = (&lhs - &rhs).amax() / lhs.amax();
            assert!(err < 1e-6, "follower {i}: relative error {err:.3e}");
        }
    }

    #[test]
    fn accumulators_converge_at_fourth_order() {
        let (s, im) = d1_model();
        let ap = build_augmented(&s, &im).unwrap();
        let k0 = -ap.j.transpose() * 2.0;
        let base = SimConfig {
            t0: StartTime::Fixed(0.0),
            samples: 5,
            spacing: 0.4,
            noise: NoiseSpec {
                count: 3,
                amplitude: 1.0,
                fmin: 0.1,
                fmax: 0.5,
            },
            init: InitialConditions {
                eta0: Some(vec![vec![1.0, 0.0]; 3]),
                x0: Some(vec![vec![0.5, -0.5]; 3]),
                ..Default::default()
            },
            ..SimConfig::default()
        };
        let run = |dt: f64| {
            let cfg = SimConfig { dt, ..base.clone() };
            simulate_collection(&s, &im, &Policy::Stabilizing(k0.clone()), &cfg).unwrap().1
        };
        let (r1, r2, r3) = (run(0.04), run(0.02), run(0.01));
        let d12 = (&r1.followers[0].xi_xi - &r2.followers[0].xi_xi).amax();
        let d23 = (&r2.followers[0].xi_xi - &r3.followers[0].xi_xi).amax();
        let ratio = d12 / d23;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn exact_regressors_match_scalar_closed_form() {
        // scalar lift: ξ̇ = −ξ + u + η + γ, η̇ = 0
        let y = Mat::from_element(1, 1, -1.0);
        let j = Mat::from_element(1, 1, 1.0);
        let e = Mat::from_element(1, 1, 1.0);
        let s = Mat::zeros(1, 1);
        let inputs = ExactInputs {
            u: vec![vec![0.5], vec![-1.0]],
            gamma: vec![vec![0.25], vec![0.0]],
        };
        let reg = exact_regressors(&y, &j, &e, &s, 1, &[1.0], &[2.0], 0.5, &inputs).unwrap();
        // first interval: ξ(t) = c + (1 − c)e^{−t}, c = 2.75
        let c = 2.75;
        let h: f64 = 0.5;
        let int_xi = c * h + (1.0 - c) * (1.0 - (-h).exp());
        let int_xi2 = c * c * h + 2.0 * c * (1.0 - c) * (1.0 - (-h).exp())
            + (1.0 - c).powi(2) * (1.0 - (-2.0 * h).exp()) / 2.0;
        assert!((reg.xi_xi[(0, 0)] - int_xi2).abs() < 1e-12);
        assert!((reg.xi_u[(0, 0)] - 0.5 * int_xi).abs() < 1e-12);
        assert!((reg.xi_eta[(0, 0)] - 2.0 * int_xi).abs() < 1e-12);
        assert!((reg.xi_gamma[(0, 0)] - 0.25 * int_xi).abs() < 1e-12);
        let xi1 = c + (1.0 - c) * (-h).exp();
        assert!((reg.delta_xi[(0, 0)] - (xi1 * xi1 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn trajectory_header_layout() {
        let (s, im) = d1_model();
        let cfg = SimConfig {
            trajectory_stride: Some(50),
            ..short_cfg()
        };
        let (log, _) = simulate_collection(&s, &im, &Policy::ExplorationOnly, &cfg).unwrap();
        let tr = log.trajectory.unwrap();
        assert_eq!(tr.header[0], "t");
        assert_eq!(tr.header[1], "v[0]");
        assert_eq!(tr.header[3], "x1[0]");
        assert_eq!(tr.header[5], "zhat1[0]");
        assert_eq!(tr.header[7], "eta1[0]");
        assert_eq!(tr.header[9], "u1[0]");
        assert_eq!(tr.header[10], "e1[0]");
        assert_eq!(tr.header.len(), 3 + 3 * 8);
        assert!(tr.rows.iter().all(|r| r.len() == tr.header.len()));
        assert!(tr.to_csv().lines().count() == tr.rows.len() + 1);
    }

    #[test]
    fn rejects_bad_config() {
        let (s, im) = d1_model();
        let bad = SimConfig {
            spacing: 0.0015,
            dt: 1e-3,
            ..SimConfig::default()
        };
        assert!(simulate_collection(&s, &im, &Policy::ExplorationOnly, &bad).is_err());
        let bad_mu = SimConfig {
            mu: 0.0,
            ..SimConfig::default()
        };
        assert!(simulate_collection(&s, &im, &Policy::ExplorationOnly, &bad_mu).is_err());
    }

    #[test]
    fn divergence_guard_trips() {
        let (s, im) = d1_model();
        // destabilising feedback
        let k0 = crate::matlib::mat(1, 4, &[50.0, 50.0, 0.0, 0.0]);
        let cfg = SimConfig {
            t0: StartTime::Fixed(0.0),
            ..short_cfg()
        };
        assert!(matches!(
            simulate_collection(&s, &im, &Policy::Stabilizing(k0), &cfg),
            Err(Error::Divergence { .. })
        ));
    }
}
