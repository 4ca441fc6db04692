//! Riccati learners: the model-based Kleinman oracle and the four data-driven
//! schemes (policy and value iteration, each with an identification-reduced
//! variant), plus rank diagnostics and gain assembly.
//!
//! The data-driven learners only ever see a [`FollowerRegressors`] block.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlib::{
    duplication, equilibrate_columns, hcat, kron, lstsq, rank_tol, solve_lyapunov, spectral_abscissa,
    tri, unvecs, vec, vecs, LstsqFactor, Mat, Vector,
};
use crate::par::Execution;
use crate::plant::AugmentedPlant;
use crate::sim::{FollowerRegressors, RegressorDims, RegressorSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pi,
    Vi,
    Ipi,
    Ivi,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pi => "pi",
            Method::Vi => "vi",
            Method::Ipi => "ipi",
            Method::Ivi => "ivi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pi" => Some(Method::Pi),
            "vi" => Some(Method::Vi),
            "ipi" => Some(Method::Ipi),
            "ivi" => Some(Method::Ivi),
            _ => None,
        }
    }

    /// Uses an initially stabilizing gain.
    pub fn needs_stabilizing_gain(self) -> bool {
        matches!(self, Method::Pi | Method::Ipi)
    }

    pub fn is_reduced(self) -> bool {
        matches!(self, Method::Ipi | Method::Ivi)
    }

    /// Linear systems this method solves, in order.
    pub fn equations(self) -> &'static [Equation] {
        match self {
            Method::Pi => &[Equation::Pi],
            Method::Vi => &[Equation::Vi],
            Method::Ipi | Method::Ivi => &[Equation::Identify, Equation::Reduced],
        }
    }
}

/// The data equations whose column rank is checked before solving.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Pi,
    Vi,
    Identify,
    Reduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RankCheck {
    pub equation: Equation,
    pub required: usize,
    pub achieved: usize,
    pub ok: bool,
}

/// Column-rank requirements on the integral matrices:
/// `[Γ_ξξ, Γ_ξu, Γ_ξη]` for PI/VI, `[Γ_ξξ, Γ_xu, Γ_xη]` for identification,
/// `Γ_ξξ` for the reduced equations.
pub fn rank_check(reg: &FollowerRegressors, equation: Equation) -> RankCheck {
    let d = reg.dims;
    let (l, t) = (d.xi(), tri(d.xi()));
    let (required, block) = match equation {
        Equation::Pi | Equation::Vi => (t + l * (d.m + d.q), hcat(&[&reg.xi_xi, &reg.xi_u, &reg.xi_eta])),
        Equation::Identify => (t + d.n * (d.m + d.q), hcat(&[&reg.xi_xi, &reg.x_u, &reg.x_eta])),
        Equation::Reduced => (t, reg.xi_xi.clone()),
    };
    let achieved = rank_tol(&equilibrate_columns(&block)).rank;
    RankCheck {
        equation,
        required,
        achieved,
        ok: achieved >= required,
    }
}

fn require_rank(reg: &FollowerRegressors, equation: Equation) -> Result<RankCheck> {
    let rc = rank_check(reg, equation);
    if !rc.ok {
        return Err(Error::RankDeficient {
            required: rc.required,
            achieved: rc.achieved,
        });
    }
    Ok(rc)
}

/// `|YᵀP + PY − PJJᵀP + I|_F`.
pub fn riccati_residual(ap: &AugmentedPlant, p: &Mat) -> f64 {
    let l = ap.order();
    let pj = p * &ap.j;
    (ap.y.transpose() * p + p * &ap.y - &pj * pj.transpose() + Mat::identity(l, l)).norm()
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub p: Mat,
    pub k: Mat,
    /// `P_k`, `k = 0, 1, …`.
    pub history: Vec<Mat>,
    /// `K_{k+1} = −JᵀP_k`, aligned with `history`.
    pub gains: Vec<Mat>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

pub const ORACLE_TOL: f64 = 1e-8;

/// Kleinman's iteration: `(Y+JK_k)ᵀP_k + P_k(Y+JK_k) + I + K_kᵀK_k = 0`,
/// `K_{k+1} = −JᵀP_k`, from a gain with `Y + JK_0` Hurwitz.
pub fn kleinman_oracle(ap: &AugmentedPlant, k0: &Mat, tol: f64, max_iter: usize) -> Result<OracleResult> {
    let l = ap.order();
    let m = ap.j.ncols();
    if k0.shape() != (m, l) {
        return Err(Error::Dimension(format!(
            "K0 is {}x{}, expected {m}x{l}",
            k0.nrows(),
            k0.ncols()
        )));
    }
    let abscissa = spectral_abscissa(&(&ap.y + &ap.j * k0))?;
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz {
            abscissa,
            context: "Y + J·K0 must be Hurwitz (initially stabilizing gain)".into(),
        });
    }
    let mut k = k0.clone();
    let mut history: Vec<Mat> = Vec::new();
    let mut gains = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let ak = &ap.y + &ap.j * &k;
        let q = Mat::identity(l, l) + k.transpose() * &k;
        let p = solve_lyapunov(&ak, &q)?;
        k = -ap.j.transpose() * &p;
        let done = history.last().is_some_and(|prev| (&p - prev).norm() < tol);
        history.push(p);
        gains.push(k.clone());
        if done {
            converged = true;
            break;
        }
    }
    let p = history.last().cloned().unwrap_or_else(|| Mat::zeros(l, l));
    Ok(OracleResult {
        residual: riccati_residual(ap, &p),
        iterations: history.len(),
        p,
        k,
        history,
        gains,
        converged,
    })
}

/// A gain with `Y + JK` Hurwitz, found by solving Riccati equations on the
/// shifted pair `(Y − cI, J)` while walking `c` down to the point where the
/// gain also stabilizes `Y`.
pub fn stabilizing_gain(ap: &AugmentedPlant) -> Result<Mat> {
    let l = ap.order();
    let m = ap.j.ncols();
    let mut k = Mat::zeros(m, l);
    let mut alpha = spectral_abscissa(&ap.y)?;
    let mut c = alpha.max(0.0) + 1.0;
    for _ in 0..200 {
        if alpha < 0.0 {
            return Ok(k);
        }
        let shifted = AugmentedPlant {
            y: &ap.y - Mat::identity(l, l) * c,
            j: ap.j.clone(),
        };
        k = kleinman_oracle(&shifted, &k, 1e-10, 200)?.k;
        alpha = spectral_abscissa(&(&ap.y + &ap.j * &k))?;
        // Y − c'I + JK stays Hurwitz for any c' > alpha
        c = 0.5 * (c + alpha.max(0.0));
    }
    Err(Error::Assumption("could not construct a stabilizing gain for (Y,J)".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub p: Mat,
    pub k: Mat,
    /// `|P_k − P_{k−1}|_F` for policy iteration, `|P̃_{k+1} − P_k|_F/ε_k` for value iteration.
    pub delta: f64,
    pub step: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LearnReport {
    pub method: Method,
    pub iterates: Vec<Iterate>,
    /// Final `P`, symmetric.
    pub p: Mat,
    /// Final gain `−JᵀP` (m × (n+n_z)) before the `ω⁻¹` scaling.
    pub k: Mat,
    pub b_hat: Option<Mat>,
    pub e_hat: Option<Mat>,
    pub ranks: Vec<RankCheck>,
    pub converged: bool,
    pub iterations: usize,
    /// Value-iteration confinement resets.
    pub resets: usize,
}

impl LearnReport {
    pub fn p_norms(&self) -> Vec<f64> {
        self.iterates.iter().map(|it| it.p.norm()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// `|P_k|_F` treated as divergence.
    pub guard: f64,
}

impl Default for PiOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            guard: 1e10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSchedule {
    /// `ε_k = a/(k+b)`.
    Harmonic { a: f64, b: f64 },
    /// `ε_k = a·r^k`, summable for `r < 1`.
    Geometric { a: f64, r: f64 },
}

impl StepSchedule {
    pub fn step(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Harmonic { a, b } => a / (k as f64 + b),
            StepSchedule::Geometric { a, r } => a * r.powi(k.min(i32::MAX as usize) as i32),
        }
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Harmonic { a: 10.0, b: 100.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViOptions {
    /// Initial `P_0`; identity when absent.
    pub p0: Option<Mat>,
    pub schedule: StepSchedule,
    /// Confinement radius base: `B_q = {P : |P|_F ≤ c·2^q}`.
    pub confine_c: f64,
    pub eps_stop: f64,
    pub max_iter: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            p0: None,
            schedule: StepSchedule::default(),
            confine_c: 100.0,
            eps_stop: 1e-4,
            max_iter: 200_000,
        }
    }
}

/// Precomputed blocks shared by the data equations of one follower.
struct Blocks<'a> {
    reg: &'a FollowerRegressors,
    dup: Mat,
    /// `δ_ξ − 2Γ_ξγ·M`.
    base: Mat,
}

impl<'a> Blocks<'a> {
    fn new(reg: &'a FollowerRegressors) -> Self {
        let dup = duplication(reg.dims.xi());
        let base = &reg.delta_xi - &reg.xi_gamma * &dup * 2.0;
        Self { reg, dup, base }
    }

    fn dims(&self) -> RegressorDims {
        self.reg.dims
    }

    /// `Γ_ξξ·(I ⊗ Xᵀ)` for `X` with (n+n_z) columns.
    fn xixi_times_kron_t(&self, x: &Mat) -> Mat {
        let l = self.dims().xi();
        &self.reg.xi_xi * kron(&Mat::identity(l, l), &x.transpose())
    }

    /// `(I ⊗ X)·M`, mapping `vecs(P)` to `vec(XP)`.
    fn left_mult_vecs(&self, x: &Mat) -> Mat {
        let l = self.dims().xi();
        kron(&Mat::identity(l, l), x) * &self.dup
    }
}

/// Unknown layout `[vecs(P_k); vec(K_{k+1}); vec([E;0]ᵀP_k)]`.
pub fn pi_system(reg: &FollowerRegressors, k: &Mat) -> (Mat, Vector) {
    pi_system_with(&Blocks::new(reg), k)
}

fn pi_system_with(b: &Blocks, k: &Mat) -> (Mat, Vector) {
    let l = b.dims().xi();
    let reg = b.reg;
    let c2 = -b.xixi_times_kron_t(k) * 2.0 + &reg.xi_u * 2.0;
    let c3 = &reg.xi_eta * -2.0;
    let psi = hcat(&[&b.base, &c2, &c3]);
    let q = Mat::identity(l, l) + k.transpose() * k;
    let phi = -(&reg.xi_xi * vec(&q));
    (psi, phi)
}

/// Unknown layout `[vecs(H_k); vec(K_k); vec([E;0]ᵀP_k)]`; `Ψ` is independent of `k`.
pub fn vi_system(reg: &FollowerRegressors, p: &Mat) -> Result<(Mat, Vector)> {
    let b = Blocks::new(reg);
    Ok((vi_psi(&b), &b.base * vecs(p)?))
}

fn vi_psi(b: &Blocks) -> Mat {
    let reg = b.reg;
    hcat(&[&reg.hat_xi, &(&reg.xi_u * -2.0), &(&reg.xi_eta * 2.0)])
}

/// Unknown layout `[vecs(Yᵀ+Y); vec(Bᵀ); vec(Eᵀ)]`.
pub fn identification_system(reg: &FollowerRegressors) -> (Mat, Vector) {
    let b = Blocks::new(reg);
    let l = reg.dims.xi();
    let psi = hcat(&[&reg.hat_xi, &(&reg.x_u * 2.0), &(&reg.x_eta * 2.0)]);
    let phi = &b.base * vecs(&Mat::identity(l, l)).expect("identity is symmetric");
    (psi, phi)
}

/// `Ĵ = [B̂; 0]` and `[Ê; 0]`.
fn lift_estimates(d: RegressorDims, b_hat: &Mat, e_hat: &Mat) -> Result<(Mat, Mat)> {
    if b_hat.shape() != (d.n, d.m) || e_hat.shape() != (d.n, d.q) {
        return Err(Error::Dimension(format!(
            "estimates must be {}x{} and {}x{}",
            d.n, d.m, d.n, d.q
        )));
    }
    let l = d.xi();
    let mut j = Mat::zeros(l, d.m);
    j.view_mut((0, 0), (d.n, d.m)).copy_from(b_hat);
    let mut e = Mat::zeros(l, d.q);
    e.view_mut((0, 0), (d.n, d.q)).copy_from(e_hat);
    Ok((j, e))
}

/// `Ψ'·vecs(P_k) = Φ'` with `K_{k+1} = −ĴᵀP_k` eliminated.
pub fn ipi_system(reg: &FollowerRegressors, k: &Mat, b_hat: &Mat, e_hat: &Mat) -> Result<(Mat, Vector)> {
    let b = Blocks::new(reg);
    let (j, e) = lift_estimates(reg.dims, b_hat, e_hat)?;
    let fixed = ipi_fixed(&b, &j, &e);
    Ok(ipi_system_with(&b, &fixed, k, &j))
}

/// `δ − 2Γ_ξγM − 2Γ_ξu(I⊗Ĵᵀ)M − 2Γ_ξη(I⊗[Ê;0]ᵀ)M`.
fn ipi_fixed(b: &Blocks, j: &Mat, e: &Mat) -> Mat {
    let reg = b.reg;
    &b.base - &reg.xi_u * b.left_mult_vecs(&j.transpose()) * 2.0
        - &reg.xi_eta * b.left_mult_vecs(&e.transpose()) * 2.0
}

fn ipi_system_with(b: &Blocks, fixed: &Mat, k: &Mat, j: &Mat) -> (Mat, Vector) {
    let l = b.dims().xi();
    let kj = k.transpose() * j.transpose();
    let psi = fixed + &b.reg.xi_xi * b.left_mult_vecs(&kj) * 2.0;
    let q = Mat::identity(l, l) + k.transpose() * k;
    (psi, -(&b.reg.xi_xi * vec(&q)))
}

fn check_guard(p: &Mat, guard: f64, iteration: usize) -> Result<()> {
    let norm = p.norm();
    if !norm.is_finite() || norm > guard {
        return Err(Error::IterateDivergence { norm, iteration });
    }
    Ok(())
}

fn is_positive_definite(p: &Mat) -> bool {
    p.iter().all(|x| x.is_finite()) && p.clone().symmetric_eigen().eigenvalues.iter().all(|&e| e > 0.0)
}

fn check_k0(d: RegressorDims, k0: &Mat) -> Result<()> {
    if k0.shape() != (d.m, d.xi()) {
        return Err(Error::Dimension(format!(
            "K0 is {}x{}, expected {}x{}",
            k0.nrows(),
            k0.ncols(),
            d.m,
            d.xi()
        )));
    }
    Ok(())
}

/// Data-driven policy iteration from an initially stabilizing gain.
pub fn pi_learn(reg: &FollowerRegressors, k0: &Mat, opts: &PiOptions) -> Result<LearnReport> {
    let d = reg.dims;
    check_k0(d, k0)?;
    let rc = require_rank(reg, Equation::Pi)?;
    let (l, t) = (d.xi(), tri(d.xi()));
    let b = Blocks::new(reg);
    let mut k = k0.clone();
    let mut iterates: Vec<Iterate> = Vec::new();
    let mut converged = false;
    for it in 0..opts.max_iter {
        let (psi, phi) = pi_system_with(&b, &k);
        let x = lstsq(&psi, &phi)?;
        let p = unvecs(&x.as_slice()[..t], l)?;
        check_guard(&p, opts.guard, it)?;
        k = DMatrix::from_column_slice(d.m, l, &x.as_slice()[t..t + l * d.m]);
        let delta = iterates.last().map_or(f64::INFINITY, |prev| (&p - &prev.p).norm());
        iterates.push(Iterate {
            p,
            k: k.clone(),
            delta,
            step: None,
        });
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    finish(Method::Pi, iterates, vec![rc], converged, 0, None, None, l, d.m)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    method: Method,
    iterates: Vec<Iterate>,
    ranks: Vec<RankCheck>,
    converged: bool,
    resets: usize,
    b_hat: Option<Mat>,
    e_hat: Option<Mat>,
    l: usize,
    m: usize,
) -> Result<LearnReport> {
    let (p, k) = iterates
        .last()
        .map(|it| (it.p.clone(), it.k.clone()))
        .unwrap_or_else(|| (Mat::zeros(l, l), Mat::zeros(m, l)));
    let converged = converged && is_positive_definite(&p);
    Ok(LearnReport {
        method,
        iterations: iterates.len(),
        iterates,
        p,
        k,
        b_hat,
        e_hat,
        ranks,
        converged,
        resets,
    })
}

fn initial_p(d: RegressorDims, opts: &ViOptions) -> Result<Mat> {
    let l = d.xi();
    let p0 = opts.p0.clone().unwrap_or_else(|| Mat::identity(l, l));
    if p0.shape() != (l, l) {
        return Err(Error::Dimension(format!("P0 must be {l}x{l}")));
    }
    let p0 = crate::matlib::symmetrize(&p0)?;
    if !is_positive_definite(&p0) {
        return Err(Error::InvalidValue("P0 must be positive definite".into()));
    }
    Ok(p0)
}

/// One value-iteration loop. `solve` maps `P_k` to `(H_k, K_k)`; `kk` gives
/// the quadratic term `K_kᵀK_k` of the update.
fn vi_loop<F>(p0: Mat, opts: &ViOptions, mut solve: F) -> Result<(Vec<Iterate>, bool, usize)>
where
    F: FnMut(&Mat) -> Result<(Mat, Mat, Mat)>,
{
    let l = p0.nrows();
    let id = Mat::identity(l, l);
    let mut p = p0.clone();
    let mut confine = 0i32;
    let mut resets = 0;
    let mut iterates = Vec::new();
    for it in 0..opts.max_iter {
        let eps = opts.schedule.step(it);
        if !(eps > 0.0) {
            return Err(Error::Config(format!("non-positive step size at iteration {it}")));
        }
        let (h, k, kk) = solve(&p)?;
        let update = &h - &kk + &id;
        let ratio = update.norm();
        iterates.push(Iterate {
            p: p.clone(),
            k,
            delta: ratio,
            step: Some(eps),
        });
        if ratio < opts.eps_stop {
            return Ok((iterates, true, resets));
        }
        let tilde = &p + update * eps;
        let bound = opts.confine_c * 2f64.powi(confine);
        let norm = tilde.norm();
        if !norm.is_finite() || norm > bound {
            p = p0.clone();
            confine += 1;
            resets += 1;
        } else {
            p = tilde;
        }
    }
    Ok((iterates, false, resets))
}

/// Data-driven value iteration; needs no stabilizing gain.
pub fn vi_learn(reg: &FollowerRegressors, opts: &ViOptions) -> Result<LearnReport> {
    let d = reg.dims;
    let rc = require_rank(reg, Equation::Vi)?;
    let (l, t) = (d.xi(), tri(d.xi()));
    let b = Blocks::new(reg);
    let factor = LstsqFactor::new(&vi_psi(&b))?;
    let p0 = initial_p(d, opts)?;
    let (iterates, converged, resets) = vi_loop(p0, opts, |p| {
        let x = factor.solve(&(&b.base * vecs(p)?))?;
        let h = unvecs(&x.as_slice()[..t], l)?;
        let k = DMatrix::from_column_slice(d.m, l, &x.as_slice()[t..t + l * d.m]);
        let kk = k.transpose() * &k;
        Ok((h, k, kk))
    })?;
    finish(Method::Vi, iterates, vec![rc], converged, resets, None, None, l, d.m)
}

#[derive(Clone, Debug)]
pub struct Identification {
    pub b: Mat,
    pub e: Mat,
    /// Estimate of `Yᵀ + Y`.
    pub y_sym: Mat,
    pub rank: RankCheck,
}

/// Recovers `B` and `E_i` from the `P = I` instance of the data equation.
pub fn identify_be(reg: &FollowerRegressors) -> Result<Identification> {
    let d = reg.dims;
    let rank = require_rank(reg, Equation::Identify)?;
    let (l, t) = (d.xi(), tri(d.xi()));
    let (psi, phi) = identification_system(reg);
    let x = lstsq(&psi, &phi)?;
    let xs = x.as_slice();
    let y_sym = unvecs(&xs[..t], l)?;
    let bt = DMatrix::from_column_slice(d.m, d.n, &xs[t..t + d.n * d.m]);
    let et = DMatrix::from_column_slice(d.q, d.n, &xs[t + d.n * d.m..t + d.n * (d.m + d.q)]);
    Ok(Identification {
        b: bt.transpose(),
        e: et.transpose(),
        y_sym,
        rank,
    })
}

/// Reduced policy iteration with identified `B̂`, `Ê_i`.
pub fn ipi_learn(
    reg: &FollowerRegressors,
    b_hat: &Mat,
    e_hat: &Mat,
    k0: &Mat,
    opts: &PiOptions,
) -> Result<LearnReport> {
    let d = reg.dims;
    check_k0(d, k0)?;
    let rc = require_rank(reg, Equation::Reduced)?;
    let l = d.xi();
    let b = Blocks::new(reg);
    let (j, e) = lift_estimates(d, b_hat, e_hat)?;
    let fixed = ipi_fixed(&b, &j, &e);
    let mut k = k0.clone();
    let mut iterates: Vec<Iterate> = Vec::new();
    let mut converged = false;
    for it in 0..opts.max_iter {
        let (psi, phi) = ipi_system_with(&b, &fixed, &k, &j);
        let p = unvecs(lstsq(&psi, &phi)?.as_slice(), l)?;
        check_guard(&p, opts.guard, it)?;
        k = -j.transpose() * &p;
        let delta = iterates.last().map_or(f64::INFINITY, |prev| (&p - &prev.p).norm());
        iterates.push(Iterate {
            p,
            k: k.clone(),
            delta,
            step: None,
        });
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    finish(
        Method::Ipi,
        iterates,
        vec![rc],
        converged,
        0,
        Some(b_hat.clone()),
        Some(e_hat.clone()),
        l,
        d.m,
    )
}

/// Reduced value iteration with identified `B̂`, `Ê_i`.
pub fn ivi_learn(reg: &FollowerRegressors, b_hat: &Mat, e_hat: &Mat, opts: &ViOptions) -> Result<LearnReport> {
    let d = reg.dims;
    let rc = require_rank(reg, Equation::Reduced)?;
    let l = d.xi();
    let b = Blocks::new(reg);
    let (j, e) = lift_estimates(d, b_hat, e_hat)?;
    let rhs = ipi_fixed(&b, &j, &e);
    let factor = LstsqFactor::new(&reg.hat_xi)?;
    let p0 = initial_p(d, opts)?;
    let (iterates, converged, resets) = vi_loop(p0, opts, |p| {
        let h = unvecs(factor.solve(&(&rhs * vecs(p)?))?.as_slice(), l)?;
        let k = -j.transpose() * p;
        let kk = k.transpose() * &k;
        Ok((h, k, kk))
    })?;
    finish(
        Method::Ivi,
        iterates,
        vec![rc],
        converged,
        resets,
        Some(b_hat.clone()),
        Some(e_hat.clone()),
        l,
        d.m,
    )
}

/// Everything a follower's learner may need besides its regressors.
#[derive(Clone, Debug, Default)]
pub struct LearnConfig {
    pub k0: Option<Mat>,
    pub pi: PiOptions,
    pub vi: ViOptions,
}

/// Runs `method` on one follower, identifying `B̂`, `Ê_i` first for the reduced methods.
pub fn learn_follower(reg: &FollowerRegressors, method: Method, cfg: &LearnConfig) -> Result<LearnReport> {
    let k0 = || {
        cfg.k0
            .as_ref()
            .ok_or_else(|| Error::Config(format!("method {} needs a stabilizing K0", method.name())))
    };
    match method {
        Method::Pi => pi_learn(reg, k0()?, &cfg.pi),
        Method::Vi => vi_learn(reg, &cfg.vi),
        Method::Ipi | Method::Ivi => {
            let id = identify_be(reg)?;
            let mut report = if method == Method::Ipi {
                ipi_learn(reg, &id.b, &id.e, k0()?, &cfg.pi)?
            } else {
                ivi_learn(reg, &id.b, &id.e, &cfg.vi)?
            };
            report.ranks.insert(0, id.rank);
            Ok(report)
        }
    }
}

/// Per-follower learns, concurrently under [`Execution::Parallel`].
pub fn learn_all(
    set: &RegressorSet,
    method: Method,
    cfg: &LearnConfig,
    exec: Execution,
) -> Vec<Result<LearnReport>> {
    exec.map(&set.followers, |reg| learn_follower(reg, method, cfg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gains {
    pub kx: Mat,
    pub kz: Mat,
    pub omega: f64,
}

impl Gains {
    pub fn k(&self) -> Mat {
        hcat(&[&self.kx, &self.kz])
    }
}

fn check_omega(omega: f64, omega_bound: f64) -> Result<()> {
    if !(omega > 0.0 && omega <= omega_bound * (1.0 + 1e-12)) {
        return Err(Error::InvalidValue(format!(
            "omega = {omega} outside (0, {omega_bound}]"
        )));
    }
    Ok(())
}

/// `K = −ω⁻¹JᵀP` split into the plant and internal-model columns.
pub fn gain_from_p(p: &Mat, j: &Mat, n: usize, omega: f64, omega_bound: f64) -> Result<Gains> {
    if p.nrows() != j.nrows() {
        return Err(Error::Dimension("P and J row counts differ".into()));
    }
    gain_from_k(&(-j.transpose() * p), n, omega, omega_bound)
}

/// `ω⁻¹K` for a gain already of the form `−JᵀP`.
pub fn gain_from_k(k: &Mat, n: usize, omega: f64, omega_bound: f64) -> Result<Gains> {
    check_omega(omega, omega_bound)?;
    if n > k.ncols() {
        return Err(Error::Dimension(format!("n = {n} exceeds gain width {}", k.ncols())));
    }
    let scaled = k / omega;
    Ok(Gains {
        kx: scaled.columns(0, n).into_owned(),
        kz: scaled.columns(n, k.ncols() - n).into_owned(),
        omega,
    })
}

/// Copies a reduced-method solution to every follower; the solved `P` does
/// not depend on the follower's disturbance matrix.
pub fn share_solution(
    report: &LearnReport,
    followers: usize,
    n: usize,
    omega: f64,
    omega_bound: f64,
) -> Result<Vec<Gains>> {
    if !report.method.is_reduced() {
        return Err(Error::Config(format!(
            "cannot share a {} solution: its unknowns include follower-specific disturbance terms",
            report.method.name()
        )));
    }
    let g = gain_from_k(&report.k, n, omega, omega_bound)?;
    Ok(vec![g; followers])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matlib::mat;
    use crate::plant::{build_augmented, build_internal_model, minimal_polynomial, Scenario};
    use crate::sim::{exact_regressors, ExactInputs};

    fn scalar_plant() -> AugmentedPlant {
        AugmentedPlant {
            y: mat(1, 1, &[-1.0]),
            j: mat(1, 1, &[1.0]),
        }
    }

    fn d1() -> (Scenario, AugmentedPlant) {
        let s = Scenario::d1();
        let mp = minimal_polynomial(&s.s, None).unwrap();
        let im = build_internal_model(&mp, 1).unwrap();
        let ap = build_augmented(&s, &im).unwrap();
        (s, ap)
    }

    fn e_aug(s: &Scenario, i: usize) -> Mat {
        let mut e = Mat::zeros(4, 2);
        e.view_mut((0, 0), (2, 2)).copy_from(&s.e[i]);
        e
    }

    fn exact(s: &Scenario, ap: &AugmentedPlant, i: usize, samples: usize, seed: u64) -> FollowerRegressors {
        let inputs = ExactInputs::random(seed, samples, 1, 2, 2);
        exact_regressors(
            &ap.y,
            &ap.j,
            &e_aug(s, i),
            &s.s,
            2,
            &[0.3, -0.2, 0.1, 0.4],
            &[1.0, 0.0],
            0.2,
            &inputs,
        )
        .unwrap()
    }

    #[test]
    fn scalar_oracle() {
        let r = kleinman_oracle(&scalar_plant(), &mat(1, 1, &[0.0]), ORACLE_TOL, 50).unwrap();
        let want = 2f64.sqrt() - 1.0;
        assert!((r.p[(0, 0)] - want).abs() < 1e-12);
        assert!((r.k[(0, 0)] + want).abs() < 1e-12);
        let g = gain_from_p(&r.p, &mat(1, 1, &[1.0]), 1, 1.0, 1.0).unwrap();
        assert!((g.kx[(0, 0)] + 0.41421).abs() < 1e-5);
        let g2 = gain_from_p(&r.p, &mat(1, 1, &[1.0]), 1, 2.0, 2.0).unwrap();
        assert!((g2.kx[(0, 0)] * 2.0 - g.kx[(0, 0)]).abs() < 1e-15);
    }

    #[test]
    fn d1_oracle_is_monotone_with_small_residual() {
        let (_, ap) = d1();
        let k0 = stabilizing_gain(&ap).unwrap();
        let r = kleinman_oracle(&ap, &k0, ORACLE_TOL, 30).unwrap();
        assert!(r.converged);
        assert!(r.residual < 1e-8, "{}", r.residual);
        for w in r.history.windows(2) {
            let diff = &w[0] - &w[1];
            let min = diff.symmetric_eigen().eigenvalues.min();
            assert!(min >= -1e-9);
        }
        let want = [-2.6414778, -2.50658246, 1.22726424, -0.70272504];
        for (k, w) in r.k.iter().zip(want) {
            assert!((k - w).abs() < 1e-6);
        }
    }

    #[test]
    fn oracle_rejects_destabilising_k0() {
        let (_, ap) = d1();
        assert!(matches!(
            kleinman_oracle(&ap, &Mat::zeros(1, 4), ORACLE_TOL, 30),
            Err(Error::NotHurwitz { .. })
        ));
    }

    #[test]
    fn d1_unknown_counts() {
        let (s, ap) = d1();
        let reg = exact(&s, &ap, 0, 40, 1);
        let (psi, _) = pi_system(&reg, &Mat::zeros(1, 4));
        assert_eq!(psi.ncols(), 22);
        let (psi, _) = vi_system(&reg, &Mat::identity(4, 4)).unwrap();
        assert_eq!(psi.ncols(), 22);
        assert_eq!(identification_system(&reg).0.ncols(), 16);
        let (psi, _) = ipi_system(&reg, &Mat::zeros(1, 4), &s.b, &s.e[0]).unwrap();
        assert_eq!(psi.ncols(), 10);
        assert_eq!(rank_check(&reg, Equation::Pi).required, 22);
        assert_eq!(rank_check(&reg, Equation::Identify).required, 16);
        assert_eq!(rank_check(&reg, Equation::Reduced).required, 10);
        for eq in [Equation::Pi, Equation::Vi, Equation::Identify, Equation::Reduced] {
            assert!(rank_check(&reg, eq).ok);
        }
    }

    #[test]
    fn too_few_samples_fail_rank() {
        let (s, ap) = d1();
        let reg = exact(&s, &ap, 0, 17, 2);
        let rc = rank_check(&reg, Equation::Pi);
        assert!(!rc.ok && rc.achieved < rc.required);
        assert!(matches!(
            pi_learn(&reg, &Mat::zeros(1, 4), &PiOptions::default()),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn exact_data_pi_matches_kleinman() {
        let (s, ap) = d1();
        let k_star = kleinman_oracle(&ap, &stabilizing_gain(&ap).unwrap(), ORACLE_TOL, 50).unwrap().k;
        let k0 = &k_star * 1.1;
        let oracle = kleinman_oracle(&ap, &k0, 1e-10, 50).unwrap();
        for i in 0..3 {
            let reg = exact(&s, &ap, i, 40, 10 + i as u64);
            let pi = pi_learn(&reg, &k0, &PiOptions { tol: 1e-10, ..Default::default() }).unwrap();
            for (it, (p, k)) in pi.iterates.iter().zip(oracle.history.iter().zip(&oracle.gains)) {
                assert!((&it.p - p).amax() < 1e-7);
                assert!((&it.k - k).amax() < 1e-7);
                // K_{k+1} = −JᵀP_k
                assert!((&it.k + ap.j.transpose() * &it.p).amax() < 1e-8);
            }
            let ipi = ipi_learn(&reg, &s.b, &s.e[i], &k0, &PiOptions { tol: 1e-10, ..Default::default() }).unwrap();
            for (a, b) in ipi.iterates.iter().zip(&pi.iterates) {
                assert!((&a.p - &b.p).amax() < 1e-7);
            }
        }
    }

    #[test]
    fn exact_data_identification() {
        let (s, ap) = d1();
        for i in 0..3 {
            let reg = exact(&s, &ap, i, 40, 20 + i as u64);
            let id = identify_be(&reg).unwrap();
            assert!((&id.b - &s.b).amax() < 1e-9);
            assert!((&id.e - &s.e[i]).amax() < 1e-9);
            assert!((&id.y_sym - (ap.y.transpose() + &ap.y)).amax() < 1e-9);
        }
    }

    #[test]
    fn exact_data_vi_solves_for_h() {
        let (s, ap) = d1();
        let reg = exact(&s, &ap, 1, 40, 5);
        let p = mat(4, 4, &[2.0, 0.1, 0.0, 0.2, 0.1, 1.5, 0.3, 0.0, 0.0, 0.3, 1.0, 0.1, 0.2, 0.0, 0.1, 2.0]);
        let (psi_a, phi) = vi_system(&reg, &p).unwrap();
        let (psi_b, _) = vi_system(&reg, &Mat::identity(4, 4)).unwrap();
        assert_eq!(psi_a, psi_b);
        let x = lstsq(&psi_a, &phi).unwrap();
        let h = unvecs(&x.as_slice()[..10], 4).unwrap();
        assert!((&h - (ap.y.transpose() * &p + &p * &ap.y)).amax() < 1e-8);
        let k = DMatrix::from_column_slice(1, 4, &x.as_slice()[10..14]);
        assert!((&k + ap.j.transpose() * &p).amax() < 1e-8);
    }

    #[test]
    fn exact_data_vi_and_ivi_converge() {
        let (s, ap) = d1();
        let p_star = kleinman_oracle(&ap, &stabilizing_gain(&ap).unwrap(), ORACLE_TOL, 50).unwrap().p;
        let reg = exact(&s, &ap, 0, 40, 3);
        let vi = vi_learn(&reg, &ViOptions::default()).unwrap();
        assert!(vi.converged);
        assert!((&vi.p - &p_star).norm() / p_star.norm() < 1e-3);
        let ivi = ivi_learn(&reg, &s.b, &s.e[0], &ViOptions::default()).unwrap();
        assert!(ivi.converged);
        assert!((&ivi.p - &p_star).norm() / p_star.norm() < 1e-3);
    }

    #[test]
    fn summable_steps_stall() {
        let (s, ap) = d1();
        let reg = exact(&s, &ap, 0, 40, 3);
        let opts = ViOptions {
            schedule: StepSchedule::Geometric { a: 0.05, r: 0.99 },
            max_iter: 5_000,
            ..ViOptions::default()
        };
        let r = vi_learn(&reg, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 5_000);
    }

    #[test]
    fn share_rejects_non_reduced_reports() {
        let report = LearnReport {
            method: Method::Pi,
            iterates: vec![],
            p: Mat::identity(4, 4),
            k: Mat::zeros(1, 4),
            b_hat: None,
            e_hat: None,
            ranks: vec![],
            converged: true,
            iterations: 0,
            resets: 0,
        };
        assert!(share_solution(&report, 3, 2, 0.3, 0.4).is_err());
        let reduced = LearnReport {
            method: Method::Ipi,
            k: mat(1, 4, &[1.0, 2.0, 3.0, 4.0]),
            ..report
        };
        let shared = share_solution(&reduced, 1, 2, 0.5, 1.0).unwrap();
        assert_eq!(shared.len(), 1);
        assert_eq!(shared[0].kx, mat(1, 2, &[2.0, 4.0]));
        assert_eq!(shared[0].kz, mat(1, 2, &[6.0, 8.0]));
    }

    #[test]
    fn omega_range_enforced() {
        let k = Mat::zeros(1, 4);
        assert!(gain_from_k(&k, 2, 0.0, 0.4).is_err());
        assert!(gain_from_k(&k, 2, 0.5, 0.4).is_err());
        assert!(gain_from_k(&k, 2, 0.4, 0.4).is_ok());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Pi, Method::Vi, Method::Ipi, Method::Ivi] {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse("newton"), None);
    }
}
