//! Closed-loop verification and the unknown/rank dimension tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{build_matrices, omega_bound, random_connected, Digraph, GraphMatrices, OMEGA_SAFETY};
use crate::learn::{gain_from_p, Gains};
use crate::matlib::{spectral_abscissa, tri, Mat};
use crate::par::Execution;
use crate::plant::{InternalModel, Scenario};
use crate::sim::{Control, InitialConditions, Network, Rk4, Trajectory, BLOW_UP_GUARD};

/// Slack on the spectral abscissa when declaring a matrix Hurwitz.
pub const HURWITZ_MARGIN: f64 = 1e-6;
pub const TAIL_FRACTION: f64 = 0.2;
pub const TRACKING_THRESHOLD: f64 = 1e-2;

/// One gain for all followers, or one per follower.
fn gain_for(gains: &[Gains], i: usize) -> &Gains {
    if gains.len() == 1 {
        &gains[0]
    } else {
        &gains[i]
    }
}

fn check_gains(s: &Scenario, im: &InternalModel, gains: &[Gains]) -> Result<()> {
    let d = s.dims();
    if gains.len() != 1 && gains.len() != d.followers {
        return Err(Error::Dimension(format!(
            "{} gains for {} followers",
            gains.len(),
            d.followers
        )));
    }
    for g in gains {
        if g.kx.shape() != (d.m, d.n) || g.kz.shape() != (d.m, im.nz()) {
            return Err(Error::Dimension(format!(
                "gain blocks must be {}x{} and {}x{}",
                d.m,
                d.n,
                d.m,
                im.nz()
            )));
        }
    }
    Ok(())
}

/// Closed-loop matrix in the coordinates `[x̄_1..x̄_N, ẑ_1..ẑ_N]`:
/// block `(i,j)` of the plant rows is `δ_ij A + (DH)_ij B K_x,i` and
/// `δ_ij B K_z,i`; the internal-model rows are `(DH)_ij G₂C` and `δ_ij G₁`.
pub fn assemble_ac_hat(s: &Scenario, im: &InternalModel, gm: &GraphMatrices, gains: &[Gains]) -> Result<Mat> {
    check_gains(s, im, gains)?;
    let d = s.dims();
    let (n, nz, big_n) = (d.n, im.nz(), d.followers);
    let g2c = &im.g2 * &s.c;
    let mut ac = Mat::zeros(big_n * (n + nz), big_n * (n + nz));
    let zoff = big_n * n;
    for i in 0..big_n {
        let g = gain_for(gains, i);
        let bkx = &s.b * &g.kx;
        for j in 0..big_n {
            let w = gm.dh[(i, j)];
            let mut blk = &bkx * w;
            if i == j {
                blk += &s.a;
            }
            ac.view_mut((i * n, j * n), (n, n)).copy_from(&blk);
            ac.view_mut((zoff + i * nz, j * n), (nz, n)).copy_from(&(&g2c * w));
        }
        ac.view_mut((i * n, zoff + i * nz), (n, nz)).copy_from(&(&s.b * &g.kz));
        ac.view_mut((zoff + i * nz, zoff + i * nz), (nz, nz)).copy_from(&im.g1);
    }
    Ok(ac)
}

#[derive(Clone, Debug)]
pub struct ClosedLoopConfig {
    pub horizon: f64,
    pub dt: f64,
    pub init: InitialConditions,
    pub threshold: f64,
    pub trajectory_stride: Option<usize>,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            horizon: 60.0,
            dt: 1e-3,
            init: InitialConditions::default(),
            threshold: TRACKING_THRESHOLD,
            trajectory_stride: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClosedLoopResult {
    pub hurwitz: bool,
    pub abscissa: f64,
    /// `max_i |e_i(t)|` over the final [`TAIL_FRACTION`] of the horizon.
    pub tail_error: f64,
    /// First time after which every `|e_i|` stays below the threshold.
    pub settle_time: Option<f64>,
    pub horizon: f64,
    pub threshold: f64,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

/// Simulates the true network under
/// `u_i = K_x,i (Σ_j a_ij (x_i − x_j) + a_i0 x_i)/Σ_j a_ij + K_z,i ẑ_i`.
pub fn closed_loop_simulate(
    s: &Scenario,
    im: &InternalModel,
    gains: &[Gains],
    cfg: &ClosedLoopConfig,
) -> Result<ClosedLoopResult> {
    if !(cfg.dt > 0.0 && cfg.horizon > 0.0) {
        return Err(Error::Config("closed loop needs positive dt and horizon".into()));
    }
    let gm = build_matrices(&s.graph)?;
    let ac = assemble_ac_hat(s, im, &gm, gains)?;
    let abscissa = spectral_abscissa(&ac)?;
    let hurwitz = abscissa < -HURWITZ_MARGIN;
    if !hurwitz {
        log::warn!("closed-loop matrix is not Hurwitz (abscissa {abscissa:.3e}); simulating anyway");
    }
    let d = s.dims();
    let kx: Vec<Mat> = (0..d.followers).map(|i| gain_for(gains, i).kx.clone()).collect();
    let kz: Vec<Mat> = (0..d.followers).map(|i| gain_for(gains, i).kz.clone()).collect();
    let control = Control::Feedback { kx: &kx, kz: &kz };
    // the observer plays no part in this control law
    let net = Network::new(s, im, 1.0, false)?;
    let mut y = net.initial_state(&cfg.init)?;
    let mut sc = net.scratch();
    let mut rk = Rk4::new(y.len());
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let tail_start = ((1.0 - TAIL_FRACTION) * steps as f64).floor() as usize;
    let mut trajectory = cfg.trajectory_stride.map(|_| Trajectory::new(&net.dims));

    let mut tail_error: f64 = 0.0;
    let mut last_violation: Option<usize> = None;
    for step in 0..=steps {
        let t = step as f64 * cfg.dt;
        let err = (0..d.followers)
            .map(|i| net.tracking_error(&y, i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if err >= cfg.threshold {
            last_violation = Some(step);
        }
        if step >= tail_start {
            tail_error = tail_error.max(err);
        }
        if let (Some(tr), Some(stride)) = (trajectory.as_mut(), cfg.trajectory_stride) {
            if step % stride.max(1) == 0 {
                net.inputs(t, &y, &control, &mut sc);
                tr.rows.push(net.trajectory_row(t, &y, &sc));
            }
        }
        if step == steps {
            break;
        }
        rk.step(|tt, yy, dd| net.derivative(tt, yy, dd, &control, &mut sc), t, &mut y, cfg.dt);
        if net.plant_norm(&y) > BLOW_UP_GUARD || y.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                t: (step + 1) as f64 * cfg.dt,
            });
        }
    }
    let settle_time = match last_violation {
        None => Some(0.0),
        Some(k) if k < steps => Some((k + 1) as f64 * cfg.dt),
        Some(_) => None,
    };
    Ok(ClosedLoopResult {
        hurwitz,
        abscissa,
        tail_error,
        settle_time,
        horizon: cfg.horizon,
        threshold: cfg.threshold,
        trajectory,
    })
}

/// Problem sizes for the dimension tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DimInput {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub nz: usize,
    /// `|N_i⁻|`, follower in-neighbours excluding the leader.
    pub neighbors: usize,
}

impl DimInput {
    /// The moderate example used for the published comparison.
    pub const MODERATE: DimInput = DimInput {
        n: 10,
        m: 8,
        p: 4,
        q: 20,
        nz: 40,
        neighbors: 2,
    };
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DimReport {
    pub method: String,
    pub unknowns: usize,
    pub rank_required: usize,
    /// The coupled learner whose unknowns also include neighbour-state blocks.
    pub coupled_unknowns: usize,
    pub coupled_rank: usize,
    /// `n_z = 0` or another zero dimension makes the comparison vacuous.
    pub degenerate: bool,
}

/// Exact counts: `T = (n+n_z)(n+n_z+1)/2`; PI/VI `T + (n+n_z)(m+q)`;
/// coupled learner adds `(n+n_z)·h_i`, `h_i = |N_i⁻|(n+n_z)`; reduced methods
/// solve for `T` unknowns after an identification step of rank `T + n(m+q)`.
pub fn dim_report(d: DimInput) -> Vec<DimReport> {
    let l = d.n + d.nz;
    let t = tri(l);
    let ours = t + l * (d.m + d.q);
    let h = d.neighbors * l;
    let coupled = ours + l * h;
    let improved = t;
    let improved_rank = t + d.n * (d.m + d.q);
    let degenerate = d.nz == 0 || d.n == 0 || d.m == 0 || d.p == 0 || d.q == 0;
    let row = |method: &str, unknowns, rank_required| DimReport {
        method: method.to_string(),
        unknowns,
        rank_required,
        coupled_unknowns: coupled,
        coupled_rank: coupled,
        degenerate,
    };
    vec![
        row("pi", ours, ours),
        row("vi", ours, ours),
        row("ipi", improved, improved_rank),
        row("ivi", improved, improved_rank),
    ]
}

pub fn dim_report_csv(rows: &[DimReport]) -> String {
    let mut out = String::from("method,unknowns,rank_required,coupled_unknowns,coupled_rank,degenerate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method, r.unknowns, r.rank_required, r.coupled_unknowns, r.coupled_rank, r.degenerate
        ));
    }
    out
}

/// The plant of `base` placed on another graph; disturbance matrices are reused cyclically.
pub fn with_graph(base: &Scenario, graph: Digraph) -> Result<Scenario> {
    let n = graph.n_followers();
    let e = (0..n).map(|i| base.e[i % base.e.len()].clone()).collect();
    Scenario::new(
        base.a.clone(),
        base.b.clone(),
        base.c.clone(),
        base.f.clone(),
        base.s.clone(),
        e,
        graph,
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepCase {
    pub seed: u64,
    pub followers: usize,
    pub edges: usize,
    pub omega: f64,
    pub abscissa: f64,
    pub hurwitz: bool,
}

/// Random leader-rooted digraphs (cycles allowed) with `1..=max_followers`
/// followers; each case uses `K = −ω⁻¹JᵀP` at `ω = 0.9·omega_bound`.
#[allow(clippy::too_many_arguments)]
pub fn theorem2_sweep(
    base: &Scenario,
    im: &InternalModel,
    j: &Mat,
    p: &Mat,
    cases: usize,
    max_followers: usize,
    seed: u64,
    exec: Execution,
) -> Vec<Result<SweepCase>> {
    let seeds: Vec<u64> = (0..cases as u64).map(|k| seed.wrapping_mul(1_000_003).wrapping_add(k)).collect();
    let n = base.dims().n;
    exec.map(&seeds, |&case_seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let followers = rng.random_range(1..=max_followers.max(1));
        let prob = rng.random_range(0.1..0.6);
        let graph = random_connected(followers, prob, case_seed);
        let edges = graph.edges().len();
        let s = with_graph(base, graph)?;
        let gm = build_matrices(&s.graph)?;
        let bound = omega_bound(&gm)?;
        let omega = OMEGA_SAFETY * bound;
        let g = gain_from_p(p, j, n, omega, bound)?;
        let abscissa = spectral_abscissa(&assemble_ac_hat(&s, im, &gm, &[g])?)?;
        Ok(SweepCase {
            seed: case_seed,
            followers,
            edges,
            omega,
            abscissa,
            hurwitz: abscissa < -HURWITZ_MARGIN,
        })
    })
}
