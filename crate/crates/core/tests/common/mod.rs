#![allow(dead_code)]

use corp_lab::learn::{kleinman_oracle, stabilizing_gain, OracleResult, ORACLE_TOL};
use corp_lab::matlib::Mat;
use corp_lab::plant::{build_augmented, build_internal_model, minimal_polynomial, AugmentedPlant, InternalModel, Scenario};
use corp_lab::sim::{exact_regressors, ExactInputs, FollowerRegressors};

pub struct D1 {
    pub s: Scenario,
    pub im: InternalModel,
    pub ap: AugmentedPlant,
    pub oracle: OracleResult,
}

pub fn d1() -> D1 {
    let s = Scenario::d1();
    let mp = minimal_polynomial(&s.s, None).unwrap();
    let im = build_internal_model(&mp, 1).unwrap();
    let ap = build_augmented(&s, &im).unwrap();
    let oracle = kleinman_oracle(&ap, &stabilizing_gain(&ap).unwrap(), ORACLE_TOL, 50).unwrap();
    D1 { s, im, ap, oracle }
}

/// `[E_i; 0]`.
pub fn lifted_e(f: &D1, i: usize) -> Mat {
    let (n, q) = f.s.e[i].shape();
    let mut e = Mat::zeros(f.ap.order(), q);
    e.view_mut((0, 0), (n, q)).copy_from(&f.s.e[i]);
    e
}

/// Closed-form regressors of follower `i` under piecewise-constant inputs.
pub fn exact(f: &D1, i: usize, samples: usize, seed: u64) -> FollowerRegressors {
    let n = f.s.dims().n;
    let l = f.ap.order();
    let inputs = ExactInputs::random(seed, samples, f.ap.j.ncols(), n, l - n);
    let xi0: Vec<f64> = (0..l).map(|k| 0.3 - 0.15 * k as f64).collect();
    exact_regressors(&f.ap.y, &f.ap.j, &lifted_e(f, i), &f.s.s, n, &xi0, &[1.0, 0.0], 0.2, &inputs).unwrap()
}

pub fn rel(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn corp_lab() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_corp-lab"))
}

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}
