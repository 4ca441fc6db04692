//! Follower/exosystem description, solvability checks and internal-model design.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{check_spanning_tree, Digraph, Edge};
use crate::matlib::{blockdiag, complex_rank, eig, lstsq, mat, rank_tol, Mat, Vector};

/// Eigenvalues with real part at least `-CLOSED_RHP_TOL` count as unstable modes.
const CLOSED_RHP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub followers: usize,
}

/// Homogeneous followers `ẋ_i = Ax_i + Bu_i + E_i v`, `y_i = Cx_i`, leader `v̇ = Sv`,
/// tracking error `e_i = Cx_i + Fv`.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub f: Mat,
    pub s: Mat,
    pub e: Vec<Mat>,
    pub graph: Digraph,
}

impl Scenario {
    pub fn new(a: Mat, b: Mat, c: Mat, f: Mat, s: Mat, e: Vec<Mat>, graph: Digraph) -> Result<Self> {
        let n = a.nrows();
        let dim = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Dimension(format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            }
        };
        dim("A", a.shape(), (n, n))?;
        let m = b.ncols();
        dim("B", b.shape(), (n, m))?;
        let p = c.nrows();
        dim("C", c.shape(), (p, n))?;
        let q = s.nrows();
        dim("S", s.shape(), (q, q))?;
        dim("F", f.shape(), (p, q))?;
        if n == 0 || m == 0 || p == 0 || q == 0 {
            return Err(Error::Dimension("all of n, m, p, q must be positive".into()));
        }
        if e.len() != graph.n_followers() {
            return Err(Error::Dimension(format!(
                "{} disturbance matrices for {} followers",
                e.len(),
                graph.n_followers()
            )));
        }
        for (i, ei) in e.iter().enumerate() {
            dim(&format!("E_{}", i + 1), ei.shape(), (n, q))?;
        }
        Ok(Self { a, b, c, f, s, e, graph })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.a.nrows(),
            m: self.b.ncols(),
            p: self.c.nrows(),
            q: self.s.nrows(),
            followers: self.e.len(),
        }
    }

    /// Canonical desk scenario: three double-integrator followers on the
    /// cyclic graph 0→1→2→3→1 tracking a unit-frequency sinusoid.
    pub fn d1() -> Self {
        let edge = |from, to| Edge {
            from,
            to,
            weight: 1.0,
        };
        let graph = Digraph::new(3, vec![edge(0, 1), edge(1, 2), edge(2, 3), edge(3, 1)])
            .expect("D1 graph");
        Self::new(
            mat(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            mat(2, 1, &[0.0, 1.0]),
            mat(1, 2, &[1.0, 0.0]),
            mat(1, 2, &[-1.0, 0.0]),
            mat(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            vec![
                mat(2, 2, &[0.0, 0.0, 1.0, 0.0]),
                mat(2, 2, &[0.0, 0.0, 0.0, 1.0]),
                mat(2, 2, &[0.0, 0.0, 1.0, 1.0]),
            ],
            graph,
        )
        .expect("D1 scenario")
    }
}

/// PBH test: `rank [A − λI, B] = n` at every eigenvalue of `A` in the closed right half-plane.
pub fn is_stabilizable(a: &Mat, b: &Mat) -> Result<bool> {
    let n = a.nrows();
    let spectrum = eig(a)?;
    for lambda in spectrum.distinct(1e-7) {
        if lambda.re < -CLOSED_RHP_TOL {
            continue;
        }
        let mut re = DMatrix::zeros(n, n + b.ncols());
        re.view_mut((0, 0), (n, n))
            .copy_from(&(a - Mat::identity(n, n) * lambda.re));
        re.view_mut((0, n), b.shape()).copy_from(b);
        let mut im = DMatrix::zeros(n, n + b.ncols());
        im.view_mut((0, 0), (n, n))
            .copy_from(&(Mat::identity(n, n) * -lambda.im));
        if complex_rank(&re, &im) < n {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    /// (A, B) stabilizable.
    pub stabilizable: bool,
    /// Every eigenvalue of S has nonnegative real part.
    pub exosystem_antistable: bool,
    /// `rank [[A − λI, B], [C, 0]] = n + p` for all λ ∈ σ(S).
    pub rank_condition: bool,
    /// Every follower reachable from the leader.
    pub spanning_tree: bool,
    pub details: Vec<String>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.stabilizable && self.exosystem_antistable && self.rank_condition && self.spanning_tree
    }
}

pub fn check_assumptions(s: &Scenario) -> AssumptionReport {
    let Dims { n, m, p, .. } = s.dims();
    let mut details = Vec::new();

    let stabilizable = match is_stabilizable(&s.a, &s.b) {
        Ok(ok) => ok,
        Err(e) => {
            details.push(format!("stabilizability test failed: {e}"));
            false
        }
    };
    if !stabilizable {
        details.push("(A,B) fails the PBH test at an unstable eigenvalue".into());
    }

    let (exosystem_antistable, rank_condition) = match eig(&s.s) {
        Ok(spec) => {
            let anti = spec.min_re() >= -CLOSED_RHP_TOL;
            if !anti {
                details.push(format!(
                    "S has an eigenvalue with real part {:.3e}",
                    spec.min_re()
                ));
            }
            let mut rank_ok = true;
            for lambda in spec.distinct(1e-7) {
                let mut re = DMatrix::zeros(n + p, n + m);
                re.view_mut((0, 0), (n, n))
                    .copy_from(&(&s.a - Mat::identity(n, n) * lambda.re));
                re.view_mut((0, n), (n, m)).copy_from(&s.b);
                re.view_mut((n, 0), (p, n)).copy_from(&s.c);
                let mut im = DMatrix::zeros(n + p, n + m);
                im.view_mut((0, 0), (n, n))
                    .copy_from(&(Mat::identity(n, n) * -lambda.im));
                let r = complex_rank(&re, &im);
                if r != n + p {
                    rank_ok = false;
                    details.push(format!(
                        "transmission-zero rank {r} != {} at λ = {lambda}",
                        n + p
                    ));
                }
            }
            (anti, rank_ok)
        }
        Err(e) => {
            details.push(format!("eig(S) failed: {e}"));
            (false, false)
        }
    };

    let spanning_tree = check_spanning_tree(&s.graph);
    if !spanning_tree {
        details.push("some follower is not reachable from the leader".into());
    }

    AssumptionReport {
        stabilizable,
        exosystem_antistable,
        rank_condition,
        spanning_tree,
        details,
    }
}

/// Evaluates a monic polynomial (descending coefficients) at a square matrix.
pub fn poly_at_matrix(coeffs: &[f64], s: &Mat) -> Mat {
    let n = s.nrows();
    let mut acc = DMatrix::zeros(n, n);
    for &c in coeffs {
        acc = &acc * s + Mat::identity(n, n) * c;
    }
    acc
}

/// Least-degree monic annihilating polynomial of `S`, coefficients in descending powers.
///
/// With a `hint`, the hint is verified (annihilating and not reducible to a
/// lower degree) instead of being recomputed.
pub fn minimal_polynomial(s: &Mat, hint: Option<&[f64]>) -> Result<Vec<f64>> {
    if !s.is_square() || s.nrows() == 0 {
        return Err(Error::Dimension("minimal polynomial needs a square matrix".into()));
    }
    let q = s.nrows();
    let alpha = s.amax().max(1.0);
    let scaled = s / alpha;
    let mut powers: Vec<Mat> = vec![Mat::identity(q, q)];
    let mut computed = None;
    for d in 1..=q {
        let next = powers[d - 1].clone() * &scaled;
        let basis = DMatrix::from_fn(q * q, d, |r, c| powers[c].as_slice()[r]);
        let rank_with = rank_tol(&DMatrix::from_fn(q * q, d + 1, |r, c| {
            if c < d {
                powers[c].as_slice()[r]
            } else {
                next.as_slice()[r]
            }
        }))
        .rank;
        if rank_with <= d {
            let rhs = -Vector::from_column_slice(next.as_slice());
            let low = lstsq(&basis, &rhs)?;
            // p(s) = α^d p̃(s/α)
            let mut coeffs = vec![1.0];
            for k in 1..=d {
                coeffs.push(low[d - k] * alpha.powi(k as i32));
            }
            computed = Some(coeffs);
            break;
        }
        powers.push(next);
    }
    let computed = computed.ok_or_else(|| {
        Error::InternalModel("no annihilating polynomial found up to the matrix order".into())
    })?;

    let tol = |deg: usize| 1e-8 * s.norm().max(1.0).powi(deg as i32);
    let check = |c: &[f64]| poly_at_matrix(c, s).norm();
    if check(&computed) >= tol(computed.len() - 1) {
        return Err(Error::InternalModel(
            "computed minimal polynomial does not annihilate S".into(),
        ));
    }

    match hint {
        None => Ok(computed),
        Some(h) => {
            if h.first().copied() != Some(1.0) {
                return Err(Error::InternalModel("minimal-polynomial hint is not monic".into()));
            }
            if check(h) >= tol(h.len() - 1) {
                return Err(Error::InternalModel("minimal-polynomial hint does not annihilate S".into()));
            }
            if h.len() != computed.len() {
                return Err(Error::InternalModel(format!(
                    "minimal-polynomial hint has degree {}, minimal degree is {}",
                    h.len() - 1,
                    computed.len() - 1
                )));
            }
            Ok(h.to_vec())
        }
    }
}

/// Characteristic polynomial (descending, monic) by the Faddeev–LeVerrier recursion.
pub fn char_poly(a: &Mat) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut c_prev = 1.0;
    for k in 1..=n {
        m = a * &m + Mat::identity(n, n) * c_prev;
        let c = -(a * &m).trace() / k as f64;
        coeffs.push(c);
        c_prev = c;
    }
    coeffs
}

#[derive(Clone, Debug)]
pub struct InternalModel {
    pub minpoly: Vec<f64>,
    pub beta: Mat,
    pub sigma: Mat,
    pub g1: Mat,
    pub g2: Mat,
    pub p: usize,
}

impl InternalModel {
    pub fn degree(&self) -> usize {
        self.minpoly.len() - 1
    }

    pub fn nz(&self) -> usize {
        self.g1.nrows()
    }
}

/// p-copy internal model from a companion realisation with input vector `e_d`.
pub fn build_internal_model(minpoly: &[f64], p: usize) -> Result<InternalModel> {
    if minpoly.len() < 2 {
        return Err(Error::InternalModel("minimal polynomial must have degree ≥ 1".into()));
    }
    if (minpoly[0] - 1.0).abs() > 1e-12 {
        return Err(Error::InternalModel("minimal polynomial must be monic".into()));
    }
    if p == 0 {
        return Err(Error::InternalModel("output dimension p must be positive".into()));
    }
    let d = minpoly.len() - 1;
    let mut beta = DMatrix::zeros(d, d);
    for i in 0..d - 1 {
        beta[(i, i + 1)] = 1.0;
    }
    for j in 0..d {
        // last row: −c_0, −c_1, …, −c_{d−1} with c_k the coefficient of s^k
        beta[(d - 1, j)] = -minpoly[d - j];
    }
    let mut sigma = DMatrix::zeros(d, 1);
    sigma[(d - 1, 0)] = 1.0;
    let betas: Vec<&Mat> = std::iter::repeat_n(&beta, p).collect();
    let sigmas: Vec<&Mat> = std::iter::repeat_n(&sigma, p).collect();
    let g1 = blockdiag(&betas);
    let g2 = blockdiag(&sigmas);
    Ok(InternalModel {
        minpoly: minpoly.to_vec(),
        beta,
        sigma,
        g1,
        g2,
        p,
    })
}

/// Augmented follower `Y = [[A, 0], [G2·C, G1]]`, `J = [[B], [0]]`.
#[derive(Clone, Debug)]
pub struct AugmentedPlant {
    pub y: Mat,
    pub j: Mat,
}

impl AugmentedPlant {
    pub fn order(&self) -> usize {
        self.y.nrows()
    }
}

pub fn assemble_augmented(s: &Scenario, im: &InternalModel) -> Result<AugmentedPlant> {
    let Dims { n, m, p, .. } = s.dims();
    if im.p != p || im.g2.ncols() != p {
        return Err(Error::Dimension(format!(
            "internal model built for p = {}, plant has p = {p}",
            im.p
        )));
    }
    let nz = im.nz();
    let mut y = DMatrix::zeros(n + nz, n + nz);
    y.view_mut((0, 0), (n, n)).copy_from(&s.a);
    y.view_mut((n, 0), (nz, n)).copy_from(&(&im.g2 * &s.c));
    y.view_mut((n, n), (nz, nz)).copy_from(&im.g1);
    let mut j = DMatrix::zeros(n + nz, m);
    j.view_mut((0, 0), (n, m)).copy_from(&s.b);
    Ok(AugmentedPlant { y, j })
}

/// [`assemble_augmented`] plus the PBH stabilizability check on `(Y, J)`.
pub fn build_augmented(s: &Scenario, im: &InternalModel) -> Result<AugmentedPlant> {
    let ap = assemble_augmented(s, im)?;
    if !is_stabilizable(&ap.y, &ap.j)? {
        return Err(Error::Assumption(
            "(Y,J) not stabilizable: plant, regulator equations and internal model are inconsistent".into(),
        ));
    }
    Ok(ap)
}
