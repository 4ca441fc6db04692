//! Dense real linear algebra used by every other module.
//!
//! Matrices are `nalgebra::DMatrix<f64>` (column-major, so `as_slice()` is
//! exactly the column-stacking `vec` operator). The half-vectorisations
//! `vecv`/`vecs` scan the upper triangle row by row.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance on asymmetry accepted by `vecs` and friends.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Builds a matrix from a row-major slice.
pub fn mat(rows: usize, cols: usize, row_major: &[f64]) -> Mat {
    assert_eq!(row_major.len(), rows * cols, "row-major data length");
    DMatrix::from_row_slice(rows, cols, row_major)
}

/// Builds a matrix from nested rows; all rows must share a length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue("non-finite matrix entry".into()));
    }
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Half-vectorisation length `n(n+1)/2`.
pub fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Column-stacking vectorisation.
pub fn vec(a: &Mat) -> Vector {
    DVector::from_column_slice(a.as_slice())
}

/// Quadratic monomials `[b1², b1b2, …, b1bn, b2², …, bn²]`.
pub fn vecv(b: &[f64]) -> Vector {
    let n = b.len();
    let mut out = Vec::with_capacity(tri(n));
    for i in 0..n {
        for j in i..n {
            out.push(b[i] * b[j]);
        }
    }
    DVector::from_vec(out)
}

fn asymmetry(p: &Mat) -> f64 {
    let scale = p.amax().max(1.0);
    (p - p.transpose()).amax() / scale
}

/// `½(P + Pᵀ)`, rejecting inputs whose relative asymmetry exceeds `SYMMETRY_TOL`.
pub fn symmetrize(p: &Mat) -> Result<Mat> {
    if !p.is_square() {
        return Err(Error::Dimension(format!(
            "expected square matrix, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    let asym = asymmetry(p);
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }
    Ok((p + p.transpose()) * 0.5)
}

/// Packs a symmetric matrix as `[p11, 2p12, …, 2p1n, p22, …, pnn]`.
pub fn vecs(p: &Mat) -> Result<Vector> {
    let p = symmetrize(p)?;
    let n = p.nrows();
    let mut out = Vec::with_capacity(tri(n));
    for i in 0..n {
        out.push(p[(i, i)]);
        for j in i + 1..n {
            out.push(2.0 * p[(i, j)]);
        }
    }
    Ok(DVector::from_vec(out))
}

/// Inverse of [`vecs`].
pub fn unvecs(v: &[f64], n: usize) -> Result<Mat> {
    if v.len() != tri(n) {
        return Err(Error::Dimension(format!(
            "unvecs: length {} does not match n = {n}",
            v.len()
        )));
    }
    let mut p = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        p[(i, i)] = v[k];
        k += 1;
        for j in i + 1..n {
            p[(i, j)] = 0.5 * v[k];
            p[(j, i)] = 0.5 * v[k];
            k += 1;
        }
    }
    Ok(p)
}

/// The constant matrix `M` (`n² × n(n+1)/2`) with `M·vecs(Q) = vec(Q)` for symmetric `Q`.
pub fn duplication(n: usize) -> Mat {
    let mut m = DMatrix::zeros(n * n, tri(n));
    let mut k = 0;
    for i in 0..n {
        m[(i * n + i, k)] = 1.0;
        k += 1;
        for j in i + 1..n {
            // vec index of (row i, col j) is j*n + i
            m[(j * n + i, k)] = 0.5;
            m[(i * n + j, k)] = 0.5;
            k += 1;
        }
    }
    m
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Least-squares solve of `Psi·x ≈ phi` by Householder QR with column pivoting.
///
/// Columns are equilibrated to unit norm before factorisation, which leaves
/// the minimiser unchanged but keeps the rank probe insensitive to the very
/// different magnitudes of regressor blocks. Rank is the number of pivots
/// with `|r_kk| > τ·|r_00|`, `τ = 1e-8·max(rows, cols)`.
pub fn lstsq(psi: &Mat, phi: &Vector) -> Result<Vector> {
    LstsqFactor::new(psi)?.solve(phi)
}

/// Reusable factorisation behind [`lstsq`] for a fixed left-hand side.
#[derive(Clone, Debug)]
pub struct LstsqFactor {
    r: Mat,
    // Householder vectors, one per step, acting on rows k..
    reflectors: Vec<Vec<f64>>,
    perm: Vec<usize>,
    scale: Vec<f64>,
    nrows: usize,
}

impl LstsqFactor {
    pub fn new(psi: &Mat) -> Result<Self> {
        let (s, c) = psi.shape();
        if psi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue("lstsq: non-finite input".into()));
        }
        let scale: Vec<f64> = psi
            .column_iter()
            .map(|col| {
                let nrm = col.norm();
                if nrm > 0.0 {
                    nrm
                } else {
                    1.0
                }
            })
            .collect();
        let mut a = psi.clone();
        for (j, sc) in scale.iter().enumerate() {
            a.column_mut(j).unscale_mut(*sc);
        }
        let mut perm: Vec<usize> = (0..c).collect();
        let steps = s.min(c);
        let mut diag = vec![0.0; steps];
        let mut reflectors = Vec::with_capacity(steps);

        for k in 0..steps {
            // pivot on the largest trailing column norm
            let (mut best, mut best_norm) = (k, -1.0);
            for j in k..c {
                let nrm = a.view((k, j), (s - k, 1)).norm_squared();
                if nrm > best_norm {
                    best = j;
                    best_norm = nrm;
                }
            }
            if best != k {
                a.swap_columns(k, best);
                perm.swap(k, best);
            }

            let xnorm = a.view((k, k), (s - k, 1)).norm();
            if xnorm == 0.0 {
                reflectors.push(Vec::new());
                continue;
            }
            let alpha = if a[(k, k)] > 0.0 { -xnorm } else { xnorm };
            let mut v: Vec<f64> = (k..s).map(|i| a[(i, k)]).collect();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                for j in k..c {
                    let dot: f64 = (k..s).map(|i| v[i - k] * a[(i, j)]).sum();
                    let f = 2.0 * dot / vnorm2;
                    for i in k..s {
                        a[(i, j)] -= f * v[i - k];
                    }
                }
                let inv = 1.0 / vnorm2.sqrt();
                v.iter_mut().for_each(|x| *x *= inv);
                reflectors.push(v);
            } else {
                reflectors.push(Vec::new());
            }
            diag[k] = a[(k, k)];
        }

        let tau = 1e-8 * s.max(c) as f64;
        let lead = diag.first().map_or(0.0, |d| d.abs());
        let rank = diag.iter().filter(|d| d.abs() > tau * lead).count();
        if c > 0 && (rank < c || lead == 0.0) {
            return Err(Error::RankDeficient {
                required: c,
                achieved: rank,
            });
        }
        Ok(Self {
            r: a.rows(0, steps).into_owned(),
            reflectors,
            perm,
            scale,
            nrows: s,
        })
    }

    pub fn rows(&self) -> usize {
        self.nrows
    }

    pub fn solve(&self, phi: &Vector) -> Result<Vector> {
        let c = self.perm.len();
        if c == 0 {
            return Ok(DVector::zeros(0));
        }
        let s = self.nrows;
        if phi.len() != s {
            return Err(Error::Dimension(format!(
                "lstsq: {s} rows but right-hand side of length {}",
                phi.len()
            )));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue("lstsq: non-finite input".into()));
        }
        let mut b = phi.clone();
        for (k, v) in self.reflectors.iter().enumerate() {
            if v.is_empty() {
                continue;
            }
            let dot: f64 = (k..s).map(|i| v[i - k] * b[i]).sum();
            for i in k..s {
                b[i] -= 2.0 * dot * v[i - k];
            }
        }
        let a = &self.r;
        let mut y = vec![0.0; c];
        for k in (0..c).rev() {
            let mut acc = b[k];
            for j in k + 1..c {
                acc -= a[(k, j)] * y[j];
            }
            y[k] = acc / a[(k, k)];
        }
        let mut x = DVector::zeros(c);
        for (k, &col) in self.perm.iter().enumerate() {
            x[col] = y[k] / self.scale[col];
        }
        Ok(x)
    }
}

/// Eigenvalues of a real square matrix, sorted by (real, imaginary) part.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
}

impl Spectrum {
    pub fn max_re(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_re(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Eigenvalues with clusters closer than `tol` merged.
    pub fn distinct(&self, tol: f64) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = Vec::new();
        for z in &self.eigenvalues {
            if !out.iter().any(|w| (w - z).norm() < tol) {
                out.push(*z);
            }
        }
        out
    }
}

const HQR_MAX_ITS: usize = 60;

/// Eigenvalues via balancing, Hessenberg reduction and Francis double-shift QR.
pub fn eig(a: &Mat) -> Result<Spectrum> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "eig: matrix is {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue("eig: non-finite entry".into()));
    }
    let n = a.nrows();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).iter().copied().collect()).collect();
    balance(&mut h);
    hessenberg(&mut h);
    let mut eigenvalues = hqr(&mut h).ok_or(Error::EigenNonConvergence { order: n })?;
    eigenvalues.sort_by(|x, y| {
        x.re.partial_cmp(&y.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.im.partial_cmp(&y.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(Spectrum { eigenvalues })
}

fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let n = a.len();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i][j] *= g;
                    }
                    for row in a.iter_mut() {
                        row[i] *= f;
                    }
                }
            }
        }
    }
}

/// Reduction to upper Hessenberg form by stabilised elementary similarity transforms.
fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    for m in 1..n.saturating_sub(1) {
        let mut x: f64 = 0.0;
        let mut pivot = m;
        for j in m..n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                pivot = j;
            }
        }
        if pivot != m {
            a.swap(pivot, m);
            for row in a.iter_mut() {
                row.swap(pivot, m);
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut() {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for i in 2..n {
        for j in 0..i - 1 {
            a[i][j] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// All eigenvalues of an upper Hessenberg matrix (destroys the input).
fn hqr(a: &mut [Vec<f64>]) -> Option<Vec<Complex64>> {
    let n = a.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    if n == 0 {
        return Some(out);
    }
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l >= 1 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nu][nu];
            if l == nu {
                out[nu] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = a[nu - 1][nu - 1];
            let mut w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    let lo = x + z;
                    let hi = if z != 0.0 { x - w / z } else { lo };
                    out[nu - 1] = Complex64::new(lo, 0.0);
                    out[nu] = Complex64::new(hi, 0.0);
                } else {
                    out[nu - 1] = Complex64::new(x + p, -z);
                    out[nu] = Complex64::new(x + p, z);
                }
                nn -= 2;
                break;
            }
            if its == HQR_MAX_ITS {
                return None;
            }
            if its > 0 && its % 10 == 0 {
                // exceptional shift
                t += x;
                for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                    row[i] -= x;
                }
                let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;

            let (mut p, mut q, mut r, mut z);
            let mut m = nu - 2;
            loop {
                z = a[m][m];
                r = x - z;
                let s = y - z;
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - r - s;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = 0.0;
                    if k != nu - 1 {
                        r = a[k + 2][k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k != nu - 1 {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * z;
                        }
                        a[k + 1][j] -= pp * y;
                        a[k][j] -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for row in a.iter_mut().take(mmin + 1).skip(l) {
                        let mut pp = x * row[k] + y * row[k + 1];
                        if k != nu - 1 {
                            pp += z * row[k + 2];
                            row[k + 2] -= pp * r;
                        }
                        row[k + 1] -= pp * q;
                        row[k] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Some(out)
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(a: &Mat) -> Result<f64> {
    Ok(eig(a)?.max_re())
}

/// True iff every eigenvalue has real part below `-margin`.
pub fn is_hurwitz(a: &Mat, margin: f64) -> Result<bool> {
    if margin < 0.0 {
        return Err(Error::InvalidValue(format!("negative Hurwitz margin {margin}")));
    }
    Ok(spectral_abscissa(a)? < -margin)
}

/// Solves `AᵀP + PA + Q = 0` by Kronecker vectorisation.
pub fn solve_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "lyapunov: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let q = symmetrize(q)?;
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz {
            abscissa,
            context: "Lyapunov solve requires a Hurwitz matrix".into(),
        });
    }
    let id = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let lhs = kron(&id, &at) + kron(&at, &id);
    let rhs = -vec(&q);
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Assumption("singular Lyapunov operator".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Frobenius norm of the Lyapunov residual `AᵀP + PA + Q`.
pub fn lyapunov_residual(a: &Mat, p: &Mat, q: &Mat) -> f64 {
    (a.transpose() * p + p * a + q).norm()
}

/// Numerical rank and the singular-value gap at the cut.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    /// Smallest accepted over largest rejected singular value (`inf` when nothing is rejected).
    pub gap: f64,
}

/// Numerical rank: singular values above `τ·σ_max`, `τ = 1e-8·max(rows, cols)`.
pub fn rank_tol(a: &Mat) -> RankInfo {
    if a.nrows() == 0 || a.ncols() == 0 {
        return RankInfo {
            rank: 0,
            gap: f64::INFINITY,
        };
    }
    let sv = a.clone().svd(false, false).singular_values;
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    let smax = sv[0];
    if smax == 0.0 {
        return RankInfo {
            rank: 0,
            gap: f64::INFINITY,
        };
    }
    let tau = 1e-8 * a.nrows().max(a.ncols()) as f64;
    let rank = sv.iter().filter(|&&s| s > tau * smax).count();
    let gap = match (rank.checked_sub(1).map(|i| sv[i]), sv.get(rank)) {
        (Some(acc), Some(&rej)) if rej > 0.0 => acc / rej,
        (Some(_), _) => f64::INFINITY,
        (None, _) => 0.0,
    };
    RankInfo { rank, gap }
}

/// Rank of `re + i·im` through the real embedding `[[re, −im], [im, re]]`.
pub fn complex_rank(re: &Mat, im: &Mat) -> usize {
    let (r, c) = re.shape();
    let mut big = DMatrix::zeros(2 * r, 2 * c);
    big.view_mut((0, 0), (r, c)).copy_from(re);
    big.view_mut((0, c), (r, c)).copy_from(&(-im));
    big.view_mut((r, 0), (r, c)).copy_from(im);
    big.view_mut((r, c), (r, c)).copy_from(re);
    rank_tol(&big).rank / 2
}

/// Column-normalises a copy of `a` (zero columns untouched).
pub fn equilibrate_columns(a: &Mat) -> Mat {
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col.unscale_mut(nrm);
        }
    }
    out
}

/// Horizontal concatenation of equally tall blocks.
pub fn hcat(blocks: &[&Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hcat row mismatch");
        out.view_mut((0, at), b.shape()).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Block-diagonal assembly.
pub fn blockdiag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}
