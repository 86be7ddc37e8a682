//! Dense linear-algebra helpers shared by the kinematic, learning and grasp modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for every pseudo-inverse and rank decision.
pub const PINV_RTOL: f64 = 1e-10;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Thin singular value decomposition `m = u · diag(s) · vᵀ`, singular values descending.
///
/// `u` is `r × c` (columns for zero singular values are zero), `v` is the full `c × c`
/// orthogonal factor.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

const JACOBI_SWEEPS: usize = 80;

/// One-sided Jacobi SVD. Slower than bidiagonalization but accurate to working precision on
/// the small rank-deficient matrices used here, where the bidiagonal QR loses ~1e-8.
pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (r, c) = m.shape();
    let mut w = m.clone();
    let mut v = DMatrix::identity(c, c);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..c {
            for q in p + 1..c {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_columns(&mut w, p, q, cs, sn);
                rotate_columns(&mut v, p, q, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = w.column_iter().map(|col| col.norm()).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut u = DMatrix::zeros(r, c);
    let mut vs = DMatrix::zeros(c, c);
    let mut s = DVector::zeros(c);
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        if norms[j] > 0.0 {
            u.set_column(k, &(w.column(j) / norms[j]));
        }
        vs.set_column(k, &v.column(j));
    }
    Svd { u, s, v: vs }
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, cs: f64, sn: f64) {
    for i in 0..m.nrows() {
        let a = m[(i, p)];
        let b = m[(i, q)];
        m[(i, p)] = cs * a - sn * b;
        m[(i, q)] = sn * a + cs * b;
    }
}

fn cutoff(s: &DVector<f64>) -> f64 {
    (PINV_RTOL * s.max()).max(f64::MIN_POSITIVE)
}

/// Moore-Penrose pseudo-inverse through the SVD. Singular values below
/// `PINV_RTOL * sigma_max` are treated as zero. Returns the inverse and the numerical rank.
pub fn pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return (DMatrix::zeros(c, r), 0);
    }
    if r < c {
        // fewer column pairs to rotate on the tall side
        let (p, rank) = pinv(&m.transpose());
        return (p.transpose(), rank);
    }
    let d = svd(m);
    let cut = cutoff(&d.s);
    let mut out = DMatrix::zeros(c, r);
    let mut rank = 0;
    for (k, &s) in d.s.iter().enumerate() {
        if s > cut {
            rank += 1;
            out += (d.v.column(k) / s) * d.u.column(k).transpose();
        }
    }
    (out, rank)
}

pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let d = if m.nrows() < m.ncols() {
        svd(&m.transpose())
    } else {
        svd(m)
    };
    let cut = cutoff(&d.s);
    d.s.iter().filter(|&&s| s > cut).count()
}

/// Orthonormal basis of the right null space of `m` (columns).
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let c = m.ncols();
    if c == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(c, c);
    }
    let d = svd(m);
    let cut = cutoff(&d.s);
    let cols: Vec<DVector<f64>> =
        d.s.iter()
            .enumerate()
            .filter(|(_, &s)| s <= cut)
            .map(|(k, _)| d.v.column(k).into_owned())
            .collect();
    if cols.is_empty() {
        return DMatrix::zeros(c, 0);
    }
    DMatrix::from_columns(&cols)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrize then add diagonal jitter (1e-10 doubling up to 1e-6) until a Cholesky
/// factorization succeeds.
pub fn spd_repair(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    let sym = symmetrize(m);
    if Cholesky::new(sym.clone()).is_some() {
        return Ok(sym);
    }
    let n = sym.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX {
        let cand = &sym + DMatrix::identity(n, n) * jitter;
        if Cholesky::new(cand.clone()).is_some() {
            return Ok(cand);
        }
        jitter *= 2.0;
    }
    Err(Error::NotPositiveDefinite(format!(
        "{n}x{n} matrix still indefinite after jitter {JITTER_MAX:e}"
    )))
}

/// Symmetric part with every eigenvalue raised to at least `floor`.
pub fn spd_floor(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return symmetrize(m);
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&out)
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (m - m.transpose()).amax() <= 1e-9 * (1.0 + m.amax())
        && Cholesky::new(m.clone()).is_some()
}

/// Ratio of extreme eigenvalues of a symmetric matrix.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = symmetrize(m).symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Result of a linear program in standard form.
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

/// Smallest pivot element accepted, relative to the problem scale; tinier pivots wreck the tableau.
const PIVOT_TOL: f64 = 1e-9;
/// Right-hand-side perturbation that keeps every basis nondegenerate, relative to the problem scale.
const PERTURBATION: f64 = 1e-10;
const MAX_PIVOTS: usize = 50_000;

/// Maximize `c^T x` subject to `A x = b`, `x >= 0` with a two-phase tableau simplex.
/// Degeneracy is broken by perturbing `b`; the returned point solves the unperturbed system
/// in the final basis. Intended for the small dense problems of grasp analysis.
pub fn simplex_max(c: &[f64], a: &DMatrix<f64>, b: &[f64]) -> LpOutcome {
    let (m, n) = a.shape();
    assert_eq!(c.len(), n, "objective length");
    assert_eq!(b.len(), m, "rhs length");
    let scale = a
        .amax()
        .max(b.iter().fold(0.0f64, |s, v| s.max(v.abs())))
        .max(1.0);
    let eps = 1e-11 * scale;
    let pivot_floor = PIVOT_TOL * scale;
    let signs: Vec<f64> = b
        .iter()
        .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let delta: Vec<f64> = (0..m)
        .map(|i| PERTURBATION * scale * (1.0 + i as f64 / m as f64))
        .collect();

    // columns: n originals, m artificials, rhs
    let width = n + m + 1;
    let mut tab: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; width];
            for j in 0..n {
                row[j] = signs[i] * a[(i, j)];
            }
            row[n + i] = 1.0;
            row[width - 1] = signs[i] * b[i] + delta[i];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut phase1 = vec![0.0; n + m];
    for v in phase1.iter_mut().skip(n) {
        *v = -1.0;
    }
    let all = vec![true; n + m];
    match run_simplex(&mut tab, &mut basis, &phase1, &all, eps, pivot_floor) {
        Ok(()) => {}
        Err(Stop::Unbounded) => unreachable!("phase one is bounded by zero"),
        Err(Stop::Stalled) => return LpOutcome::Infeasible,
    }
    let infeas: f64 = basis
        .iter()
        .zip(&tab)
        .filter(|(&bj, _)| bj >= n)
        .map(|(_, row)| row[width - 1])
        .sum();
    let slack: f64 = delta.iter().sum();
    if infeas > 1e-9 * scale + slack {
        return LpOutcome::Infeasible;
    }
    // drive remaining artificials out of the basis; drop redundant rows
    let mut i = 0;
    while i < tab.len() {
        if basis[i] >= n {
            if let Some(j) = (0..n)
                .filter(|&j| tab[i][j].abs() > pivot_floor)
                .max_by(|&x, &y| tab[i][x].abs().total_cmp(&tab[i][y].abs()))
            {
                pivot(&mut tab, &mut basis, i, j);
                i += 1;
            } else {
                tab.remove(i);
                basis.remove(i);
            }
        } else {
            i += 1;
        }
    }

    let mut obj = vec![0.0; n + m];
    obj[..n].copy_from_slice(c);
    let allowed: Vec<bool> = (0..n + m).map(|j| j < n).collect();
    match run_simplex(&mut tab, &mut basis, &obj, &allowed, eps, pivot_floor) {
        Ok(()) => {}
        Err(Stop::Unbounded) => return LpOutcome::Unbounded,
        Err(Stop::Stalled) => return LpOutcome::Infeasible,
    }
    // the artificial columns hold the basis inverse, which undoes the perturbation
    let mut x = vec![0.0; n];
    for (row, &bj) in tab.iter().zip(&basis) {
        if bj < n {
            let shift: f64 = (0..m).map(|k| row[n + k] * delta[k]).sum();
            x[bj] = (row[width - 1] - shift).max(0.0);
        }
    }
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    LpOutcome::Optimal { x, value }
}

enum Stop {
    Unbounded,
    Stalled,
}

/// Bland's entering rule with a min-ratio leaving rule over pivots above `pivot_floor`.
fn run_simplex(
    tab: &mut [Vec<f64>],
    basis: &mut [usize],
    obj: &[f64],
    allowed: &[bool],
    eps: f64,
    pivot_floor: f64,
) -> std::result::Result<(), Stop> {
    let ncols = obj.len();
    let rhs = tab.first().map(|r| r.len() - 1).unwrap_or(0);
    for _ in 0..MAX_PIVOTS {
        let entering = (0..ncols).find(|&j| {
            if !allowed[j] || basis.contains(&j) {
                return false;
            }
            let reduced: f64 = obj[j]
                - tab
                    .iter()
                    .zip(basis.iter())
                    .map(|(row, &bi)| obj[bi] * row[j])
                    .sum::<f64>();
            reduced > eps
        });
        let Some(j) = entering else {
            return Ok(());
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in tab.iter().enumerate() {
            if row[j] > pivot_floor {
                let ratio = row[rhs].max(0.0) / row[j];
                let better = match best {
                    None => true,
                    Some((bi, br)) => ratio < br || (ratio == br && basis[i] < basis[bi]),
                };
                if better {
                    best = Some((i, ratio));
                }
            }
        }
        let Some((i, _)) = best else {
            return Err(Stop::Unbounded);
        };
        pivot(tab, basis, i, j);
        for row in tab.iter_mut() {
            if row[rhs] < 0.0 {
                row[rhs] = 0.0;
            }
        }
    }
    log::warn!("simplex stopped after {MAX_PIVOTS} pivots");
    Err(Stop::Stalled)
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
    let p = tab[r][c];
    for v in tab[r].iter_mut() {
        *v /= p;
    }
    let prow = tab[r].clone();
    for (i, row) in tab.iter_mut().enumerate() {
        if i != r {
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
            }
        }
    }
    basis[r] = c;
}
