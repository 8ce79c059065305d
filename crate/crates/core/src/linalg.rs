//! Dense linear-algebra helpers shared by the estimators.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Numerical rank is
//! defined once, through [`RANK_TOL`], and reused by every module that needs
//! it.

use nalgebra::{DMatrix, DVector, Schur};

/// Relative singular-value threshold defining numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// Condition numbers above this make a linear system count as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Floor returned when a Lipschitz/eigenvalue estimate comes out as zero.
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;

/// Singular values of `m`, largest first.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        None => 0,
        Some(&max) if max <= 0.0 || !max.is_finite() => 0,
        Some(&max) => sv.iter().filter(|&&s| s > tol * max).count(),
    }
}

/// True when `m` (tall or square) has numerically independent columns.
pub fn has_full_column_rank(m: &DMatrix<f64>, tol: f64) -> bool {
    m.ncols() <= m.nrows() && numerical_rank(m, tol) == m.ncols()
}

fn norm_one(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse of a square matrix through a partial-pivoting LU factorization,
/// together with the 1-norm condition number `||M||_1 ||M^-1||_1`.
///
/// Returns `None` when the factorization breaks down, the inverse is not
/// finite, or the condition number exceeds [`MAX_CONDITION`].
pub fn checked_inverse(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    if !m.is_square() {
        return None;
    }
    if m.nrows() == 0 {
        return Some((DMatrix::zeros(0, 0), 1.0));
    }
    let inv = m.clone().lu().try_inverse()?;
    if inv.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let cond = norm_one(m) * norm_one(&inv);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return None;
    }
    Some((inv, cond))
}

/// Like [`checked_inverse`] but reports the condition estimate on failure
/// (infinite when the factorization itself fails).
pub fn inverse_or_condition(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let Some(inv) = m.clone().lu().try_inverse() else {
        return Err(f64::INFINITY);
    };
    let cond = norm_one(m) * norm_one(&inv);
    if !cond.is_finite() || cond > MAX_CONDITION || inv.iter().any(|v| !v.is_finite()) {
        return Err(cond);
    }
    Ok(inv)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration.
///
/// `start` warm-starts the iteration; the returned vector can be fed back on
/// the next call. Stops when the Rayleigh quotient changes by less than
/// `tol` (relative).
pub fn power_iteration_psd(
    m: &DMatrix<f64>,
    start: Option<&DVector<f64>>,
    tol: f64,
    max_iter: usize,
) -> (f64, DVector<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (0.0, DVector::zeros(0));
    }
    let mut v = match start {
        Some(s) if s.len() == n && s.norm() > 0.0 => s.normalize(),
        // A non-symmetric start avoids landing exactly orthogonal to the
        // dominant eigenvector for structured matrices.
        _ => DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3).normalize(),
    };
    let mut lambda = 0.0;
    for _ in 0..max_iter.max(1) {
        let w = m * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 || !norm.is_finite() {
            return (0.0, v);
        }
        v = w / norm;
        let converged = (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        if converged {
            break;
        }
    }
    (lambda, v)
}

/// Spectral radius `max |lambda_i|` of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if let Some(schur) = Schur::try_new(m.clone(), 1e-14, 10_000) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
    }
    // Gelfand's formula, ||M^e||^(1/e), with e = 2^40 and the scale kept in
    // log space.
    let mut p = m.clone();
    let mut log_scale = 0.0;
    let mut exponent = 1.0;
    for _ in 0..40 {
        let s = p.norm();
        if s == 0.0 {
            return 0.0;
        }
        p /= s;
        log_scale += s.ln();
        p = &p * &p;
        log_scale *= 2.0;
        exponent *= 2.0;
    }
    ((p.norm().ln() + log_scale) / exponent).exp()
}

/// True when the directed graph of nonzero entries of `m` has no cycle
/// (self-loops count as cycles). Such a matrix is nilpotent.
pub fn support_is_acyclic(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let mut indeg = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if m[(i, j)] != 0.0 {
                indeg[j] += 1;
            }
        }
    }
    let mut stack: Vec<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
    let mut seen = 0;
    while let Some(i) = stack.pop() {
        seen += 1;
        for j in 0..n {
            if m[(i, j)] != 0.0 {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    stack.push(j);
                }
            }
        }
    }
    seen == n
}

/// Spectral radius of the entrywise absolute value `|m|`.
///
/// Exactly zero for acyclic supports, where an eigen-solver would only
/// return rounding noise that can be far from zero for long chains.
pub fn abs_spectral_radius(m: &DMatrix<f64>) -> f64 {
    if support_is_acyclic(m) {
        return 0.0;
    }
    spectral_radius(&m.abs())
}

/// Copy of `v` with entry `skip` removed.
pub fn drop_entry(v: &DVector<f64>, skip: usize) -> DVector<f64> {
    DVector::from_iterator(
        v.len() - 1,
        v.iter()
            .enumerate()
            .filter(|(j, _)| *j != skip)
            .map(|(_, x)| *x),
    )
}

/// Inverse of [`drop_entry`]: re-insert a zero at position `at`.
pub fn insert_zero(v: &DVector<f64>, at: usize) -> DVector<f64> {
    let mut out = DVector::zeros(v.len() + 1);
    for (j, x) in v.iter().enumerate() {
        out[if j < at { j } else { j + 1 }] = *x;
    }
    out
}

/// Relative Frobenius distance `||a - b|| / max(||b||, tiny)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
