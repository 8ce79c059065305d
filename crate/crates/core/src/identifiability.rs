//! Brute-force identifiability checks for small networks.
//!
//! Noise-free data satisfy `Y_t^T F_t = X^T` with `F_t = (I - A^T) B^{-1}`.
//! Column `j` of `F_t` holds `1 / b_jj` on the diagonal and `-a_jk / b_jj`
//! for the in-neighbours `k` of `j`, so sparse rows of `A` make sparse
//! columns of `F_t`.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::model::{scale_to_spectral_radius, StatePair};

/// Largest column count accepted by [`kruskal_rank`] without `max_check`.
pub const KRUSKAL_MAX_COLS: usize = 25;
/// Largest network accepted by [`verify_sparse_uniqueness`].
pub const UNIQUENESS_MAX_NODES: usize = 8;
/// Residual below which a restricted least-squares fit counts as exact
/// (relative to the right-hand side).
pub const EXACT_FIT_TOL: f64 = 1e-8;

/// Largest `k` such that every `k` columns of `m` are linearly independent,
/// searched up to `max_check` (default: all columns).
pub fn kruskal_rank(m: &DMatrix<f64>, max_check: Option<usize>) -> Result<usize> {
    let c = m.ncols();
    if max_check.is_none() && c > KRUSKAL_MAX_COLS {
        return Err(Error::ResourceGuard(format!(
            "Kruskal rank over {c} columns needs an explicit max_check (limit {KRUSKAL_MAX_COLS})"
        )));
    }
    let limit = max_check.unwrap_or(c).min(c).min(m.nrows());
    for k in 1..=limit {
        let all_independent = (0..c)
            .combinations(k)
            .par_bridge()
            .all(|cols| linalg::numerical_rank(&m.select_columns(&cols), RANK_TOL) == k);
        if !all_independent {
            return Ok(k - 1);
        }
    }
    Ok(limit)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub n: usize,
    pub c: usize,
    /// Bound on nonzeros per row of `A`, when checked.
    pub k_sparsity: Option<usize>,
    pub rank_x: usize,
    /// `kr(X^T)`, computed up to `kruskal_checked_up_to`.
    pub kruskal_rank_xt: usize,
    pub kruskal_checked_up_to: usize,
    /// `N <= C` and `X` has full row rank.
    pub prop1_ok: bool,
    /// `kr(X^T) >= 2K + 1`.
    pub prop2_ok: Option<bool>,
}

fn report(x: &DMatrix<f64>, k: Option<usize>) -> Result<IdentifiabilityReport> {
    let (n, c) = x.shape();
    let rank_x = linalg::numerical_rank(x, RANK_TOL);
    let xt = x.transpose();
    let check = if n <= KRUSKAL_MAX_COLS {
        n
    } else {
        match k {
            Some(k) => (2 * k + 1).min(n),
            None => 0,
        }
    };
    let kr = if check == 0 {
        0
    } else {
        kruskal_rank(&xt, Some(check))?
    };
    Ok(IdentifiabilityReport {
        n,
        c,
        k_sparsity: k,
        rank_x,
        kruskal_rank_xt: kr,
        kruskal_checked_up_to: check,
        prop1_ok: n <= c && rank_x == n,
        prop2_ok: k.map(|k| kr > 2 * k),
    })
}

/// Full-row-rank condition for exact closed-form recovery.
pub fn check_prop1(x: &DMatrix<f64>) -> Result<IdentifiabilityReport> {
    report(x, None)
}

/// Kruskal-rank condition for recovery of `K`-sparse rows.
pub fn check_prop2(x: &DMatrix<f64>, k: usize) -> Result<IdentifiabilityReport> {
    report(x, Some(k))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseUniqueness {
    /// Every column of `F_t` has a single exact sparse solution.
    pub unique: bool,
    /// Column (1-based) where several distinct solutions were found, or no
    /// solution at all.
    pub failed_column: Option<usize>,
    /// `kr(Y_t^T) >= 2K + 1`, which guarantees uniqueness.
    pub kruskal_certificate: bool,
    /// `(A, b)` read off the unique `F_t`.
    pub recovered: Option<StatePair>,
}

/// Exact solutions of `Y^T f = x_j` supported on sets of at most
/// `max_support` indices that include `j`.
fn exact_column_solutions(
    yt: &DMatrix<f64>,
    rhs: &DVector<f64>,
    j: usize,
    max_support: usize,
) -> Vec<DVector<f64>> {
    let n = yt.ncols();
    let others: Vec<usize> = (0..n).filter(|&k| k != j).collect();
    let tol = EXACT_FIT_TOL * rhs.norm().max(1.0);
    let mut sols: Vec<DVector<f64>> = Vec::new();
    for extra in 0..max_support.min(n) {
        for subset in others.iter().copied().combinations(extra) {
            let mut support = vec![j];
            support.extend(subset);
            let sub = yt.select_columns(&support);
            if !linalg::has_full_column_rank(&sub, RANK_TOL) {
                continue;
            }
            let Ok(coef) = sub.clone().svd(true, true).solve(rhs, 0.0) else {
                continue;
            };
            if (&sub * &coef - rhs).norm() > tol {
                continue;
            }
            let mut f = DVector::zeros(n);
            for (k, &idx) in support.iter().enumerate() {
                f[idx] = coef[k];
            }
            let seen = sols
                .iter()
                .any(|g| (g - &f).norm() <= 1e-6 * g.norm().max(f.norm()).max(1e-300));
            if !seen {
                sols.push(f);
            }
        }
    }
    sols
}

/// Searches every column of `F_t` over supports of size at most `2K + 1`
/// containing the diagonal and checks that exactly one exact solution
/// exists.
pub fn verify_sparse_uniqueness(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k: usize,
) -> Result<SparseUniqueness> {
    if y.shape() != x.shape() {
        return Err(Error::dims(format!(
            "Y is {}x{}, X is {}x{}",
            y.nrows(),
            y.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    let n = y.nrows();
    if n > UNIQUENESS_MAX_NODES {
        return Err(Error::ResourceGuard(format!(
            "support enumeration limited to N <= {UNIQUENESS_MAX_NODES}, got {n}"
        )));
    }
    let yt = y.transpose();
    let max_support = 2 * k + 1;
    let certificate = kruskal_rank(&yt, Some(max_support))? >= max_support;
    let columns: Vec<Vec<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| exact_column_solutions(&yt, &x.row(j).transpose(), j, max_support))
        .collect();
    let mut f = DMatrix::zeros(n, n);
    for (j, sols) in columns.iter().enumerate() {
        if sols.len() != 1 {
            return Ok(SparseUniqueness {
                unique: false,
                failed_column: Some(j + 1),
                kruskal_certificate: certificate,
                recovered: None,
            });
        }
        f.set_column(j, &sols[0]);
    }
    Ok(SparseUniqueness {
        unique: true,
        failed_column: None,
        kruskal_certificate: certificate,
        recovered: pair_from_f(&f).ok(),
    })
}

/// `F = (I - A^T) B^{-1}` for a hollow `A` and diagonal `B`.
pub fn f_from_pair(pair: &StatePair) -> DMatrix<f64> {
    let n = pair.n_nodes();
    let mut f = DMatrix::identity(n, n) - pair.a.transpose();
    for (j, mut col) in f.column_iter_mut().enumerate() {
        col /= pair.b[j];
    }
    f
}

/// Inverse of [`f_from_pair`]: `B = Diag(F)^{-1}`, `A = I - B F^T`.
pub fn pair_from_f(f: &DMatrix<f64>) -> Result<StatePair> {
    let n = f.nrows();
    if let Some(j) = (0..n).find(|&j| f[(j, j)] == 0.0) {
        return Err(Error::IdentifiabilityViolation { node: j + 1 });
    }
    let b = DVector::from_fn(n, |j, _| 1.0 / f[(j, j)]);
    let a = DMatrix::identity(n, n) - DMatrix::from_diagonal(&b) * f.transpose();
    StatePair::hollowed(a, b, 0)
}

/// Fraction of random hollow `A` (support density `density`, weights
/// uniform in `[-1, 1]`, scaled to `rho(|A|) = 0.5`) with
/// `|det(I - A^T)| > 1e-12`.
pub fn lemma1_empirical(n_trials: usize, n: usize, density: f64, rng_seed: u64) -> Result<f64> {
    if n_trials == 0 || n == 0 {
        return Err(Error::invalid("need at least one trial and one node"));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::invalid(format!("density {density} outside [0, 1]")));
    }
    let ok = (0..n_trials)
        .into_par_iter()
        .filter(|&trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(trial as u64);
            let mut a = DMatrix::from_fn(n, n, |i, j| {
                if i != j && rng.random::<f64>() < density {
                    rng.random_range(-1.0..=1.0)
                } else {
                    0.0
                }
            });
            scale_to_spectral_radius(&mut a, 0.5);
            (DMatrix::identity(n, n) - a.transpose())
                .determinant()
                .abs()
                > 1e-12
        })
        .count();
    Ok(ok as f64 / n_trials as f64)
}
