//! Ridge-regularized per-interval estimates used to seed the tracker.
//!
//! Each interval is fit on its own by
//!
//! ```text
//! min_{a_{-i}, b_ii}  1/2 ||y_i - Y_{-i}^T a_{-i} - b_ii x_i||^2 + mu ||a_{-i}||^2
//! ```
//!
//! node by node, alternating the exact minimizers in `a_{-i}` and `b_ii`.
//! The per-interval estimates are then clustered into `S` initial states.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{unvectorize_theta, vectorize_theta, ThetaVector};
use crate::error::{Error, Result};
use crate::kmeans::{self, ClusterModel, KMeansOptions};
use crate::model::{CascadeSnapshot, ExogenousMatrix, StatePair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub mu: f64,
    pub t_init: usize,
    #[serde(default = "default_max_alt_iters")]
    pub max_alt_iters: usize,
    #[serde(default = "default_tol_alt")]
    pub tol_alt: f64,
}

fn default_max_alt_iters() -> usize {
    200
}
fn default_tol_alt() -> f64 {
    1e-8
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            mu: 0.01,
            t_init: 50,
            max_alt_iters: default_max_alt_iters(),
            tol_alt: default_tol_alt(),
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self, n_states: usize) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::Config(format!(
                "ridge mu must be > 0, got {}",
                self.mu
            )));
        }
        if self.t_init < n_states {
            return Err(Error::Config(format!(
                "t_init = {} is smaller than the number of states {n_states}",
                self.t_init
            )));
        }
        if !(self.tol_alt >= 0.0) {
            return Err(Error::Config("tol_alt must be >= 0".into()));
        }
        Ok(())
    }
}

/// Row objective `1/2 ||y - Y^T a - b x||^2 + mu ||a||^2`.
fn row_objective(
    y_rest: &DMatrix<f64>,
    y_i: &DVector<f64>,
    x_i: &DVector<f64>,
    a: &DVector<f64>,
    b: f64,
    mu: f64,
) -> f64 {
    let r = y_i - y_rest.tr_mul(a) - x_i * b;
    0.5 * r.norm_squared() + mu * a.norm_squared()
}

fn rows_except(m: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    m.clone().remove_row(i)
}

/// Fits node `i`, returning `(a_{-i}, b_ii, alternations)`.
fn ridge_row(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    i: usize,
    mu: f64,
    max_alt_iters: usize,
    tol_alt: f64,
) -> Result<(DVector<f64>, f64, usize)> {
    let n = y.nrows();
    let x_i = x.row(i).transpose();
    let xx = x_i.norm_squared();
    if xx == 0.0 {
        return Err(Error::ZeroSusceptibility { node: i + 1 });
    }
    let y_i = y.row(i).transpose();
    let y_rest = rows_except(y, i);
    let mut gram = &y_rest * y_rest.transpose();
    for k in 0..n - 1 {
        gram[(k, k)] += 2.0 * mu;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::invalid("ridge system is not positive definite"))?;
    // a(b) = G^{-1} Y_{-i} y_i - b G^{-1} Y_{-i} x_i
    let yx = &y_rest * &x_i;
    let base = chol.solve(&(&y_rest * &y_i));
    let dir = chol.solve(&yx);
    let yi_x = y_i.dot(&x_i);

    let mut b = yi_x / xx;
    let mut a = &base - &dir * b;
    let mut obj = row_objective(&y_rest, &y_i, &x_i, &a, b, mu);
    let mut iters = 0;
    while iters < max_alt_iters {
        iters += 1;
        let b_next = (yi_x - a.dot(&yx)) / xx;
        let a_next = &base - &dir * b_next;
        let next_obj = row_objective(&y_rest, &y_i, &x_i, &a_next, b_next, mu);
        debug_assert!(
            next_obj <= obj * (1.0 + 1e-10) + 1e-12,
            "ridge alternation increased the objective at node {}: {obj} -> {next_obj}",
            i + 1
        );
        let change = ((&a_next - &a).norm_squared() + (b_next - b).powi(2)).sqrt();
        let scale = (a_next.norm_squared() + b_next * b_next).sqrt();
        a = a_next;
        b = b_next;
        obj = next_obj;
        if change <= tol_alt * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok((a, b, iters))
}

/// Ridge estimate of `(A, b)` from a single interval.
pub fn ridge_pair(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    mu: f64,
    max_alt_iters: usize,
    tol_alt: f64,
) -> Result<StatePair> {
    if y.shape() != x.shape() {
        return Err(Error::dims(format!(
            "Y is {}x{}, X is {}x{}",
            y.nrows(),
            y.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("ridge mu must be > 0, got {mu}")));
    }
    let n = y.nrows();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| ridge_row(y, x, i, mu, max_alt_iters, tol_alt))
        .collect::<Result<Vec<_>>>()?;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for (i, (row, bi, _)) in rows.into_iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            a[(i, if k < i { k } else { k + 1 })] = *v;
        }
        b[i] = bi;
    }
    StatePair::new(a, b, 0)
}

/// Initial states and the clustering that produced them.
#[derive(Clone, Debug)]
pub struct BatchInit {
    pub states: Vec<StatePair>,
    pub model: ClusterModel,
    /// Per-interval ridge estimates, in interval order.
    pub estimates: Vec<ThetaVector>,
}

/// Ridge-fits the first `t_init` snapshots and clusters them into `S`
/// initial states.
pub fn batch_initialize(
    snapshots: &[CascadeSnapshot],
    x: &ExogenousMatrix,
    n_states: usize,
    ridge: &RidgeConfig,
    rng_seed: u64,
) -> Result<BatchInit> {
    ridge.validate(n_states)?;
    if ridge.t_init > snapshots.len() {
        return Err(Error::invalid(format!(
            "t_init = {} exceeds the {} available snapshots",
            ridge.t_init,
            snapshots.len()
        )));
    }
    let estimates = snapshots[..ridge.t_init]
        .iter()
        .map(|snap| {
            let pair = ridge_pair(&snap.y, &x.x, ridge.mu, ridge.max_alt_iters, ridge.tol_alt)?;
            Ok(vectorize_theta(&pair.with_id(snap.t)))
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<DVector<f64>> = estimates.iter().map(|e| e.theta.clone()).collect();
    let model = kmeans::kmeans_with(&points, &KMeansOptions::new(n_states, rng_seed))?;
    if model
        .assignments
        .iter()
        .collect::<std::collections::BTreeSet<_>>()
        .len()
        < n_states
    {
        warn!("k-means left some of the {n_states} initial clusters empty");
    }
    let states = model
        .centroids
        .iter()
        .enumerate()
        .map(|(s, c)| {
            unvectorize_theta(&ThetaVector {
                theta: c.clone(),
                source: s + 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchInit {
        states,
        model,
        estimates,
    })
}
