//! Noise-free closed-form recovery of `(A, b)` per interval and
//! clustering-based identification of the switching states.
//!
//! With `X` of full row rank and `N <= C`, the reduced form
//! `Y_t = Phi X` gives `Phi = Y_t X^+`, and then
//!
//! ```text
//! B = (Diag[Phi^{-1}])^{-1},    A = I - B Phi^{-1}
//! ```
//!
//! Each per-interval estimate is flattened into `theta = vec([A b])`
//! (column-major). The estimates of the first `T_cluster` intervals are
//! clustered into `S` centroids; later intervals are labelled by their
//! nearest centroid.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{self, ClusterModel, KMeansOptions};
use crate::linalg::{self, RANK_TOL};
use crate::model::{CascadeSnapshot, ExogenousMatrix, StatePair, SwitchSequence};

/// Diagonal entries of `(Y_t X^+)^{-1}` below this fraction of the largest
/// one are treated as zero (infinite gain).
pub const DIAGONAL_GUARD: f64 = 1e-10;

/// `theta = vec([A b])`, column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaVector {
    pub theta: DVector<f64>,
    /// Interval index or centroid label the vector came from.
    pub source: usize,
}

/// `X^+ = X^T (X X^T)^{-1}` for full-row-rank `X`.
///
/// Computed from a thin QR factorization `X^T = Q R` as `Q R^{-T}`, which
/// avoids squaring the condition number of `X`.
pub fn pinv_full_row_rank(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let rank = linalg::numerical_rank(x, RANK_TOL);
    if rank < n || n > x.ncols() {
        return Err(Error::RankDeficient { rank, expected: n });
    }
    let qr = x.transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let r_inv_t = r
        .transpose()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::RankDeficient { rank, expected: n })?;
    Ok(q * r_inv_t)
}

/// Closed-form pair for one interval given a precomputed `X^+`.
///
/// `interval` is only used in error reports.
pub fn closed_form_pair_with_pinv(
    y: &DMatrix<f64>,
    x_pinv: &DMatrix<f64>,
    interval: usize,
) -> Result<StatePair> {
    let n = y.nrows();
    if x_pinv.shape() != (y.ncols(), n) {
        return Err(Error::dims(format!(
            "Y is {}x{}, X^+ is {}x{}",
            n,
            y.ncols(),
            x_pinv.nrows(),
            x_pinv.ncols()
        )));
    }
    let phi = y * x_pinv;
    let (phi_inv, _) =
        linalg::checked_inverse(&phi).ok_or(Error::DegenerateInterval { interval })?;
    let diag = phi_inv.diagonal();
    let scale = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(i) = diag
        .iter()
        .position(|d| d.abs() <= DIAGONAL_GUARD * scale || scale == 0.0)
    {
        return Err(Error::IdentifiabilityViolation { node: i + 1 });
    }
    let b = diag.map(|d| 1.0 / d);
    let mut a = -DMatrix::from_diagonal(&b) * phi_inv;
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    // 1 - b_i / b_i: zero up to rounding
    debug_assert!((0..n).all(|i| a[(i, i)].abs() < 1e-6));
    StatePair::hollowed(a, b, interval)
}

/// Closed-form `(A, b)` from one noise-free snapshot.
pub fn closed_form_pair(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<StatePair> {
    if y.shape() != x.shape() {
        return Err(Error::dims(format!(
            "Y is {}x{}, X is {}x{}",
            y.nrows(),
            y.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    closed_form_pair_with_pinv(y, &pinv_full_row_rank(x)?, 0)
}

pub fn vectorize_theta(pair: &StatePair) -> ThetaVector {
    let mut theta = Vec::with_capacity(pair.a.len() + pair.b.len());
    theta.extend_from_slice(pair.a.as_slice());
    theta.extend_from_slice(pair.b.as_slice());
    ThetaVector {
        theta: DVector::from_vec(theta),
        source: pair.state_id,
    }
}

/// Inverse of [`vectorize_theta`]. The diagonal of `A` is cleared, which is
/// a no-op for vectors that came from hollow pairs or averages of them.
pub fn unvectorize_theta(theta: &ThetaVector) -> Result<StatePair> {
    let len = theta.theta.len();
    let n = ((1.0 + 4.0 * len as f64).sqrt() - 1.0) / 2.0;
    let n = n.round() as usize;
    if n * (n + 1) != len || len == 0 {
        return Err(Error::invalid(format!(
            "theta of length {len} is not N(N+1) for any N"
        )));
    }
    let a = DMatrix::from_column_slice(n, n, &theta.theta.as_slice()[..n * n]);
    let b = DVector::from_column_slice(&theta.theta.as_slice()[n * n..]);
    StatePair::hollowed(a, b, theta.source)
}

/// Label of the centroid closest to `theta` (ties: smallest label).
pub fn assign_state(theta: &ThetaVector, centroids: &[ThetaVector]) -> usize {
    let c: Vec<DVector<f64>> = centroids.iter().map(|c| c.theta.clone()).collect();
    kmeans::nearest_centroid(&theta.theta, &c)
}

/// Probability that a state with activation probability `p` shows up at
/// least once in `t` intervals: `1 - (1 - p)^t`.
pub fn state_coverage_probability(p: f64, t: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    let miss = match i32::try_from(t) {
        Ok(t) => (1.0 - p).powi(t),
        Err(_) => (1.0 - p).powf(t as f64),
    };
    Ok(1.0 - miss)
}

/// Outcome of clustering-based identification.
#[derive(Clone, Debug)]
pub struct ClusterIdentification {
    pub states: Vec<StatePair>,
    pub sigma: SwitchSequence,
    pub model: ClusterModel,
    /// Intervals whose closed-form recovery failed. They are left out of
    /// clustering and inherit the previous interval's label.
    pub failed: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterIdentifyOptions {
    pub n_states: usize,
    pub t_cluster: usize,
    pub rng_seed: u64,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_n_init() -> usize {
    10
}
fn default_max_iter() -> usize {
    300
}

impl ClusterIdentifyOptions {
    pub fn new(n_states: usize, t_cluster: usize, rng_seed: u64) -> Self {
        ClusterIdentifyOptions {
            n_states,
            t_cluster,
            rng_seed,
            n_init: default_n_init(),
            max_iter: default_max_iter(),
        }
    }
}

/// Closed-form estimates for every snapshot, in parallel.
pub fn closed_form_thetas(
    snapshots: &[CascadeSnapshot],
    x: &ExogenousMatrix,
) -> Result<Vec<Result<ThetaVector>>> {
    let pinv = pinv_full_row_rank(&x.x)?;
    Ok(snapshots
        .par_iter()
        .map(|snap| closed_form_pair_with_pinv(&snap.y, &pinv, snap.t).map(|p| vectorize_theta(&p)))
        .collect())
}

/// Clustering phase on intervals `1..=t_cluster`, then nearest-centroid
/// labelling of the rest.
pub fn cluster_identify(
    snapshots: &[CascadeSnapshot],
    x: &ExogenousMatrix,
    opts: &ClusterIdentifyOptions,
) -> Result<ClusterIdentification> {
    if opts.t_cluster == 0 || opts.t_cluster > snapshots.len() {
        return Err(Error::invalid(format!(
            "T_cluster = {} must lie in 1..={}",
            opts.t_cluster,
            snapshots.len()
        )));
    }
    let thetas = closed_form_thetas(snapshots, x)?;
    let mut failed = Vec::new();
    let mut train = Vec::new();
    let mut train_idx = Vec::new();
    for (idx, th) in thetas.iter().enumerate().take(opts.t_cluster) {
        match th {
            Ok(th) => {
                train.push(th.theta.clone());
                train_idx.push(idx);
            }
            Err(e) => {
                warn!("interval {}: {e}; left out of clustering", idx + 1);
                failed.push(idx + 1);
            }
        }
    }
    let model = kmeans::kmeans_with(
        &train,
        &KMeansOptions {
            k: opts.n_states,
            max_iter: opts.max_iter,
            n_init: opts.n_init,
            rng_seed: opts.rng_seed,
        },
    )?;
    let mut labels: Vec<Option<usize>> = vec![None; snapshots.len()];
    for (&idx, &s) in train_idx.iter().zip(&model.assignments) {
        labels[idx] = Some(s);
    }
    for (idx, th) in thetas.iter().enumerate().skip(opts.t_cluster) {
        match th {
            Ok(th) => labels[idx] = Some(kmeans::nearest_centroid(&th.theta, &model.centroids)),
            Err(e) => {
                warn!("interval {}: {e}", idx + 1);
                failed.push(idx + 1);
            }
        }
    }
    let mut sigma = Vec::with_capacity(labels.len());
    let mut prev = 1;
    for l in labels {
        let s = l.unwrap_or(prev);
        sigma.push(s);
        prev = s;
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
    Ok(ClusterIdentification {
        states,
        sigma: SwitchSequence::new(sigma, opts.n_states)?,
        model,
        failed,
    })
}
