//! Estimation metrics and summary statistics of estimated networks.

use std::collections::VecDeque;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StatePair;

/// Default magnitude above which an estimated entry counts as an edge.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-4;
/// Largest state count accepted by [`state_accuracy`].
pub const MAX_PERMUTATION_STATES: usize = 8;

/// `(||A - A_hat||_F + ||B - B_hat||_F) / (||A_hat||_F + ||B_hat||_F)`.
///
/// The denominator uses the estimate, so the metric is not symmetric.
pub fn relative_error(truth: &StatePair, est: &StatePair) -> Result<f64> {
    if truth.n_nodes() != est.n_nodes() {
        return Err(Error::dims(format!(
            "truth has {} nodes, estimate {}",
            truth.n_nodes(),
            est.n_nodes()
        )));
    }
    let denom = est.a.norm() + est.b.norm();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "relative error of an all-zero estimate".into(),
        ));
    }
    Ok(((&truth.a - &est.a).norm() + (&truth.b - &est.b).norm()) / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub actual: usize,
}

/// Off-diagonal support recovery. True edges are the nonzero entries of
/// `truth_a`, predicted edges those with `|a_hat| > threshold`. An empty
/// prediction has precision 1 and an empty truth has recall 1.
pub fn support_f1(
    truth_a: &DMatrix<f64>,
    est_a: &DMatrix<f64>,
    threshold: f64,
) -> Result<SupportScores> {
    if truth_a.shape() != est_a.shape() {
        return Err(Error::dims("truth and estimate differ in shape"));
    }
    if !(threshold >= 0.0) {
        return Err(Error::invalid(format!(
            "threshold {threshold} must be >= 0"
        )));
    }
    let (mut tp, mut predicted, mut actual) = (0, 0, 0);
    for ((i, j), (&t, &e)) in truth_a
        .iter()
        .zip(est_a.iter())
        .enumerate()
        .map(|(k, v)| ((k % truth_a.nrows(), k / truth_a.nrows()), v))
    {
        if i == j {
            continue;
        }
        let is_true = t != 0.0;
        let is_pred = e.abs() > threshold;
        actual += is_true as usize;
        predicted += is_pred as usize;
        tp += (is_true && is_pred) as usize;
    }
    let precision = if predicted == 0 {
        1.0
    } else {
        tp as f64 / predicted as f64
    };
    let recall = if actual == 0 {
        1.0
    } else {
        tp as f64 / actual as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SupportScores {
        precision,
        recall,
        f1,
        true_positives: tp,
        predicted,
        actual,
    })
}

/// Best agreement between two label sequences over all relabelings of the
/// estimate. Returns the accuracy and the map `estimated label -> true label`
/// (`perm[s_hat - 1]`).
pub fn best_permutation(
    sigma_true: &[usize],
    sigma_est: &[usize],
    n_states: usize,
) -> Result<(f64, Vec<usize>)> {
    if sigma_true.len() != sigma_est.len() {
        return Err(Error::dims(format!(
            "sequences have lengths {} and {}",
            sigma_true.len(),
            sigma_est.len()
        )));
    }
    if sigma_true.is_empty() {
        return Err(Error::EmptyData("empty switching sequence".into()));
    }
    if n_states == 0 || n_states > MAX_PERMUTATION_STATES {
        return Err(Error::ResourceGuard(format!(
            "permutation search needs 1 <= S <= {MAX_PERMUTATION_STATES}, got {n_states}"
        )));
    }
    if let Some(&bad) = sigma_true
        .iter()
        .chain(sigma_est)
        .find(|&&l| l == 0 || l > n_states)
    {
        return Err(Error::invalid(format!(
            "label {bad} outside 1..={n_states}"
        )));
    }
    // confusion[est][true]
    let mut confusion = vec![vec![0usize; n_states]; n_states];
    for (&t, &e) in sigma_true.iter().zip(sigma_est) {
        confusion[e - 1][t - 1] += 1;
    }
    let (hits, perm) = (0..n_states)
        .permutations(n_states)
        .map(|p| ((0..n_states).map(|e| confusion[e][p[e]]).sum::<usize>(), p))
        .max_by(|(a, pa), (b, pb)| a.cmp(b).then_with(|| pb.cmp(pa)))
        .expect("at least one permutation");
    Ok((
        hits as f64 / sigma_true.len() as f64,
        perm.into_iter().map(|l| l + 1).collect(),
    ))
}

/// Fraction of intervals labelled correctly, maximized over relabelings.
pub fn state_accuracy(sigma_true: &[usize], sigma_est: &[usize], n_states: usize) -> Result<f64> {
    best_permutation(sigma_true, sigma_est, n_states).map(|(acc, _)| acc)
}

/// `log10 sum_t ||theta_t - centroid(assignment_t)||^2`. Returns
/// `f64::NEG_INFINITY` when every point sits on its centroid.
pub fn intra_cluster_dispersion(
    thetas: &[DVector<f64>],
    centroids: &[DVector<f64>],
    assignments: &[usize],
) -> Result<f64> {
    if thetas.is_empty() || centroids.is_empty() {
        return Err(Error::EmptyData("no points or no centroids".into()));
    }
    if thetas.len() != assignments.len() {
        return Err(Error::dims(format!(
            "{} points but {} assignments",
            thetas.len(),
            assignments.len()
        )));
    }
    let mut total = 0.0;
    for (theta, &s) in thetas.iter().zip(assignments) {
        let c = centroids.get(s.wrapping_sub(1)).ok_or_else(|| {
            Error::invalid(format!("assignment {s} outside 1..={}", centroids.len()))
        })?;
        if c.len() != theta.len() {
            return Err(Error::dims("centroid and point lengths differ"));
        }
        total += (theta - c).norm_squared();
    }
    Ok(if total == 0.0 {
        f64::NEG_INFINITY
    } else {
        total.log10()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    /// Undirected edges.
    pub n_edges: usize,
    pub avg_clustering_coefficient: f64,
    /// Hops, within the largest connected component.
    pub diameter: usize,
    pub avg_num_neighbors: f64,
    /// Mean over ordered pairs of distinct nodes in the largest component.
    pub avg_shortest_path_length: f64,
    pub largest_component_size: usize,
    pub disconnected: bool,
}

/// Undirected simple graph with an edge `{i, j}` whenever `|a_ij|` or
/// `|a_ji|` exceeds the threshold.
fn undirected_adjacency(a: &DMatrix<f64>, threshold: f64) -> Vec<Vec<usize>> {
    let n = a.nrows();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && (a[(i, j)].abs() > threshold || a[(j, i)].abs() > threshold))
                .collect()
        })
        .collect()
}

fn bfs(adj: &[Vec<usize>], src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap() + 1;
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn largest_component(adj: &[Vec<usize>]) -> Vec<usize> {
    let mut seen = vec![false; adj.len()];
    let mut best: Vec<usize> = Vec::new();
    for s in 0..adj.len() {
        if seen[s] {
            continue;
        }
        let comp: Vec<usize> = bfs(adj, s)
            .iter()
            .enumerate()
            .filter_map(|(v, d)| d.map(|_| v))
            .collect();
        for &v in &comp {
            seen[v] = true;
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Small-world statistics of the thresholded support of `a`. Clustering and
/// neighbour counts cover every node, path statistics the largest connected
/// component only.
pub fn graph_stats(a: &DMatrix<f64>, threshold: f64) -> Result<GraphStats> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::EmptyData(
            "graph statistics need a nonempty square matrix".into(),
        ));
    }
    let adj = undirected_adjacency(a, threshold);
    let n_edges = adj.iter().map(Vec::len).sum::<usize>() / 2;
    if n_edges == 0 {
        return Err(Error::EmptyData("thresholded graph has no edges".into()));
    }
    let clustering = (0..n)
        .map(|v| {
            let nb = &adj[v];
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let links = nb
                .iter()
                .tuple_combinations()
                .filter(|&(&x, &y)| adj[x].binary_search(&y).is_ok())
                .count();
            2.0 * links as f64 / (k * (k - 1)) as f64
        })
        .sum::<f64>()
        / n as f64;
    let comp = largest_component(&adj);
    let (ecc_max, dist_sum) = comp
        .par_iter()
        .map(|&s| {
            let d = bfs(&adj, s);
            let reached = comp.iter().filter_map(|&v| d[v]);
            reached.fold((0usize, 0usize), |(m, sum), x| (m.max(x), sum + x))
        })
        .reduce(|| (0, 0), |(m1, s1), (m2, s2)| (m1.max(m2), s1 + s2));
    let m = comp.len();
    Ok(GraphStats {
        n_nodes: n,
        n_edges,
        avg_clustering_coefficient: clustering,
        diameter: ecc_max,
        avg_num_neighbors: 2.0 * n_edges as f64 / n as f64,
        avg_shortest_path_length: dist_sum as f64 / (m * (m - 1)) as f64,
        largest_component_size: m,
        disconnected: m < n,
    })
}

/// Nodes (1-based) by decreasing out-degree, ties by id. Node `j` influences
/// node `i` when `|a_ij| > threshold`, so out-degrees are column counts.
pub fn out_degree_ranking(a: &DMatrix<f64>, threshold: f64, top_k: usize) -> Vec<(usize, usize)> {
    let n = a.nrows();
    let mut ranked: Vec<(usize, usize)> = (0..a.ncols())
        .map(|j| {
            let deg = (0..n)
                .filter(|&i| i != j && a[(i, j)].abs() > threshold)
                .count();
            (j + 1, deg)
        })
        .collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    ranked.truncate(top_k);
    ranked
}
