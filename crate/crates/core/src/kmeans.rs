//! Lloyd's k-means with k-means++ seeding.
//!
//! Labels are 1-based to match state labels. Distance ties (both in
//! assignment and in [`nearest_centroid`]) go to the smallest label.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ClusterModelRepr", from = "ClusterModelRepr")]
pub struct ClusterModel {
    pub centroids: Vec<DVector<f64>>,
    /// 1-based cluster label per input point.
    pub assignments: Vec<usize>,
    /// Sum of squared distances of points to their centroid.
    pub inertia: f64,
    /// Inertia after every assignment step of the winning run.
    pub inertia_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClusterModelRepr {
    centroids: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    inertia: f64,
    #[serde(default)]
    inertia_history: Vec<f64>,
}

impl From<ClusterModel> for ClusterModelRepr {
    fn from(m: ClusterModel) -> Self {
        ClusterModelRepr {
            centroids: m.centroids.iter().map(|c| c.as_slice().to_vec()).collect(),
            assignments: m.assignments,
            inertia: m.inertia,
            inertia_history: m.inertia_history,
        }
    }
}

impl From<ClusterModelRepr> for ClusterModel {
    fn from(r: ClusterModelRepr) -> Self {
        ClusterModel {
            centroids: r.centroids.into_iter().map(DVector::from_vec).collect(),
            assignments: r.assignments,
            inertia: r.inertia,
            inertia_history: r.inertia_history,
        }
    }
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub k: usize,
    pub max_iter: usize,
    /// Independent k-means++ restarts; the lowest-inertia run wins.
    pub n_init: usize,
    pub rng_seed: u64,
}

impl KMeansOptions {
    pub fn new(k: usize, rng_seed: u64) -> Self {
        KMeansOptions {
            k,
            max_iter: 300,
            n_init: 10,
            rng_seed,
        }
    }
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// 1-based label of the closest centroid; ties go to the smallest label.
pub fn nearest_centroid(point: &DVector<f64>, centroids: &[DVector<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (s, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = s;
        }
    }
    best + 1
}

/// Single-run k-means with defaults (no restarts).
pub fn kmeans(
    points: &[DVector<f64>],
    k: usize,
    rng_seed: u64,
    max_iter: usize,
) -> Result<ClusterModel> {
    kmeans_with(
        points,
        &KMeansOptions {
            k,
            max_iter,
            n_init: 1,
            rng_seed,
        },
    )
}

pub fn kmeans_with(points: &[DVector<f64>], opts: &KMeansOptions) -> Result<ClusterModel> {
    if points.is_empty() {
        return Err(Error::EmptyData("k-means needs at least one point".into()));
    }
    if opts.k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if opts.k > points.len() {
        return Err(Error::invalid(format!(
            "k = {} exceeds the number of points ({})",
            opts.k,
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::dims("k-means points have different lengths"));
    }
    let mut best: Option<ClusterModel> = None;
    for run in 0..opts.n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
        rng.set_stream(run as u64);
        let model = lloyd(
            points,
            seed_plus_plus(points, opts.k, &mut rng),
            opts.max_iter,
        );
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one run"))
}

fn seed_plus_plus(points: &[DVector<f64>], k: usize, rng: &mut impl Rng) -> Vec<DVector<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    if u < w {
                        pick = Some(i);
                        break;
                    }
                    u -= w;
                }
            }
            // rounding can leave u just past the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every point coincides with a chosen centroid
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn assign(points: &[DVector<f64>], centroids: &[DVector<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let s = nearest_centroid(p, centroids);
            inertia += sq_dist(p, &centroids[s - 1]);
            s
        })
        .collect();
    (labels, inertia)
}

fn lloyd(
    points: &[DVector<f64>],
    mut centroids: Vec<DVector<f64>>,
    max_iter: usize,
) -> ClusterModel {
    let k = centroids.len();
    let dim = points[0].len();
    let (mut labels, mut inertia) = assign(points, &centroids);
    let mut history = vec![inertia];
    for _ in 0..max_iter {
        let mut sums = vec![DVector::<f64>::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (p, &s) in points.iter().zip(&labels) {
            sums[s - 1] += p;
            counts[s - 1] += 1;
        }
        for s in 0..k {
            if counts[s] > 0 {
                centroids[s] = &sums[s] / counts[s] as f64;
            } else {
                // Re-seed an empty cluster at the point worst served by
                // its current centroid.
                let far = points
                    .iter()
                    .zip(&labels)
                    .enumerate()
                    .max_by(|(_, (p, &l)), (_, (q, &m))| {
                        sq_dist(p, &centroids[l - 1]).total_cmp(&sq_dist(q, &centroids[m - 1]))
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[s] = points[far].clone();
            }
        }
        let (next_labels, next_inertia) = assign(points, &centroids);
        history.push(next_inertia);
        let stable = next_labels == labels;
        labels = next_labels;
        inertia = next_inertia;
        if stable {
            break;
        }
    }
    ClusterModel {
        centroids,
        assignments: labels,
        inertia,
        inertia_history: history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| DVector::from_vec(vec![x])).collect()
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let p = pts(&[1.0, 5.0, -3.0, 8.0]);
        let m = kmeans(&p, 4, 3, 100).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut labels = m.assignments.clone();
        labels.sort();
        assert_eq!(labels, vec![1, 2, 3, 4]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let p = pts(&[1.0, 2.0, 6.0, 11.0]);
        let m = kmeans(&p, 1, 0, 100).unwrap();
        assert!((m.centroids[0][0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs() {
        let blob_a = [-0.5, 0.2, 0.1, 0.4, -0.3];
        let blob_b = [99.0, 100.5, 100.2, 99.8, 101.0];
        let mut v = blob_a.to_vec();
        v.extend_from_slice(&blob_b);
        let m = kmeans_with(&pts(&v), &KMeansOptions::new(2, 11)).unwrap();
        let mean_a = blob_a.iter().sum::<f64>() / 5.0;
        let mean_b = blob_b.iter().sum::<f64>() / 5.0;
        let mut c: Vec<f64> = m.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - mean_a).abs() < 1.0);
        assert!((c[1] - mean_b).abs() < 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(kmeans(&[], 1, 0, 10), Err(Error::EmptyData(_))));
        assert!(kmeans(&pts(&[1.0]), 0, 0, 10).is_err());
        assert!(kmeans(&pts(&[1.0]), 2, 0, 10).is_err());
    }

    #[test]
    fn duplicates_do_not_break_seeding() {
        let m = kmeans(&pts(&[2.0, 2.0, 2.0]), 3, 1, 10).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn nearest_centroid_ties_to_smallest_label() {
        let c = pts(&[1.0, -1.0]);
        assert_eq!(nearest_centroid(&DVector::from_vec(vec![0.0]), &c), 1);
        assert_eq!(nearest_centroid(&c[1], &c), 2);
    }

    #[test]
    fn json_round_trip() {
        let m = kmeans(&pts(&[0.0, 1.0, 10.0]), 2, 4, 10).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: ClusterModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn inertia_never_increases(
            raw in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 5..40),
            k in 1usize..5,
            seed in 0u64..1000,
        ) {
            let points: Vec<DVector<f64>> = raw.into_iter().map(DVector::from_vec).collect();
            let k = k.min(points.len());
            let m = kmeans(&points, k, seed, 100).unwrap();
            for w in m.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            let recomputed: f64 = points.iter().zip(&m.assignments)
                .map(|(p, &s)| (p - &m.centroids[s - 1]).norm_squared()).sum();
            prop_assert!((recomputed - m.inertia).abs() <= 1e-9 * (1.0 + m.inertia));
            prop_assert_eq!(kmeans(&points, k, seed, 100).unwrap(), m);
        }
    }
}
