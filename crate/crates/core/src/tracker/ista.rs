//! Proximal-gradient (ISTA) iterations for one state's loss
//!
//! ```text
//! F(A, b) = 1/2 sum_tau w_tau ||Y_tau - A Y_tau - diag(b) X||_F^2 + lambda ||A||_1
//! ```
//!
//! The smooth part separates across rows. With the row `a` of `A` kept at
//! full length (its own entry pinned to zero) and `P = X ybar^T`, row `i`
//! contributes
//!
//! ```text
//! f_i = 1/2 [Omega_ii - 2 a.Omega_i - 2 b P_ii + a^T Omega a + 2 b a.P_i + alpha b^2 ||x_i||^2]
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::StateStats;
use crate::error::{Error, Result};
use crate::linalg::{self, LIPSCHITZ_FLOOR};
use crate::model::{ExogenousMatrix, StatePair};

pub const POWER_TOL: f64 = 1e-6;
pub const POWER_MAX_ITER: usize = 500;
/// Step-size doublings allowed in one backtracking search.
const MAX_BACKTRACKS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    ExactLipschitz,
    Backtracking,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzScope {
    /// One constant per state, the max over nodes.
    #[default]
    Global,
    /// Each row steps with its own constant.
    PerNode,
}

/// `sign(v) max(|v| - mu, 0)`.
pub fn soft_scalar(v: f64, mu: f64) -> f64 {
    if v > mu {
        v - mu
    } else if v < -mu {
        v + mu
    } else {
        0.0
    }
}

/// Entrywise soft-thresholding.
pub fn soft_threshold(m: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>> {
    if !(mu >= 0.0) {
        return Err(Error::invalid(format!("threshold must be >= 0, got {mu}")));
    }
    Ok(m.map(|v| soft_scalar(v, mu)))
}

/// The parts of one state's smooth loss that stay fixed during a solve.
#[derive(Clone, Debug)]
pub struct Quadratic {
    omega: DMatrix<f64>,
    p: DMatrix<f64>,
    d: DVector<f64>,
    alpha: f64,
}

struct RowEval {
    grad_a: DVector<f64>,
    grad_b: f64,
    smooth: f64,
}

impl Quadratic {
    pub fn new(stats: &StateStats, x: &DMatrix<f64>) -> Result<Self> {
        if stats.ybar.shape() != x.shape() {
            return Err(Error::dims(format!(
                "stats are {}x{}, X is {}x{}",
                stats.ybar.nrows(),
                stats.ybar.ncols(),
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(Quadratic {
            omega: stats.omega.clone(),
            p: x * stats.ybar.transpose(),
            d: DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.norm_squared())),
            alpha: stats.alpha,
        })
    }

    pub fn n(&self) -> usize {
        self.omega.nrows()
    }

    /// Gradient and value of `f_i` at the full-length row `a` (with
    /// `a[i] == 0`). The gradient's own entry is zero.
    fn row(&self, i: usize, a: &DVector<f64>, b: f64) -> RowEval {
        let oa = &self.omega * a;
        let p_i = self.p.row(i).transpose();
        let a_omega_i = a.dot(&self.omega.column(i));
        let a_p = a.dot(&p_i);
        let xx = self.alpha * self.d[i];
        let mut grad_a = oa.clone() + &p_i * b - self.omega.column(i);
        grad_a[i] = 0.0;
        let grad_b = a_p + xx * b - self.p[(i, i)];
        let smooth = 0.5
            * (self.omega[(i, i)] - 2.0 * a_omega_i - 2.0 * b * self.p[(i, i)]
                + a.dot(&oa)
                + 2.0 * b * a_p
                + xx * b * b);
        RowEval {
            grad_a,
            grad_b,
            smooth,
        }
    }

    /// Smooth part of the loss at `pair`.
    pub fn smooth(&self, pair: &StatePair) -> f64 {
        (0..self.n())
            .map(|i| self.row(i, &pair.a.row(i).transpose(), pair.b[i]).smooth)
            .sum()
    }

    /// Hessian of `f_i` in `(a_{-i}, b_ii)`:
    /// `[[Omega_{-i}, P_{i,-i}^T], [P_{i,-i}, alpha ||x_i||^2]]`.
    pub fn row_hessian(&self, i: usize) -> DMatrix<f64> {
        let n = self.n();
        let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        let mut h = DMatrix::zeros(n, n);
        for (r, &k) in others.iter().enumerate() {
            for (c, &l) in others.iter().enumerate() {
                h[(r, c)] = self.omega[(k, l)];
            }
            h[(r, n - 1)] = self.p[(i, k)];
            h[(n - 1, r)] = self.p[(i, k)];
        }
        h[(n - 1, n - 1)] = self.alpha * self.d[i];
        h
    }

    /// Largest eigenvalue of the row Hessian by power iteration, floored.
    pub fn row_lipschitz(&self, i: usize, warm: Option<&DVector<f64>>) -> (f64, DVector<f64>) {
        let (l, v) =
            linalg::power_iteration_psd(&self.row_hessian(i), warm, POWER_TOL, POWER_MAX_ITER);
        (l.max(LIPSCHITZ_FLOOR), v)
    }
}

/// Gradients of the smooth row loss `f_i` with respect to `a_{-i}` and
/// `b_ii`, for 1-based node `i`.
pub fn ista_gradients(
    pair: &StatePair,
    stats: &StateStats,
    x: &ExogenousMatrix,
    i: usize,
) -> Result<(DVector<f64>, f64)> {
    let n = pair.n_nodes();
    if i == 0 || i > n {
        return Err(Error::invalid(format!("node {i} outside 1..={n}")));
    }
    let q = Quadratic::new(stats, &x.x)?;
    let ev = q.row(i - 1, &pair.a.row(i - 1).transpose(), pair.b[i - 1]);
    Ok((linalg::drop_entry(&ev.grad_a, i - 1), ev.grad_b))
}

/// Exact per-node Lipschitz constant for 1-based node `i`.
pub fn lipschitz_bound(stats: &StateStats, x: &ExogenousMatrix, i: usize) -> Result<f64> {
    let n = x.n_nodes();
    if i == 0 || i > n {
        return Err(Error::invalid(format!("node {i} outside 1..={n}")));
    }
    Ok(Quadratic::new(stats, &x.x)?.row_lipschitz(i - 1, None).0)
}

pub fn l1_offdiag(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Smooth loss plus `lambda ||A||_1` at `pair`.
pub fn p1_objective(
    pair: &StatePair,
    stats: &StateStats,
    x: &ExogenousMatrix,
    lambda: f64,
) -> Result<f64> {
    Ok(Quadratic::new(stats, &x.x)?.smooth(pair) + lambda * l1_offdiag(&pair.a))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    pub lambda: f64,
    pub step_rule: StepRule,
    #[serde(default)]
    pub scope: LipschitzScope,
    pub max_iters: usize,
    pub tol: f64,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_true() -> bool {
    true
}

/// Step-size state carried across intervals for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct StepState {
    /// Current (global) Lipschitz estimate, always > 0.
    pub lipschitz: f64,
    /// Per-node constants from the last exact computation.
    pub node_lipschitz: Vec<f64>,
    /// Power-iteration warm starts, one per node.
    pub warm: Vec<Option<DVector<f64>>>,
    /// Inner iterations run in the last solve.
    pub inner_iter: usize,
}

impl StepState {
    pub fn new(n: usize) -> Self {
        StepState {
            lipschitz: 1.0,
            node_lipschitz: vec![1.0; n],
            warm: vec![None; n],
            inner_iter: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InnerReport {
    pub iterations: usize,
    /// `F` at the starting point and after every iteration.
    pub objective: Vec<f64>,
    /// Iterations where `F` went up by more than rounding.
    pub violations: usize,
    pub lipschitz: f64,
}

/// Slack allowed for rounding when checking descent.
pub fn descent_slack(f: f64) -> f64 {
    1e-12 * (1.0 + f.abs())
}

fn map_rows<T: Send>(n: usize, parallel: bool, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

fn evaluate(q: &Quadratic, pair: &StatePair, parallel: bool) -> Vec<RowEval> {
    map_rows(q.n(), parallel, |i| {
        q.row(i, &pair.a.row(i).transpose(), pair.b[i])
    })
}

/// One proximal step of every row, row `i` using step `1 / lip[i]`.
fn prox_step(
    pair: &StatePair,
    evals: &[RowEval],
    lip: &[f64],
    lambda: f64,
    parallel: bool,
) -> StatePair {
    let n = pair.n_nodes();
    let rows = map_rows(n, parallel, |i| {
        let l = lip[i];
        let mut a = pair.a.row(i).transpose() - &evals[i].grad_a / l;
        a.apply(|v| *v = soft_scalar(*v, lambda / l));
        a[i] = 0.0;
        (a, pair.b[i] - evals[i].grad_b / l)
    });
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for (i, (row, bi)) in rows.into_iter().enumerate() {
        a.set_row(i, &row.transpose());
        b[i] = bi;
    }
    StatePair {
        a,
        b,
        state_id: pair.state_id,
    }
}

fn is_finite(pair: &StatePair) -> bool {
    pair.a.iter().chain(pair.b.iter()).all(|v| v.is_finite())
}

fn param_norm(pair: &StatePair) -> f64 {
    (pair.a.norm_squared() + pair.b.norm_squared()).sqrt()
}

fn param_dist(p: &StatePair, q: &StatePair) -> f64 {
    ((&p.a - &q.a).norm_squared() + (&p.b - &q.b).norm_squared()).sqrt()
}

/// Runs ISTA on one state's loss from `pair` until the relative parameter
/// change drops below `opts.tol` or `opts.max_iters` is reached.
pub fn ista_inner_solve(
    pair: &StatePair,
    stats: &StateStats,
    x: &ExogenousMatrix,
    opts: &InnerOptions,
    step: &mut StepState,
) -> Result<(StatePair, InnerReport)> {
    if !(opts.lambda >= 0.0) {
        return Err(Error::invalid(format!(
            "lambda must be >= 0, got {}",
            opts.lambda
        )));
    }
    let q = Quadratic::new(stats, &x.x)?;
    let n = q.n();
    if pair.n_nodes() != n {
        return Err(Error::dims(format!(
            "pair has {} nodes, stats {n}",
            pair.n_nodes()
        )));
    }
    if step.warm.len() != n {
        *step = StepState::new(n);
    }
    let mut lip = match opts.step_rule {
        StepRule::ExactLipschitz => {
            let warm = &step.warm;
            let res = map_rows(n, opts.parallel, |i| q.row_lipschitz(i, warm[i].as_ref()));
            let mut node = Vec::with_capacity(n);
            for (i, (l, v)) in res.into_iter().enumerate() {
                node.push(l);
                step.warm[i] = Some(v);
            }
            step.lipschitz = node.iter().copied().fold(LIPSCHITZ_FLOOR, f64::max);
            step.node_lipschitz = node;
            match opts.scope {
                LipschitzScope::Global => vec![step.lipschitz; n],
                LipschitzScope::PerNode => step.node_lipschitz.clone(),
            }
        }
        StepRule::Backtracking => vec![step.lipschitz.max(LIPSCHITZ_FLOOR); n],
    };

    let mut current = pair.clone();
    current.zero_diagonal();
    let mut evals = evaluate(&q, &current, opts.parallel);
    let mut smooth: f64 = evals.iter().map(|e| e.smooth).sum();
    let mut report = InnerReport {
        objective: vec![smooth + opts.lambda * l1_offdiag(&current.a)],
        ..InnerReport::default()
    };
    for k in 0..opts.max_iters {
        let (next, next_evals, next_smooth) = match opts.step_rule {
            StepRule::ExactLipschitz => {
                let next = prox_step(&current, &evals, &lip, opts.lambda, opts.parallel);
                if !is_finite(&next) {
                    return Err(Error::Divergence {
                        state: pair.state_id,
                        iteration: k + 1,
                    });
                }
                let ev = evaluate(&q, &next, opts.parallel);
                let s = ev.iter().map(|e| e.smooth).sum();
                (next, ev, s)
            }
            StepRule::Backtracking => {
                let mut l = (lip[0] / 2.0).max(LIPSCHITZ_FLOOR);
                let mut tries = 0;
                loop {
                    let trial = vec![l; n];
                    let next = prox_step(&current, &evals, &trial, opts.lambda, opts.parallel);
                    if !is_finite(&next) {
                        return Err(Error::Divergence {
                            state: pair.state_id,
                            iteration: k + 1,
                        });
                    }
                    let ev = evaluate(&q, &next, opts.parallel);
                    let s: f64 = ev.iter().map(|e| e.smooth).sum();
                    let mut lin = 0.0;
                    let mut dist2 = 0.0;
                    for (i, e) in evals.iter().enumerate() {
                        let da = next.a.row(i).transpose() - current.a.row(i).transpose();
                        let db = next.b[i] - current.b[i];
                        lin += e.grad_a.dot(&da) + e.grad_b * db;
                        dist2 += da.norm_squared() + db * db;
                    }
                    if s <= smooth + lin + 0.5 * l * dist2 + descent_slack(smooth) {
                        lip = trial;
                        break (next, ev, s);
                    }
                    tries += 1;
                    if tries > MAX_BACKTRACKS {
                        return Err(Error::Divergence {
                            state: pair.state_id,
                            iteration: k + 1,
                        });
                    }
                    l *= 2.0;
                }
            }
        };
        let f_next = next_smooth + opts.lambda * l1_offdiag(&next.a);
        let f_prev = *report.objective.last().unwrap();
        if f_next > f_prev + descent_slack(f_prev) {
            report.violations += 1;
        }
        report.objective.push(f_next);
        report.iterations = k + 1;
        let change = param_dist(&next, &current);
        let scale = param_norm(&next).max(f64::MIN_POSITIVE);
        current = next;
        evals = next_evals;
        smooth = next_smooth;
        if change <= opts.tol * scale {
            break;
        }
    }
    if opts.step_rule == StepRule::Backtracking {
        step.lipschitz = lip[0];
    }
    step.inner_iter = report.iterations;
    report.lipschitz = step.lipschitz;
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::stats::TrackerStats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(
        n: usize,
        c: usize,
        t: usize,
        seed: u64,
    ) -> (StatePair, StateStats, ExogenousMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = ExogenousMatrix::new(DMatrix::from_fn(n, c, |_, _| rng.random_range(0.0..3.0)))
            .unwrap();
        let mut stats = TrackerStats::zeros(1, n, c);
        for _ in 0..t {
            let y = DMatrix::from_fn(n, c, |_, _| rng.random_range(-1.0..2.0));
            crate::tracker::stats::update_stats(&mut stats, &y, 1, 0.95).unwrap();
        }
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                rng.random_range(-0.5..0.5)
            }
        });
        let b = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.5));
        (StatePair::new(a, b, 1).unwrap(), stats.states.remove(0), x)
    }

    /// Direct evaluation of the weighted loss from the definition, for a
    /// single absorbed interval.
    fn direct_loss(pair: &StatePair, y: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
        0.5 * crate::model::sem_residual(y, x, pair).unwrap().powi(2)
    }

    #[test]
    fn soft_threshold_cases() {
        let m = DMatrix::from_row_slice(1, 3, &[3.0, -0.5, -4.0]);
        assert_eq!(soft_threshold(&m, 0.0).unwrap(), m);
        assert_eq!(
            soft_threshold(&m, 1.0).unwrap().as_slice(),
            &[2.0, 0.0, -3.0]
        );
        assert!(soft_threshold(&m, -1.0).is_err());
    }

    #[test]
    fn soft_threshold_is_the_l1_prox() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let g: f64 = rng.random_range(-8.0..8.0);
            let mu: f64 = rng.random_range(0.0..4.0);
            let l: f64 = rng.random_range(0.5..3.0);
            // argmin_z 1/2 L (z - g)^2 + mu L |z| over a grid of step 1e-4
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=200_000 {
                let z = -10.0 + k as f64 * 1e-4;
                let v = 0.5 * l * (z - g).powi(2) + mu * l * z.abs();
                if v < best.0 {
                    best = (v, z);
                }
            }
            assert!((soft_scalar(g, mu) - best.1).abs() <= 1e-3, "g={g} mu={mu}");
        }
    }

    #[test]
    fn row_objective_matches_direct_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pair, _, x) = random_problem(5, 7, 0, 3);
        let y = DMatrix::from_fn(5, 7, |_, _| rng.random_range(-1.0..1.0));
        let mut st = TrackerStats::zeros(1, 5, 7);
        crate::tracker::stats::update_stats(&mut st, &y, 1, 1.0).unwrap();
        let q = Quadratic::new(st.state(1), &x.x).unwrap();
        let direct = direct_loss(&pair, &y, &x.x);
        assert!((q.smooth(&pair) - direct).abs() <= 1e-10 * direct);
    }

    #[test]
    fn zero_stats_give_zero_gradients() {
        let (pair, _, x) = random_problem(4, 6, 0, 1);
        let stats = StateStats::zeros(4, 6);
        for i in 1..=4 {
            let (ga, gb) = ista_gradients(&pair, &stats, &x, i).unwrap();
            assert_eq!(ga.norm(), 0.0);
            assert_eq!(gb, 0.0);
        }
        assert!(ista_gradients(&pair, &stats, &x, 0).is_err());
    }

    fn fd_gradient(q: &Quadratic, pair: &StatePair, i: usize) -> (DVector<f64>, f64) {
        let h = 1e-6;
        let n = pair.n_nodes();
        let a = pair.a.row(i).transpose();
        let f = |a: &DVector<f64>, b: f64| q.row(i, a, b).smooth;
        let mut ga = DVector::zeros(n - 1);
        let mut r = 0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[j] += h;
            am[j] -= h;
            ga[r] = (f(&ap, pair.b[i]) - f(&am, pair.b[i])) / (2.0 * h);
            r += 1;
        }
        let gb = (f(&a, pair.b[i] + h) - f(&a, pair.b[i] - h)) / (2.0 * h);
        (ga, gb)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..50 {
            let (pair, stats, x) = random_problem(5, 6, 3, 100 + seed);
            let q = Quadratic::new(&stats, &x.x).unwrap();
            for i in 0..5 {
                let (ga, gb) = ista_gradients(&pair, &stats, &x, i + 1).unwrap();
                let (fa, fb) = fd_gradient(&q, &pair, i);
                let mut g = ga.as_slice().to_vec();
                g.push(gb);
                let mut f = fa.as_slice().to_vec();
                f.push(fb);
                let err = g
                    .iter()
                    .zip(&f)
                    .map(|(u, v)| (u - v).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let scale = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(err <= 1e-5 * scale.max(1.0), "seed {seed} node {i}: {err}");
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_noise_free_truth() {
        let (pair, _, x) = random_problem(5, 8, 0, 9);
        let sigma = crate::model::SwitchSequence::new(vec![1; 4], 1).unwrap();
        // zero loss at the truth, hence a stationary point
        let snaps =
            crate::model::generate_cascades(std::slice::from_ref(&pair), &x, &sigma, 0.0, 0)
                .unwrap();
        let mut st = TrackerStats::zeros(1, 5, 8);
        for s in &snaps {
            crate::tracker::stats::update_stats(&mut st, &s.y, 1, 1.0).unwrap();
        }
        for i in 1..=5 {
            let (ga, gb) = ista_gradients(&pair, st.state(1), &x, i).unwrap();
            assert!(ga.norm() + gb.abs() <= 1e-8, "node {i}");
        }
    }

    #[test]
    fn lipschitz_examples() {
        // Omega = I, x = 0: the row Hessian is diag(1, .., 1, 0)
        let x = ExogenousMatrix::new(DMatrix::zeros(3, 2)).unwrap();
        let mut stats = StateStats::zeros(3, 2);
        stats.omega = DMatrix::identity(3, 3);
        assert!((lipschitz_bound(&stats, &x, 1).unwrap() - 1.0).abs() < 1e-6);

        let x = ExogenousMatrix::new(DMatrix::zeros(6, 2)).unwrap();
        let mut stats = StateStats::zeros(6, 2);
        stats.omega =
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 0.5]));
        let l = lipschitz_bound(&stats, &x, 6).unwrap();
        assert!((l - 5.0).abs() < 1e-4, "{l}");

        let zero = StateStats::zeros(6, 2);
        assert_eq!(lipschitz_bound(&zero, &x, 1).unwrap(), LIPSCHITZ_FLOOR);
    }

    #[test]
    fn lipschitz_matches_symmetric_eigensolver() {
        for seed in 0..10 {
            let (_, stats, x) = random_problem(6, 9, 4, 200 + seed);
            let q = Quadratic::new(&stats, &x.x).unwrap();
            for i in 0..6 {
                let h = q.row_hessian(i);
                let exact = h.clone().symmetric_eigen().eigenvalues.max();
                let (l, _) = q.row_lipschitz(i, None);
                assert!((l - exact).abs() <= 1e-5 * exact, "{l} vs {exact}");
            }
        }
    }

    fn opts(lambda: f64, rule: StepRule, iters: usize) -> InnerOptions {
        InnerOptions {
            lambda,
            step_rule: rule,
            scope: LipschitzScope::Global,
            max_iters: iters,
            tol: 0.0,
            parallel: true,
        }
    }

    #[test]
    fn huge_lambda_kills_adjacency() {
        let (pair, stats, x) = random_problem(5, 6, 3, 5);
        let lam = 1e3 * stats.omega.amax().max(1.0);
        let mut step = StepState::new(5);
        let (out, _) = ista_inner_solve(
            &pair,
            &stats,
            &x,
            &opts(lam, StepRule::ExactLipschitz, 50),
            &mut step,
        )
        .unwrap();
        assert_eq!(out.a, DMatrix::zeros(5, 5));
    }

    #[test]
    fn unregularized_solve_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (n, c) = (6, 10);
        let x = ExogenousMatrix::new(DMatrix::from_fn(n, c, |_, _| rng.random_range(0.0..3.0)))
            .unwrap();
        let y = DMatrix::from_fn(n, c, |_, _| rng.random_range(0.0..2.0));
        let mut st = TrackerStats::zeros(1, n, c);
        crate::tracker::stats::update_stats(&mut st, &y, 1, 1.0).unwrap();
        // Dense normal equations per row over (a_{-i}, b_ii).
        let mut a_ls = DMatrix::zeros(n, n);
        let mut b_ls = DVector::zeros(n);
        for i in 0..n {
            let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            let mut d = DMatrix::zeros(c, n);
            for (col, &k) in others.iter().enumerate() {
                d.set_column(col, &y.row(k).transpose());
            }
            d.set_column(n - 1, &x.x.row(i).transpose());
            let sol = (d.transpose() * &d)
                .lu()
                .solve(&(d.transpose() * y.row(i).transpose()))
                .unwrap();
            for (col, &k) in others.iter().enumerate() {
                a_ls[(i, k)] = sol[col];
            }
            b_ls[i] = sol[n - 1];
        }
        let mut step = StepState::new(n);
        let o = InnerOptions {
            tol: 1e-15,
            ..opts(0.0, StepRule::ExactLipschitz, 2_000_000)
        };
        let start = StatePair::zeros(n, 1);
        let (out, rep) = ista_inner_solve(&start, st.state(1), &x, &o, &mut step).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(
            (&out.a - &a_ls).norm() <= 1e-6 * a_ls.norm().max(1.0),
            "{}",
            (&out.a - &a_ls).norm()
        );
        assert!((&out.b - &b_ls).norm() <= 1e-6 * b_ls.norm().max(1.0));
    }

    /// Subgradient optimality of every accepted row update.
    fn prox_gap(prev: &StatePair, next: &StatePair, q: &Quadratic, lip: f64, lambda: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..prev.n_nodes() {
            let ev = q.row(i, &prev.a.row(i).transpose(), prev.b[i]);
            for j in 0..prev.n_nodes() {
                if j == i {
                    continue;
                }
                let z = prev.a[(i, j)] - ev.grad_a[j] / lip;
                let v = next.a[(i, j)];
                let gap = if v != 0.0 {
                    (lip * (v - z) + lambda * v.signum()).abs()
                } else {
                    (lip * z.abs() - lambda).max(0.0)
                };
                worst = worst.max(gap);
            }
        }
        worst
    }

    #[test]
    fn descent_and_prox_optimality() {
        for seed in 0..10 {
            let (pair, stats, x) = random_problem(6, 8, 5, 300 + seed);
            let q = Quadratic::new(&stats, &x.x).unwrap();
            let mut step = StepState::new(6);
            let mut cur = pair.clone();
            for _ in 0..20 {
                let (next, rep) = ista_inner_solve(
                    &cur,
                    &stats,
                    &x,
                    &opts(0.3, StepRule::ExactLipschitz, 1),
                    &mut step,
                )
                .unwrap();
                assert_eq!(rep.violations, 0);
                assert!(prox_gap(&cur, &next, &q, step.lipschitz, 0.3) <= 1e-6);
                assert!(next.is_hollow());
                cur = next;
            }
        }
    }

    #[test]
    fn backtracking_descends() {
        for seed in 0..10 {
            let (pair, stats, x) = random_problem(6, 8, 5, 400 + seed);
            let mut step = StepState::new(6);
            let (_, rep) = ista_inner_solve(
                &pair,
                &stats,
                &x,
                &opts(0.3, StepRule::Backtracking, 40),
                &mut step,
            )
            .unwrap();
            assert_eq!(rep.violations, 0);
            assert!(rep.objective.last().unwrap() < &rep.objective[0]);
        }
    }

    #[test]
    fn per_node_steps_descend() {
        let (pair, stats, x) = random_problem(6, 8, 5, 9);
        let mut step = StepState::new(6);
        let o = InnerOptions {
            scope: LipschitzScope::PerNode,
            ..opts(0.3, StepRule::ExactLipschitz, 30)
        };
        let (_, rep) = ista_inner_solve(&pair, &stats, &x, &o, &mut step).unwrap();
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn parallel_equals_sequential() {
        let (pair, stats, x) = random_problem(12, 14, 6, 17);
        for rule in [StepRule::ExactLipschitz, StepRule::Backtracking] {
            let mut s1 = StepState::new(12);
            let mut s2 = StepState::new(12);
            let par = opts(0.2, rule, 10);
            let seq = InnerOptions {
                parallel: false,
                ..par
            };
            let (a, _) = ista_inner_solve(&pair, &stats, &x, &par, &mut s1).unwrap();
            let (b, _) = ista_inner_solve(&pair, &stats, &x, &seq, &mut s2).unwrap();
            assert!((&a.a - &b.a).amax() <= 1e-12);
            assert!((&a.b - &b.b).amax() <= 1e-12);
        }
    }
}
