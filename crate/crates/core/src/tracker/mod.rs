//! Online tracking of the switching states.
//!
//! Every interval picks the state whose current estimate explains `Y_t`
//! best, folds `Y_t` into that state's statistics and runs a few ISTA
//! iterations on it. The other states keep their estimates.

pub mod ista;
pub mod stats;

use std::path::Path;

use log::{debug, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{sem_residual, CascadeSnapshot, ExogenousMatrix, StatePair};

pub use ista::{
    ista_gradients, ista_inner_solve, lipschitz_bound, p1_objective, soft_threshold, InnerOptions,
    InnerReport, LipschitzScope, StepRule, StepState,
};
pub use stats::{update_stats, StateStats, TrackerStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateCriterion {
    /// Residual of the current estimates before any update.
    Apriori,
    /// Residual after solving every candidate state's update.
    Aposteriori,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// One l1 weight per state.
    pub lambda: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub max_inner_iters: usize,
    pub tol_inner: f64,
    pub step_rule: StepRule,
    pub state_criterion: StateCriterion,
    #[serde(default)]
    pub lipschitz_scope: LipschitzScope,
    #[serde(default = "default_parallel")]
    pub parallel: bool,
    /// Record every state every this many intervals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
}

fn default_beta() -> f64 {
    1.0
}
fn default_parallel() -> bool {
    true
}

impl TrackerConfig {
    /// A priori state choice, 5 backtracking ISTA iterations per interval.
    pub fn streaming(lambda: Vec<f64>) -> Self {
        TrackerConfig {
            lambda,
            beta: 1.0,
            max_inner_iters: 5,
            tol_inner: 1e-6,
            step_rule: StepRule::Backtracking,
            state_criterion: StateCriterion::Apriori,
            lipschitz_scope: LipschitzScope::Global,
            parallel: true,
            snapshot_stride: None,
        }
    }

    /// A posteriori state choice with inner solves run to `tol_inner`.
    pub fn offline(lambda: Vec<f64>) -> Self {
        TrackerConfig {
            max_inner_iters: 500,
            step_rule: StepRule::ExactLipschitz,
            state_criterion: StateCriterion::Aposteriori,
            ..TrackerConfig::streaming(lambda)
        }
    }

    pub fn validate(&self, n_states: usize) -> Result<()> {
        if self.lambda.len() != n_states {
            return Err(Error::Config(format!(
                "{} lambda values for {n_states} states",
                self.lambda.len()
            )));
        }
        if self.lambda.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(
                "lambda values must be finite and >= 0".into(),
            ));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!(
                "beta = {} outside (0, 1]",
                self.beta
            )));
        }
        if self.max_inner_iters == 0 {
            return Err(Error::Config("max_inner_iters must be >= 1".into()));
        }
        if !(self.tol_inner >= 0.0) {
            return Err(Error::Config("tol_inner must be >= 0".into()));
        }
        if self.snapshot_stride == Some(0) {
            return Err(Error::Config("snapshot_stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn inner(&self, s: usize) -> InnerOptions {
        InnerOptions {
            lambda: self.lambda[s - 1],
            step_rule: self.step_rule,
            scope: self.lipschitz_scope,
            max_iters: self.max_inner_iters,
            tol: self.tol_inner,
            parallel: self.parallel,
        }
    }
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (s, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = s;
        }
    }
    best + 1
}

/// State whose current estimate has the smallest residual on `Y_t`
/// (ties: smallest label), with that residual.
pub fn estimate_state_apriori(
    y: &DMatrix<f64>,
    states: &[StatePair],
    x: &ExogenousMatrix,
) -> Result<(usize, f64)> {
    if states.is_empty() {
        return Err(Error::invalid("no states to choose from"));
    }
    let res = states
        .iter()
        .map(|p| sem_residual(y, &x.x, p))
        .collect::<Result<Vec<_>>>()?;
    let s = argmin(&res);
    Ok((s, res[s - 1]))
}

/// Winner of the a posteriori criterion together with its solved update.
#[derive(Clone, Debug)]
pub struct AposterioriChoice {
    pub state: usize,
    pub residual: f64,
    pub pair: StatePair,
    pub step: StepState,
    pub report: InnerReport,
    /// Post-update residual of every candidate (infinite if its solve
    /// failed).
    pub residuals: Vec<f64>,
}

/// Solves every state's update as if `Y_t` belonged to it and keeps the
/// one with the smallest post-update residual. Nothing is committed.
pub fn estimate_state_aposteriori(
    y: &DMatrix<f64>,
    states: &[StatePair],
    stats: &TrackerStats,
    x: &ExogenousMatrix,
    config: &TrackerConfig,
    steps: &[StepState],
) -> Result<AposterioriChoice> {
    if states.is_empty() {
        return Err(Error::invalid("no states to choose from"));
    }
    let mut best: Option<AposterioriChoice> = None;
    let mut residuals = Vec::with_capacity(states.len());
    for (idx, pair) in states.iter().enumerate() {
        let s = idx + 1;
        let mut st = stats.state(s).clone();
        st.absorb(y, config.beta);
        let mut step = steps[idx].clone();
        match ista_inner_solve(pair, &st, x, &config.inner(s), &mut step) {
            Ok((cand, report)) => {
                let r = sem_residual(y, &x.x, &cand)?;
                residuals.push(r);
                if best.as_ref().is_none_or(|b| r < b.residual) {
                    best = Some(AposterioriChoice {
                        state: s,
                        residual: r,
                        pair: cand.with_id(s),
                        step,
                        report,
                        residuals: Vec::new(),
                    });
                }
            }
            Err(e @ Error::Divergence { .. }) => {
                warn!("candidate state {s}: {e}");
                residuals.push(f64::INFINITY);
            }
            Err(e) => return Err(e),
        }
    }
    let mut best = best.ok_or(Error::Divergence {
        state: 0,
        iteration: 0,
    })?;
    best.residuals = residuals;
    Ok(best)
}

/// Result of feeding one interval to the tracker.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub t: usize,
    pub state: usize,
    /// Criterion value of the chosen state.
    pub residual: f64,
    pub inner_iterations: usize,
    pub violations: usize,
    /// True when the update diverged and was discarded.
    pub skipped: bool,
}

#[derive(Serialize)]
struct StepEvent<'a> {
    event: &'a str,
    t: usize,
    state: usize,
    residual: f64,
    inner_iterations: usize,
    lipschitz: f64,
    skipped: bool,
}

/// Streaming tracker: feed one snapshot at a time.
#[derive(Clone, Debug)]
pub struct Tracker {
    config: TrackerConfig,
    x: ExogenousMatrix,
    states: Vec<StatePair>,
    stats: TrackerStats,
    steps: Vec<StepState>,
    last_t: usize,
}

impl Tracker {
    /// Starts from `initial_states` with all statistics at zero.
    pub fn new(
        initial_states: Vec<StatePair>,
        x: ExogenousMatrix,
        config: TrackerConfig,
    ) -> Result<Self> {
        if initial_states.is_empty() {
            return Err(Error::invalid("tracker needs at least one initial state"));
        }
        config.validate(initial_states.len())?;
        let n = x.n_nodes();
        if let Some(p) = initial_states.iter().find(|p| p.n_nodes() != n) {
            return Err(Error::dims(format!(
                "initial state has {} nodes, X has {n} rows",
                p.n_nodes()
            )));
        }
        let s = initial_states.len();
        let states = initial_states
            .into_iter()
            .enumerate()
            .map(|(i, mut p)| {
                p.zero_diagonal();
                p.with_id(i + 1)
            })
            .collect();
        Ok(Tracker {
            stats: TrackerStats::zeros(s, n, x.n_cascades()),
            steps: vec![StepState::new(n); s],
            states,
            x,
            config,
            last_t: 0,
        })
    }

    pub fn states(&self) -> &[StatePair] {
        &self.states
    }

    pub fn stats(&self) -> &TrackerStats {
        &self.stats
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn steps(&self) -> &[StepState] {
        &self.steps
    }

    /// Index of the last interval fed in (0 before the first).
    pub fn last_t(&self) -> usize {
        self.last_t
    }

    pub fn step(&mut self, snap: &CascadeSnapshot) -> Result<StepOutput> {
        let y = &snap.y;
        let out = match self.config.state_criterion {
            StateCriterion::Apriori => {
                let (s, residual) = estimate_state_apriori(y, &self.states, &self.x)?;
                let mut stats = self.stats.clone();
                update_stats(&mut stats, y, s, self.config.beta)?;
                let mut step = self.steps[s - 1].clone();
                match ista_inner_solve(
                    &self.states[s - 1],
                    stats.state(s),
                    &self.x,
                    &self.config.inner(s),
                    &mut step,
                ) {
                    Ok((pair, report)) => {
                        self.stats = stats;
                        self.states[s - 1] = pair.with_id(s);
                        self.steps[s - 1] = step;
                        StepOutput {
                            t: snap.t,
                            state: s,
                            residual,
                            inner_iterations: report.iterations,
                            violations: report.violations,
                            skipped: false,
                        }
                    }
                    Err(e @ Error::Divergence { .. }) => {
                        warn!("interval {}: {e}; update discarded", snap.t);
                        StepOutput {
                            t: snap.t,
                            state: s,
                            residual,
                            inner_iterations: 0,
                            violations: 0,
                            skipped: true,
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            StateCriterion::Aposteriori => {
                match estimate_state_aposteriori(
                    y,
                    &self.states,
                    &self.stats,
                    &self.x,
                    &self.config,
                    &self.steps,
                ) {
                    Ok(choice) => {
                        let s = choice.state;
                        update_stats(&mut self.stats, y, s, self.config.beta)?;
                        self.states[s - 1] = choice.pair;
                        self.steps[s - 1] = choice.step;
                        StepOutput {
                            t: snap.t,
                            state: s,
                            residual: choice.residual,
                            inner_iterations: choice.report.iterations,
                            violations: choice.report.violations,
                            skipped: false,
                        }
                    }
                    Err(e @ Error::Divergence { .. }) => {
                        warn!("interval {}: {e}; update discarded", snap.t);
                        let (s, residual) = estimate_state_apriori(y, &self.states, &self.x)?;
                        StepOutput {
                            t: snap.t,
                            state: s,
                            residual,
                            inner_iterations: 0,
                            violations: 0,
                            skipped: true,
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        self.last_t = snap.t;
        if log::log_enabled!(log::Level::Debug) {
            let ev = StepEvent {
                event: "track_step",
                t: out.t,
                state: out.state,
                residual: out.residual,
                inner_iterations: out.inner_iterations,
                lipschitz: self.steps[out.state - 1].lipschitz,
                skipped: out.skipped,
            };
            debug!("{}", serde_json::to_string(&ev).unwrap_or_default());
        }
        Ok(out)
    }

    /// Writes a self-contained checkpoint under `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_matrix_csv(&dir.join("X.csv"), &self.x.x)?;
        let mut states = Vec::new();
        let mut stats = Vec::new();
        let mut steps = Vec::new();
        for (idx, pair) in self.states.iter().enumerate() {
            let s = idx + 1;
            states.push(io::write_state(dir, "", pair)?);
            let st = &self.stats.states[idx];
            let omega = format!("Omega_{s}.csv");
            let ybar = format!("Ybar_{s}.csv");
            io::write_matrix_csv(&dir.join(&omega), &st.omega)?;
            io::write_matrix_csv(&dir.join(&ybar), &st.ybar)?;
            stats.push(StatsFiles {
                omega,
                ybar,
                alpha: st.alpha,
            });
            let step = &self.steps[idx];
            let warm = if step.warm.iter().all(|w| w.is_some()) {
                let n = self.x.n_nodes();
                let mut m = DMatrix::zeros(n, n);
                for (i, w) in step.warm.iter().enumerate() {
                    m.set_column(i, w.as_ref().unwrap());
                }
                let name = format!("warm_{s}.csv");
                io::write_matrix_csv(&dir.join(&name), &m)?;
                Some(name)
            } else {
                None
            };
            steps.push(StepFiles {
                lipschitz: step.lipschitz,
                node_lipschitz: step.node_lipschitz.clone(),
                inner_iter: step.inner_iter,
                warm,
            });
        }
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            t: self.last_t,
            x: "X.csv".into(),
            config: self.config.clone(),
            states,
            stats,
            steps,
        };
        io::write_json(&dir.join(CHECKPOINT_FILE), &ck)
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(CHECKPOINT_FILE))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        let x = ExogenousMatrix::new(io::read_matrix_csv(&dir.join(&ck.x))?)?;
        let states = ck
            .states
            .iter()
            .map(|f| io::read_state(dir, f))
            .collect::<Result<Vec<_>>>()?;
        let mut tracker = Tracker::new(states, x, ck.config)?;
        for (idx, f) in ck.stats.iter().enumerate() {
            tracker.stats.states[idx] = StateStats {
                omega: io::read_matrix_csv(&dir.join(&f.omega))?,
                ybar: io::read_matrix_csv(&dir.join(&f.ybar))?,
                alpha: f.alpha,
            };
        }
        for (idx, f) in ck.steps.iter().enumerate() {
            let warm = match &f.warm {
                Some(name) => {
                    let m = io::read_matrix_csv(&dir.join(name))?;
                    m.column_iter().map(|c| Some(c.into_owned())).collect()
                }
                None => vec![None; tracker.x.n_nodes()],
            };
            tracker.steps[idx] = StepState {
                lipschitz: f.lipschitz,
                node_lipschitz: f.node_lipschitz.clone(),
                warm,
                inner_iter: f.inner_iter,
            };
        }
        tracker.last_t = ck.t;
        Ok(tracker)
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StatsFiles {
    omega: String,
    ybar: String,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct StepFiles {
    lipschitz: f64,
    node_lipschitz: Vec<f64>,
    inner_iter: usize,
    warm: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    t: usize,
    x: String,
    config: TrackerConfig,
    states: Vec<io::StateFiles>,
    stats: Vec<StatsFiles>,
    steps: Vec<StepFiles>,
}

/// Output of a full tracking run.
#[derive(Clone, Debug)]
pub struct TrackResult {
    pub states: Vec<StatePair>,
    /// Interval index of every processed snapshot.
    pub t: Vec<usize>,
    pub sigma: Vec<usize>,
    pub residuals: Vec<f64>,
    /// `(t, states)` every `snapshot_stride` intervals and at the end.
    pub trajectory: Vec<(usize, Vec<StatePair>)>,
    pub skipped: Vec<usize>,
    pub violations: usize,
}

/// Runs the tracker over `snapshots` from `initial_states`.
pub fn track(
    snapshots: &[CascadeSnapshot],
    x: &ExogenousMatrix,
    initial_states: &[StatePair],
    config: &TrackerConfig,
) -> Result<TrackResult> {
    let mut tracker = Tracker::new(initial_states.to_vec(), x.clone(), config.clone())?;
    let mut res = TrackResult {
        states: Vec::new(),
        t: Vec::with_capacity(snapshots.len()),
        sigma: Vec::with_capacity(snapshots.len()),
        residuals: Vec::with_capacity(snapshots.len()),
        trajectory: Vec::new(),
        skipped: Vec::new(),
        violations: 0,
    };
    for (k, snap) in snapshots.iter().enumerate() {
        let out = tracker.step(snap)?;
        log::info!(
            "t={} state={} residual={:.6e}",
            out.t,
            out.state,
            out.residual
        );
        res.t.push(out.t);
        res.sigma.push(out.state);
        res.residuals.push(out.residual);
        res.violations += out.violations;
        if out.skipped {
            res.skipped.push(out.t);
        }
        if let Some(stride) = config.snapshot_stride {
            if (k + 1) % stride == 0 || k + 1 == snapshots.len() {
                res.trajectory.push((out.t, tracker.states().to_vec()));
            }
        }
    }
    res.states = tracker.states;
    Ok(res)
}
