//! Experiment configuration, loaded from TOML or JSON.
//!
//! Precedence is defaults, then the config file, then command-line flags.
//! The top-level `rng_seed` drives every random choice of a run, including
//! data generation, so `generation.rng_seed` is overwritten with it.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use switchtrack_core::cascade::PreprocessConfig;
use switchtrack_core::initializer::RidgeConfig;
use switchtrack_core::model::GenerationConfig;
use switchtrack_core::tracker::ista::{LipschitzScope, StepRule};
use switchtrack_core::tracker::{StateCriterion, TrackerConfig};
use switchtrack_core::{Error, Result};

/// Tracker preset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// A priori state choice, a few backtracking iterations per interval.
    #[default]
    Stream,
    /// A posteriori state choice, inner solves run to tolerance.
    Offline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Apriori,
    Aposteriori,
}

impl From<Criterion> for StateCriterion {
    fn from(c: Criterion) -> Self {
        match c {
            Criterion::Apriori => StateCriterion::Apriori,
            Criterion::Aposteriori => StateCriterion::Aposteriori,
        }
    }
}

fn default_lambda() -> Vec<f64> {
    vec![0.95]
}

/// Tracker settings on top of a [`Mode`] preset. Unset fields keep the
/// preset's value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerSection {
    #[serde(default)]
    pub mode: Mode,
    /// One value per state, or a single value shared by all states.
    #[serde(default = "default_lambda")]
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_inner_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_inner: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_rule: Option<StepRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_criterion: Option<Criterion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_scope: Option<LipschitzScope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallel: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
}

impl Default for TrackerSection {
    fn default() -> Self {
        TrackerSection {
            mode: Mode::default(),
            lambda: default_lambda(),
            beta: None,
            max_inner_iters: None,
            tol_inner: None,
            step_rule: None,
            state_criterion: None,
            lipschitz_scope: None,
            parallel: None,
            snapshot_stride: None,
        }
    }
}

impl TrackerSection {
    pub fn resolve(&self, n_states: usize) -> Result<TrackerConfig> {
        let lambda = match self.lambda.as_slice() {
            [l] => vec![*l; n_states],
            ls => ls.to_vec(),
        };
        let mut cfg = match self.mode {
            Mode::Stream => TrackerConfig::streaming(lambda),
            Mode::Offline => TrackerConfig::offline(lambda),
        };
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.max_inner_iters {
            cfg.max_inner_iters = v;
        }
        if let Some(v) = self.tol_inner {
            cfg.tol_inner = v;
        }
        if let Some(v) = self.step_rule {
            cfg.step_rule = v;
        }
        if let Some(v) = self.state_criterion {
            cfg.state_criterion = v.into();
        }
        if let Some(v) = self.lipschitz_scope {
            cfg.lipschitz_scope = v;
        }
        if let Some(v) = self.parallel {
            cfg.parallel = v;
        }
        cfg.snapshot_stride = self.snapshot_stride;
        cfg.validate(n_states)?;
        Ok(cfg)
    }
}

fn default_t_cluster() -> usize {
    200
}
fn default_n_init() -> usize {
    10
}
fn default_max_iter() -> usize {
    300
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringSection {
    /// Number of states. Falls back to `generation.n_states`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_states: Option<usize>,
    #[serde(default = "default_t_cluster")]
    pub t_cluster: usize,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        ClusteringSection {
            n_states: None,
            t_cluster: default_t_cluster(),
            n_init: default_n_init(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// l1 weight shared by all states; reports graph statistics.
    Lambda,
    /// Number of states; reports the intra-cluster dispersion.
    S,
}

/// Per-interval estimates clustered by an `S` sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepEstimator {
    /// Ridge fits of the first `ridge.t_init` intervals.
    #[default]
    Ridge,
    /// Closed-form fits of the first `clustering.t_cluster` intervals.
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default)]
    pub estimator: SweepEstimator,
}

fn default_threshold() -> f64 {
    switchtrack_core::metrics::DEFAULT_SUPPORT_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Entries with `|a| > threshold` count as edges.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            threshold: default_threshold(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub ridge: RidgeConfig,
    #[serde(default)]
    pub tracker: TrackerSection,
    #[serde(default)]
    pub clustering: ClusteringSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<PreprocessConfig>,
    /// Not recorded in run outputs, so that identical runs written to
    /// different directories stay byte-identical.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            generation: GenerationConfig::default(),
            ridge: RidgeConfig::default(),
            tracker: TrackerSection::default(),
            clustering: ClusteringSection::default(),
            sweep: None,
            evaluation: EvaluationSection::default(),
            ingest: None,
            output_dir: default_output_dir(),
            rng_seed: 0,
        }
    }
}

/// Command-line values that win over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub criterion: Option<Criterion>,
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the file name ends in `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: ExperimentConfig = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.rng_seed = seed;
        }
        if let Some(mode) = o.mode {
            self.tracker.mode = mode;
        }
        if let Some(c) = o.criterion {
            self.tracker.state_criterion = Some(c);
        }
        self.generation.rng_seed = self.rng_seed;
    }

    pub fn n_states(&self) -> usize {
        self.clustering.n_states.unwrap_or(self.generation.n_states)
    }

    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        let s = self.n_states();
        if s == 0 {
            return Err(Error::Config("number of states must be >= 1".into()));
        }
        self.ridge.validate(s)?;
        self.tracker.resolve(s)?;
        if self.clustering.t_cluster == 0 || self.clustering.n_init == 0 {
            return Err(Error::Config("t_cluster and n_init must be >= 1".into()));
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            if sw.parameter == SweepParameter::S
                && sw.values.iter().any(|&v| !(v >= 1.0 && v.fract() == 0.0))
            {
                return Err(Error::Config(
                    "S sweep values must be positive integers".into(),
                ));
            }
        }
        if !(self.evaluation.threshold >= 0.0) {
            return Err(Error::Config("evaluation threshold must be >= 0".into()));
        }
        if let Some(ing) = &self.ingest {
            ing.validate()?;
        }
        Ok(())
    }
}
