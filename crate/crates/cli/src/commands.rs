//! Subcommands. Every command writes into its own output directory, guarded
//! by a lock file, and records the resolved configuration in `run.json`.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use switchtrack_core::closed_form::{
    closed_form_thetas, cluster_identify, vectorize_theta, ClusterIdentifyOptions,
};
use switchtrack_core::identifiability::{check_prop1, check_prop2, IdentifiabilityReport};
use switchtrack_core::initializer::{batch_initialize, ridge_pair};
use switchtrack_core::io::{self, StateFiles};
use switchtrack_core::kmeans::{kmeans_with, KMeansOptions};
use switchtrack_core::metrics::{
    best_permutation, graph_stats, intra_cluster_dispersion, relative_error, support_f1,
};
use switchtrack_core::model::{generate_dataset, sem_residual, StatePair};
use switchtrack_core::tracker::track;
use switchtrack_core::{cascade, Error, Result};

use crate::config::{ExperimentConfig, SweepEstimator, SweepParameter};

/// Version of every JSON document written by the commands.
pub const SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const RUN_FILE: &str = "run.json";
pub const LOCK_FILE: &str = ".switchtrack.lock";

/// Process exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        e if e.is_numerical() => 4,
        _ => 3,
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Io(std::io::Error::new(
                ErrorKind::AlreadyExists,
                format!(
                    "{} is in use by another run (delete {} if that run is gone)",
                    dir.display(),
                    path.display()
                ),
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    schema_version: u32,
    command: &'a str,
    rng_seed: u64,
    config: &'a ExperimentConfig,
}

fn write_run_record(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    io::write_json(
        &dir.join(RUN_FILE),
        &RunRecord {
            schema_version: SCHEMA_VERSION,
            command,
            rng_seed: cfg.rng_seed,
            config: cfg,
        },
    )
}

/// `t,state` rows.
pub fn write_sequence_csv(path: &Path, rows: &[(usize, usize)]) -> Result<()> {
    let mut text = String::from("t,state\n");
    for (t, s) in rows {
        writeln!(text, "{t},{s}").unwrap();
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_sequence_csv(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (t, s) = line
            .split_once(',')
            .ok_or_else(|| parse_err(idx + 1, format!("expected t,state, got {line:?}")))?;
        let t = t
            .trim()
            .parse()
            .map_err(|e| parse_err(idx + 1, format!("{e}")))?;
        let s = s
            .trim()
            .parse()
            .map_err(|e| parse_err(idx + 1, format!("{e}")))?;
        rows.push((t, s));
    }
    Ok(rows)
}

fn write_series_csv(path: &Path, header: &str, rows: &[(usize, f64)]) -> Result<()> {
    let mut text = format!("t,{header}\n");
    for (t, v) in rows {
        writeln!(text, "{t},{}", io::format_value(*v)).unwrap();
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_states(dir: &Path, prefix: &str, states: &[StatePair]) -> Result<Vec<StateFiles>> {
    states
        .iter()
        .enumerate()
        .map(|(k, p)| io::write_state(dir, prefix, &p.clone().with_id(k + 1)))
        .collect()
}

fn read_states(dir: &Path, files: &[StateFiles]) -> Result<Vec<StatePair>> {
    files.iter().map(|f| io::read_state(dir, f)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFiles {
    pub t: usize,
    pub states: Vec<StateFiles>,
}

/// `results.json`: what a `track` or `cluster-identify` run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsManifest {
    pub schema_version: u32,
    pub command: String,
    pub rng_seed: u64,
    pub n_states: usize,
    pub sigma: String,
    pub residuals: String,
    pub states: Vec<StateFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_states: Option<Vec<StateFiles>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<TrajectoryFiles>,
}

/// Everything a results directory holds, loaded.
pub struct LoadedResults {
    pub manifest: ResultsManifest,
    pub sigma: Vec<(usize, usize)>,
    pub states: Vec<StatePair>,
    pub init_states: Option<Vec<StatePair>>,
    pub trajectory: Vec<(usize, Vec<StatePair>)>,
}

pub fn load_results(dir: &Path) -> Result<LoadedResults> {
    let manifest: ResultsManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(RESULTS_FILE))?)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "results schema version {} is not {SCHEMA_VERSION}",
            manifest.schema_version
        )));
    }
    let sigma = read_sequence_csv(&dir.join(&manifest.sigma))?;
    let states = read_states(dir, &manifest.states)?;
    let init_states = manifest
        .init_states
        .as_deref()
        .map(|f| read_states(dir, f))
        .transpose()?;
    let trajectory = manifest
        .trajectory
        .iter()
        .map(|e| Ok((e.t, read_states(dir, &e.states)?)))
        .collect::<Result<_>>()?;
    Ok(LoadedResults {
        manifest,
        sigma,
        states,
        init_states,
        trajectory,
    })
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        return Ok(());
    }
    Err(Error::Io(std::io::Error::new(
        ErrorKind::NotFound,
        format!("{} does not exist or is not a file", path.display()),
    )))
}

/// Generates a synthetic dataset into `output_dir`.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    let _lock = OutputLock::acquire(out)?;
    let ds = generate_dataset(&cfg.generation)?;
    let manifest = io::write_dataset(out, &ds, Some(&cfg.generation))?;
    write_run_record(out, "generate", cfg)?;
    info!(
        "wrote {} snapshots to {}",
        ds.snapshots.len(),
        out.display()
    );
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackMetrics {
    pub schema_version: u32,
    pub command: String,
    pub rng_seed: u64,
    pub n_states: usize,
    pub n_intervals: usize,
    /// Intervals used for the batch initialization.
    pub t_init: usize,
    pub skipped: Vec<usize>,
    pub descent_violations: usize,
    pub mean_tracked_residual: Option<f64>,
    /// Intervals assigned to each state, initialization included.
    pub state_counts: Vec<usize>,
}

fn state_counts(sigma: &[(usize, usize)], n_states: usize) -> Vec<usize> {
    let mut counts = vec![0; n_states];
    for &(_, s) in sigma {
        counts[s - 1] += 1;
    }
    counts
}

/// Batch initialization on the first `ridge.t_init` intervals, then
/// tracking over the rest.
pub fn cmd_track(manifest: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    require_file(manifest)?;
    let out = &cfg.output_dir;
    let _lock = OutputLock::acquire(out)?;
    let (_, ds) = io::load_dataset(manifest)?;
    let s = cfg.n_states();
    let tcfg = cfg.tracker.resolve(s)?;
    let t_init = cfg.ridge.t_init;
    let init = batch_initialize(&ds.snapshots, &ds.x, s, &cfg.ridge, cfg.rng_seed)?;
    info!("initialized {s} states from {t_init} intervals");
    let res = track(&ds.snapshots[t_init..], &ds.x, &init.states, &tcfg)?;

    let mut sigma: Vec<(usize, usize)> = Vec::with_capacity(ds.snapshots.len());
    let mut residuals = Vec::with_capacity(ds.snapshots.len());
    for (snap, &l) in ds.snapshots.iter().zip(&init.model.assignments) {
        sigma.push((snap.t, l));
        residuals.push((snap.t, sem_residual(&snap.y, &ds.x.x, &init.states[l - 1])?));
    }
    for ((&t, &l), &r) in res.t.iter().zip(&res.sigma).zip(&res.residuals) {
        sigma.push((t, l));
        residuals.push((t, r));
    }

    fs::create_dir_all(out)?;
    write_sequence_csv(&out.join("sigma_est.csv"), &sigma)?;
    write_series_csv(&out.join("residuals.csv"), "residual", &residuals)?;
    let states = write_states(out, "states/", &res.states)?;
    let init_states = write_states(out, "init_states/", &init.states)?;
    let trajectory = res
        .trajectory
        .iter()
        .map(|(t, st)| {
            Ok(TrajectoryFiles {
                t: *t,
                states: write_states(out, &format!("trajectory/t{t:06}_"), st)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_json(
        &out.join(RESULTS_FILE),
        &ResultsManifest {
            schema_version: SCHEMA_VERSION,
            command: "track".into(),
            rng_seed: cfg.rng_seed,
            n_states: s,
            sigma: "sigma_est.csv".into(),
            residuals: "residuals.csv".into(),
            states,
            init_states: Some(init_states),
            trajectory,
        },
    )?;
    let tracked = res.residuals.len();
    io::write_json(
        &out.join(METRICS_FILE),
        &TrackMetrics {
            schema_version: SCHEMA_VERSION,
            command: "track".into(),
            rng_seed: cfg.rng_seed,
            n_states: s,
            n_intervals: ds.snapshots.len(),
            t_init,
            skipped: res.skipped.clone(),
            descent_violations: res.violations,
            mean_tracked_residual: (tracked > 0)
                .then(|| res.residuals.iter().sum::<f64>() / tracked as f64),
            state_counts: state_counts(&sigma, s),
        },
    )?;
    write_run_record(out, "track", cfg)?;
    Ok(out.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub schema_version: u32,
    pub command: String,
    pub rng_seed: u64,
    pub n_states: usize,
    pub t_cluster: usize,
    pub failed: Vec<usize>,
    pub inertia: f64,
    pub state_counts: Vec<usize>,
}

/// Closed-form estimates per interval, clustered.
pub fn cmd_cluster_identify(manifest: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    require_file(manifest)?;
    let out = &cfg.output_dir;
    let _lock = OutputLock::acquire(out)?;
    let (_, ds) = io::load_dataset(manifest)?;
    let s = cfg.n_states();
    let opts = ClusterIdentifyOptions {
        n_states: s,
        t_cluster: cfg.clustering.t_cluster,
        rng_seed: cfg.rng_seed,
        n_init: cfg.clustering.n_init,
        max_iter: cfg.clustering.max_iter,
    };
    let id = cluster_identify(&ds.snapshots, &ds.x, &opts)?;
    let sigma: Vec<(usize, usize)> = ds
        .snapshots
        .iter()
        .map(|snap| snap.t)
        .zip(id.sigma.labels().iter().copied())
        .collect();
    let residuals = ds
        .snapshots
        .iter()
        .zip(id.sigma.labels())
        .map(|(snap, &l)| Ok((snap.t, sem_residual(&snap.y, &ds.x.x, &id.states[l - 1])?)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    write_sequence_csv(&out.join("sigma_est.csv"), &sigma)?;
    write_series_csv(&out.join("residuals.csv"), "residual", &residuals)?;
    let states = write_states(out, "states/", &id.states)?;
    io::write_json(
        &out.join(RESULTS_FILE),
        &ResultsManifest {
            schema_version: SCHEMA_VERSION,
            command: "cluster-identify".into(),
            rng_seed: cfg.rng_seed,
            n_states: s,
            sigma: "sigma_est.csv".into(),
            residuals: "residuals.csv".into(),
            states,
            init_states: None,
            trajectory: Vec::new(),
        },
    )?;
    io::write_json(
        &out.join(METRICS_FILE),
        &ClusterMetrics {
            schema_version: SCHEMA_VERSION,
            command: "cluster-identify".into(),
            rng_seed: cfg.rng_seed,
            n_states: s,
            t_cluster: opts.t_cluster,
            failed: id.failed.clone(),
            inertia: id.model.inertia,
            state_counts: state_counts(&sigma, s),
        },
    )?;
    write_run_record(out, "cluster-identify", cfg)?;
    Ok(out.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateScore {
    pub estimated: usize,
    /// True state matched by label alignment, if any.
    pub matched: Option<usize>,
    pub relative_error: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub threshold: f64,
    pub n_intervals: usize,
    pub state_accuracy: f64,
    /// `permutation[s_hat - 1]` is the true label matched to `s_hat`.
    pub permutation: Vec<usize>,
    pub states: Vec<StateScore>,
    /// Relative error of the active estimate at the last interval.
    pub final_interval_error: f64,
}

/// Compares a results directory with the ground truth of a synthetic
/// dataset. Writes `metrics.json` and `error_curve.csv` into `out`.
pub fn cmd_evaluate(
    results: &Path,
    truth_manifest: &Path,
    threshold: f64,
    out: &Path,
) -> Result<EvaluationReport> {
    if !(threshold >= 0.0) {
        return Err(Error::Config(format!("threshold {threshold} must be >= 0")));
    }
    require_file(truth_manifest)?;
    require_file(&results.join(RESULTS_FILE))?;
    let _lock = OutputLock::acquire(out)?;
    let run = load_results(results)?;
    let (_, truth) = io::load_dataset(truth_manifest)?;
    let (true_states, true_sigma) = match (&truth.states, &truth.sigma) {
        (Some(st), Some(sg)) => (st, sg),
        _ => {
            return Err(Error::InvalidInput(
                "truth dataset carries no ground-truth states and sequence".into(),
            ))
        }
    };
    let true_at = |t: usize| -> Result<usize> {
        if t == 0 || t > true_sigma.len() {
            return Err(Error::DimensionMismatch(format!(
                "interval {t} missing from the truth sequence"
            )));
        }
        Ok(true_sigma.at(t))
    };
    let n_labels = run.manifest.n_states.max(true_states.len());
    let truth_labels = run
        .sigma
        .iter()
        .map(|&(t, _)| true_at(t))
        .collect::<Result<Vec<_>>>()?;
    let est_labels: Vec<usize> = run.sigma.iter().map(|&(_, s)| s).collect();
    let (accuracy, permutation) = best_permutation(&truth_labels, &est_labels, n_labels)?;

    let mut scores = Vec::with_capacity(run.states.len());
    for (k, est) in run.states.iter().enumerate() {
        let matched = Some(permutation[k]).filter(|&m| m <= true_states.len());
        let (re, sup) = match matched {
            Some(m) => {
                let tr = &true_states[m - 1];
                (
                    Some(relative_error(tr, est)?),
                    Some(support_f1(&tr.a, &est.a, threshold)?),
                )
            }
            None => (None, None),
        };
        scores.push(StateScore {
            estimated: k + 1,
            matched,
            relative_error: re,
            precision: sup.map(|s| s.precision),
            recall: sup.map(|s| s.recall),
            f1: sup.map(|s| s.f1),
        });
    }

    // Error of the active estimate against the active truth. With a stored
    // trajectory the curve is evaluated at its snapshots, otherwise every
    // interval is scored against the final estimates.
    let curve: Vec<(usize, f64)> = if run.trajectory.is_empty() {
        run.sigma
            .iter()
            .map(|&(t, s)| {
                Ok((
                    t,
                    relative_error(&true_states[true_at(t)? - 1], &run.states[s - 1])?,
                ))
            })
            .collect::<Result<_>>()?
    } else {
        run.trajectory
            .iter()
            .filter_map(|(t, st)| {
                run.sigma
                    .iter()
                    .find(|e| e.0 == *t)
                    .map(|&(_, s)| (*t, st, s))
            })
            .map(|(t, st, s)| {
                Ok((
                    t,
                    relative_error(&true_states[true_at(t)? - 1], &st[s - 1])?,
                ))
            })
            .collect::<Result<_>>()?
    };
    let final_interval_error = match run.sigma.last() {
        Some(&(t, s)) => relative_error(&true_states[true_at(t)? - 1], &run.states[s - 1])?,
        None => return Err(Error::EmptyData("results hold no intervals".into())),
    };
    let report = EvaluationReport {
        schema_version: SCHEMA_VERSION,
        threshold,
        n_intervals: run.sigma.len(),
        state_accuracy: accuracy,
        permutation,
        states: scores,
        final_interval_error,
    };
    write_series_csv(&out.join("error_curve.csv"), "relative_error", &curve)?;
    io::write_json(&out.join(METRICS_FILE), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// `log10` intra-cluster distance (`S` sweeps; `null` when zero).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<f64>,
    /// State the graph statistics belong to (`lambda` sweeps).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_shortest_path_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diameter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_num_neighbors: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_clustering_coefficient: Option<f64>,
}

fn opt_csv<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut text = String::from(
        "value,dispersion,state,avg_shortest_path_length,diameter,avg_num_neighbors,avg_clustering_coefficient\n",
    );
    for r in rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            io::format_value(r.value),
            match (r.dispersion, r.state) {
                (Some(d), _) => io::format_value(d),
                (None, None) => "-inf".into(),
                (None, Some(_)) => String::new(),
            },
            opt_csv(r.state),
            opt_csv(r.avg_shortest_path_length.map(io::format_value)),
            opt_csv(r.diameter),
            opt_csv(r.avg_num_neighbors.map(io::format_value)),
            opt_csv(r.avg_clustering_coefficient.map(io::format_value)),
        )
        .unwrap();
    }
    fs::write(path, text)?;
    Ok(())
}

/// `S` sweep: cluster per-interval estimates for every value of `S` and
/// report the dispersion. `lambda` sweep: track with every value and report
/// graph statistics of the final states.
pub fn cmd_sweep(manifest: &Path, cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    require_file(manifest)?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs a [sweep] section".into()))?;
    let out = &cfg.output_dir;
    let _lock = OutputLock::acquire(out)?;
    let (_, ds) = io::load_dataset(manifest)?;
    let mut rows = Vec::new();
    match sweep.parameter {
        SweepParameter::S => {
            let points: Vec<DVector<f64>> = match sweep.estimator {
                SweepEstimator::Ridge => {
                    let n = cfg.ridge.t_init.min(ds.snapshots.len());
                    ds.snapshots[..n]
                        .iter()
                        .map(|snap| {
                            let p = ridge_pair(
                                &snap.y,
                                &ds.x.x,
                                cfg.ridge.mu,
                                cfg.ridge.max_alt_iters,
                                cfg.ridge.tol_alt,
                            )?;
                            Ok(vectorize_theta(&p).theta)
                        })
                        .collect::<Result<_>>()?
                }
                SweepEstimator::ClosedForm => {
                    let n = cfg.clustering.t_cluster.min(ds.snapshots.len());
                    closed_form_thetas(&ds.snapshots[..n], &ds.x)?
                        .into_iter()
                        .filter_map(|r| r.ok().map(|th| th.theta))
                        .collect()
                }
            };
            for &v in &sweep.values {
                let k = v as usize;
                let model = kmeans_with(
                    &points,
                    &KMeansOptions {
                        k,
                        max_iter: cfg.clustering.max_iter,
                        n_init: cfg.clustering.n_init,
                        rng_seed: cfg.rng_seed,
                    },
                )?;
                let d = intra_cluster_dispersion(&points, &model.centroids, &model.assignments)?;
                info!("S={k} dispersion={d:.6}");
                rows.push(SweepRow {
                    value: v,
                    dispersion: d.is_finite().then_some(d),
                    state: None,
                    avg_shortest_path_length: None,
                    diameter: None,
                    avg_num_neighbors: None,
                    avg_clustering_coefficient: None,
                });
            }
        }
        SweepParameter::Lambda => {
            let s = cfg.n_states();
            let init = batch_initialize(&ds.snapshots, &ds.x, s, &cfg.ridge, cfg.rng_seed)?;
            for &v in &sweep.values {
                let mut section = cfg.tracker.clone();
                section.lambda = vec![v];
                let tcfg = section.resolve(s)?;
                let res = track(
                    &ds.snapshots[cfg.ridge.t_init..],
                    &ds.x,
                    &init.states,
                    &tcfg,
                )?;
                for (k, st) in res.states.iter().enumerate() {
                    let g = match graph_stats(&st.a, cfg.evaluation.threshold) {
                        Ok(g) => Some(g),
                        Err(Error::EmptyData(_)) => None,
                        Err(e) => return Err(e),
                    };
                    rows.push(SweepRow {
                        value: v,
                        dispersion: None,
                        state: Some(k + 1),
                        avg_shortest_path_length: g.as_ref().map(|g| g.avg_shortest_path_length),
                        diameter: g.as_ref().map(|g| g.diameter),
                        avg_num_neighbors: Some(g.as_ref().map_or(0.0, |g| g.avg_num_neighbors)),
                        avg_clustering_coefficient: g
                            .as_ref()
                            .map(|g| g.avg_clustering_coefficient),
                    });
                }
                info!("lambda={v} done");
            }
        }
    }
    write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    io::write_json(&out.join("sweep.json"), &rows)?;
    write_run_record(out, "sweep", cfg)?;
    Ok(rows)
}

/// Checks the recovery conditions for the susceptibility matrix stored at
/// `matrix`, with the sparse condition when `k` is given.
pub fn cmd_identifiability(
    matrix: &Path,
    k: Option<usize>,
    out: Option<&Path>,
) -> Result<IdentifiabilityReport> {
    require_file(matrix)?;
    let x = io::read_matrix_csv(matrix)?;
    let report = match k {
        Some(k) => check_prop2(&x, k)?,
        None => check_prop1(&x)?,
    };
    if let Some(dir) = out {
        let _lock = OutputLock::acquire(dir)?;
        io::write_json(&dir.join("identifiability.json"), &report)?;
    }
    Ok(report)
}

/// Turns an event log into a dataset directory.
pub fn cmd_ingest(events: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let pre = cfg
        .ingest
        .as_ref()
        .ok_or_else(|| Error::Config("ingest needs an [ingest] section".into()))?;
    require_file(events)?;
    let out = &cfg.output_dir;
    let _lock = OutputLock::acquire(out)?;
    let manifest = cascade::ingest(events, pre, out)?;
    write_run_record(out, "ingest", cfg)?;
    Ok(manifest)
}
