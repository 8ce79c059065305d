//! Ingestion of timestamped cascade logs.
//!
//! Each event records the first time (integer hours) a node adopted a
//! cascade. The observation span is cut into `T` equal intervals and every
//! interval becomes one snapshot `Y_t`. Inside interval `t` an infection at
//! time `u` maps to `log10(u - m_t + 1)`, where `m_t` is the earliest
//! infection time in the interval. The `+1` keeps the earliest infection
//! itself finite (it maps to 0). Pairs not infected during the interval get
//! the constant `2 + log10(max u)`, which stands in for "never".

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{CascadeSnapshot, Dataset, ExogenousMatrix};

pub const ID_MAPS_FILE: &str = "id_maps.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeEvent {
    pub node_id: String,
    pub cascade_id: String,
    /// Unix time in hours.
    pub timestamp: u64,
}

/// How an infection time maps to a snapshot value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeTransform {
    /// `log10(u - m + 1)`.
    #[default]
    Offset,
    /// `log10(u - m)`, with the minimizer itself mapped to 0.
    Raw,
}

/// Which events the reference time `m` is taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMinimum {
    /// Earliest infection in the interval across all cascades.
    #[default]
    Global,
    /// Earliest infection of the same cascade in the interval.
    PerCascade,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub n_intervals: usize,
    #[serde(default = "default_min_infected")]
    pub min_infected: usize,
    pub n_categories: usize,
    /// Cascade id to 0-based category index.
    pub category_map: BTreeMap<String, usize>,
    #[serde(default)]
    pub transform: TimeTransform,
    #[serde(default)]
    pub minimum: IntervalMinimum,
}

fn default_min_infected() -> usize {
    100
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_intervals == 0 {
            return Err(Error::Config("n_intervals must be >= 1".into()));
        }
        if self.min_infected == 0 {
            return Err(Error::Config("min_infected must be >= 1".into()));
        }
        if self.n_categories == 0 {
            return Err(Error::Config("n_categories must be >= 1".into()));
        }
        if let Some((id, k)) = self
            .category_map
            .iter()
            .find(|(_, &k)| k >= self.n_categories)
        {
            return Err(Error::Config(format!(
                "cascade {id} mapped to category {k}, only {} categories",
                self.n_categories
            )));
        }
        Ok(())
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn check_event(path: &Path, line: usize, ev: &CascadeEvent) -> Result<()> {
    if ev.node_id.is_empty() || ev.cascade_id.is_empty() {
        return Err(parse_err(path, line, "empty node_id or cascade_id"));
    }
    Ok(())
}

fn parse_jsonl(path: &Path, text: &str) -> Result<Vec<CascadeEvent>> {
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: CascadeEvent =
            serde_json::from_str(line).map_err(|e| parse_err(path, idx + 1, e.to_string()))?;
        check_event(path, idx + 1, &ev)?;
        events.push(ev);
    }
    Ok(events)
}

fn parse_csv(path: &Path, text: &str) -> Result<Vec<CascadeEvent>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, 1, format!("missing column {name}")))
    };
    let (ni, ci, ti) = (
        column("node_id")?,
        column("cascade_id")?,
        column("timestamp")?,
    );
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| record.get(k).unwrap_or("");
        let timestamp = field(ti)
            .parse::<u64>()
            .map_err(|e| parse_err(path, line, format!("timestamp {:?}: {e}", field(ti))))?;
        let ev = CascadeEvent {
            node_id: field(ni).to_string(),
            cascade_id: field(ci).to_string(),
            timestamp,
        };
        check_event(path, line, &ev)?;
        events.push(ev);
    }
    Ok(events)
}

/// Keeps the earliest event of every `(node, cascade)` pair, in order of
/// first appearance.
pub fn dedup_earliest(events: Vec<CascadeEvent>) -> Vec<CascadeEvent> {
    let mut slot: HashMap<(String, String), usize> = HashMap::new();
    let mut out: Vec<CascadeEvent> = Vec::new();
    for ev in events {
        match slot.get(&(ev.node_id.clone(), ev.cascade_id.clone())) {
            Some(&k) => out[k].timestamp = out[k].timestamp.min(ev.timestamp),
            None => {
                slot.insert((ev.node_id.clone(), ev.cascade_id.clone()), out.len());
                out.push(ev);
            }
        }
    }
    out
}

/// Reads a CSV (header `node_id,cascade_id,timestamp`) or JSONL event log.
/// The format is chosen from the first non-blank character.
pub fn load_events(path: &Path) -> Result<Vec<CascadeEvent>> {
    let text = fs::read_to_string(path)?;
    let events = match text.trim_start().chars().next() {
        None => Vec::new(),
        Some('{') => parse_jsonl(path, &text)?,
        Some(_) => parse_csv(path, &text)?,
    };
    Ok(dedup_earliest(events))
}

/// Events with dense indices. `nodes[i]` and `cascades[c]` hold the
/// original ids of row `i` and column `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexedEvents {
    pub events: Vec<CascadeEvent>,
    pub nodes: Vec<String>,
    pub cascades: Vec<String>,
}

impl IndexedEvents {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_cascades(&self) -> usize {
        self.cascades.len()
    }

    /// `(node index, cascade index, timestamp)` for every event.
    pub fn triples(&self) -> Vec<(usize, usize, u64)> {
        let node_idx: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let casc_idx: HashMap<&str, usize> = self
            .cascades
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        self.events
            .iter()
            .map(|e| {
                (
                    node_idx[e.node_id.as_str()],
                    casc_idx[e.cascade_id.as_str()],
                    e.timestamp,
                )
            })
            .collect()
    }
}

/// Drops cascades that reached fewer than `min_infected` distinct nodes and
/// indexes what survives, in order of first appearance.
pub fn filter_memes(events: &[CascadeEvent], min_infected: usize) -> IndexedEvents {
    let mut reach: HashMap<&str, HashSet<&str>> = HashMap::new();
    for ev in events {
        reach.entry(&ev.cascade_id).or_default().insert(&ev.node_id);
    }
    let kept: Vec<CascadeEvent> = events
        .iter()
        .filter(|ev| reach[ev.cascade_id.as_str()].len() >= min_infected)
        .cloned()
        .collect();
    let mut nodes = Vec::new();
    let mut cascades = Vec::new();
    let mut seen_n = HashSet::new();
    let mut seen_c = HashSet::new();
    for ev in &kept {
        if seen_n.insert(ev.node_id.clone()) {
            nodes.push(ev.node_id.clone());
        }
        if seen_c.insert(ev.cascade_id.clone()) {
            cascades.push(ev.cascade_id.clone());
        }
    }
    IndexedEvents {
        events: kept,
        nodes,
        cascades,
    }
}

/// 0-based interval of `u` among `t` equal-width intervals of
/// `[start, end]`; intervals are half-open except the last.
pub fn interval_of(u: u64, start: u64, end: u64, t: usize) -> usize {
    if end == start {
        return 0;
    }
    let k = (u128::from(u - start) * t as u128) / u128::from(end - start);
    (k as usize).min(t - 1)
}

/// `2 + log10(max u)`, floored at 2.
pub fn surrogate_value(max_timestamp: u64) -> f64 {
    2.0 + (max_timestamp.max(1) as f64).log10()
}

fn transform(u: u64, m: u64, rule: TimeTransform) -> f64 {
    let d = (u - m) as f64;
    match rule {
        TimeTransform::Offset => (d + 1.0).log10(),
        TimeTransform::Raw => d.max(1.0).log10(),
    }
}

/// One `N x C` snapshot per interval.
pub fn build_snapshots(
    data: &IndexedEvents,
    n_intervals: usize,
    rule: TimeTransform,
    minimum: IntervalMinimum,
) -> Result<Vec<CascadeSnapshot>> {
    if n_intervals == 0 {
        return Err(Error::invalid("need at least one interval"));
    }
    if data.events.is_empty() {
        return Err(Error::EmptyData("no events to build snapshots from".into()));
    }
    let triples = data.triples();
    let start = triples.iter().map(|e| e.2).min().unwrap();
    let end = triples.iter().map(|e| e.2).max().unwrap();
    let surrogate = surrogate_value(end);
    let (n, c) = (data.n_nodes(), data.n_cascades());

    let interval: Vec<usize> = triples
        .iter()
        .map(|e| interval_of(e.2, start, end, n_intervals))
        .collect();
    let mut global_min = vec![u64::MAX; n_intervals];
    let mut cascade_min: HashMap<(usize, usize), u64> = HashMap::new();
    for (&(_, ci, u), &k) in triples.iter().zip(&interval) {
        global_min[k] = global_min[k].min(u);
        let m = cascade_min.entry((k, ci)).or_insert(u);
        *m = (*m).min(u);
    }

    let mut ys = vec![DMatrix::from_element(n, c, surrogate); n_intervals];
    for (&(ni, ci, u), &k) in triples.iter().zip(&interval) {
        let m = match minimum {
            IntervalMinimum::Global => global_min[k],
            IntervalMinimum::PerCascade => cascade_min[&(k, ci)],
        };
        ys[k][(ni, ci)] = transform(u, m, rule);
    }
    ys.into_iter()
        .enumerate()
        .map(|(k, y)| CascadeSnapshot::new(y, k + 1))
        .collect()
}

/// `x_ic = gamma_{i, k(c)}`: the share of node `i`'s infections that came
/// from cascades of category `k(c)`. Nodes with no infections get
/// `1 / n_categories` everywhere.
pub fn build_susceptibility(
    data: &IndexedEvents,
    category_map: &BTreeMap<String, usize>,
    n_categories: usize,
) -> Result<ExogenousMatrix> {
    if n_categories == 0 {
        return Err(Error::invalid("need at least one category"));
    }
    let category: Vec<usize> = data
        .cascades
        .iter()
        .map(|id| match category_map.get(id) {
            Some(&k) if k < n_categories => Ok(k),
            Some(&k) => Err(Error::invalid(format!(
                "cascade {id} has category {k} >= {n_categories}"
            ))),
            None => Err(Error::UnmappedCascade(id.clone())),
        })
        .collect::<Result<_>>()?;
    let n = data.n_nodes();
    let mut counts = DMatrix::<f64>::zeros(n, n_categories);
    for (ni, ci, _) in data.triples() {
        counts[(ni, category[ci])] += 1.0;
    }
    let x = DMatrix::from_fn(n, data.n_cascades(), |i, c| {
        let total: f64 = counts.row(i).sum();
        if total == 0.0 {
            1.0 / n_categories as f64
        } else {
            counts[(i, category[c])] / total
        }
    });
    ExogenousMatrix::new(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdMaps {
    /// Original node id of row `i` (0-based position).
    pub nodes: Vec<String>,
    /// Original cascade id of column `c`.
    pub cascades: Vec<String>,
}

/// Full pipeline: load, filter, transform and write a dataset directory
/// with an id map. Returns the manifest path.
pub fn ingest(events_path: &Path, config: &PreprocessConfig, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    let events = load_events(events_path)?;
    let data = filter_memes(&events, config.min_infected);
    if data.events.is_empty() {
        return Err(Error::EmptyData(format!(
            "no cascade reached {} nodes",
            config.min_infected
        )));
    }
    log::info!(
        "ingest: {} events, {} nodes, {} cascades after filtering",
        data.events.len(),
        data.n_nodes(),
        data.n_cascades()
    );
    let snapshots = build_snapshots(&data, config.n_intervals, config.transform, config.minimum)?;
    let x = build_susceptibility(&data, &config.category_map, config.n_categories)?;
    let dataset = Dataset {
        x,
        snapshots,
        states: None,
        sigma: None,
    };
    let manifest_path = io::write_dataset(out_dir, &dataset, None)?;
    io::write_json(
        &out_dir.join(ID_MAPS_FILE),
        &IdMaps {
            nodes: data.nodes,
            cascades: data.cascades,
        },
    )?;
    let mut manifest = io::read_manifest(&manifest_path)?;
    manifest.id_maps = Some(ID_MAPS_FILE.into());
    io::write_json(&manifest_path, &manifest)?;
    Ok(manifest_path)
}
