//! Matrix CSV files and the dataset manifest.
//!
//! A matrix file starts with a `# rows cols` header line followed by one
//! comma-separated row per line. Values are written with 17 significant
//! digits so that reading a file back reproduces the exact `f64` bits.
//!
//! A dataset directory holds `manifest.json`, which names the `X` file, one
//! file per snapshot `Y_t` and, for synthetic data, the ground-truth states
//! and switching sequence. Paths inside the manifest are relative to the
//! manifest's directory.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CascadeSnapshot, Dataset, ExogenousMatrix, GenerationConfig, StatePair, SwitchSequence,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Formats one value with 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# {} {}", m.nrows(), m.ncols())?;
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (rows, cols) = match lines.next() {
        Some((_, header)) => {
            let header = header?;
            let dims: Vec<&str> = header
                .trim()
                .strip_prefix('#')
                .ok_or_else(|| parse_err(1, "missing '# rows cols' header".into()))?
                .split_whitespace()
                .collect();
            match dims.as_slice() {
                [r, c] => (
                    r.parse::<usize>()
                        .map_err(|e| parse_err(1, e.to_string()))?,
                    c.parse::<usize>()
                        .map_err(|e| parse_err(1, e.to_string()))?,
                ),
                _ => return Err(parse_err(1, format!("bad header {header:?}"))),
            }
        }
        None => return Err(parse_err(1, "empty file".into())),
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen_rows = 0;
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| parse_err(idx + 1, format!("{field:?}: {e}")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(parse_err(
                idx + 1,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(parse_err(
            0,
            format!("expected {rows} rows, found {seen_rows}"),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn write_vector_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix_csv(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(Error::dims(format!(
            "{} holds a {}x{} matrix, expected a column",
            path.display(),
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

/// Writes integer labels one per line under the same header convention.
pub fn write_labels_csv(path: &Path, labels: &[usize]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# {} 1", labels.len())?;
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<usize>> {
    let m = read_matrix_csv(path)?;
    m.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 2,
                    message: format!("{v} is not a label"),
                })
            }
        })
        .collect()
}

/// File names of one stored state pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFiles {
    pub state_id: usize,
    pub a: String,
    pub b: String,
}

pub fn write_state(dir: &Path, prefix: &str, pair: &StatePair) -> Result<StateFiles> {
    let a = format!("{prefix}A_{}.csv", pair.state_id);
    let b = format!("{prefix}b_{}.csv", pair.state_id);
    write_matrix_csv(&dir.join(&a), &pair.a)?;
    write_vector_csv(&dir.join(&b), &pair.b)?;
    Ok(StateFiles {
        state_id: pair.state_id,
        a,
        b,
    })
}

pub fn read_state(dir: &Path, files: &StateFiles) -> Result<StatePair> {
    let a = read_matrix_csv(&dir.join(&files.a))?;
    let b = read_vector_csv(&dir.join(&files.b))?;
    StatePair::hollowed(a, b, files.state_id)
}

/// `manifest.json` of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub n_nodes: usize,
    pub n_cascades: usize,
    pub n_intervals: usize,
    pub x: String,
    pub snapshots: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_states: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<StateFiles>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_maps: Option<String>,
}

/// Writes `dataset` under `dir` and returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    dataset: &Dataset,
    generation: Option<&GenerationConfig>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    write_matrix_csv(&dir.join("X.csv"), &dataset.x.x)?;
    let width = dataset.snapshots.len().to_string().len().max(4);
    let mut snapshots = Vec::with_capacity(dataset.snapshots.len());
    for snap in &dataset.snapshots {
        let name = format!("Y/Y_{:0width$}.csv", snap.t);
        write_matrix_csv(&dir.join(&name), &snap.y)?;
        snapshots.push(name);
    }
    let states = match &dataset.states {
        Some(states) => Some(
            states
                .iter()
                .map(|p| write_state(dir, "states/", p))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let sigma = match &dataset.sigma {
        Some(seq) => {
            write_labels_csv(&dir.join("sigma.csv"), seq.labels())?;
            Some("sigma.csv".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        n_nodes: dataset.x.n_nodes(),
        n_cascades: dataset.x.n_cascades(),
        n_intervals: dataset.snapshots.len(),
        x: "X.csv".into(),
        snapshots,
        n_states: dataset
            .states
            .as_ref()
            .map(|s| s.len())
            .or(dataset.sigma.as_ref().map(|s| s.n_states())),
        states,
        sigma,
        generation: generation.cloned(),
        id_maps: None,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::invalid(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Accepts either a manifest file or the directory containing one.
pub fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_dataset(path: &Path) -> Result<(Manifest, Dataset)> {
    let path = resolve_manifest(path);
    let manifest = read_manifest(&path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let x = ExogenousMatrix::new(read_matrix_csv(&dir.join(&manifest.x))?)?;
    if x.n_nodes() != manifest.n_nodes || x.n_cascades() != manifest.n_cascades {
        return Err(Error::dims(format!(
            "X is {}x{}, manifest says {}x{}",
            x.n_nodes(),
            x.n_cascades(),
            manifest.n_nodes,
            manifest.n_cascades
        )));
    }
    let mut snapshots = Vec::with_capacity(manifest.snapshots.len());
    for (i, name) in manifest.snapshots.iter().enumerate() {
        let y = read_matrix_csv(&dir.join(name))?;
        if y.shape() != x.x.shape() {
            return Err(Error::dims(format!(
                "{name} is {}x{}, X is {}x{}",
                y.nrows(),
                y.ncols(),
                x.n_nodes(),
                x.n_cascades()
            )));
        }
        snapshots.push(CascadeSnapshot::new(y, i + 1)?);
    }
    let states = match &manifest.states {
        Some(files) => Some(
            files
                .iter()
                .map(|f| read_state(dir, f))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let sigma = match &manifest.sigma {
        Some(name) => {
            let labels = read_labels_csv(&dir.join(name))?;
            let s = manifest
                .n_states
                .or_else(|| labels.iter().copied().max())
                .unwrap_or(1);
            Some(SwitchSequence::new(labels, s)?)
        }
        None => None,
    };
    Ok((
        manifest,
        Dataset {
            x,
            snapshots,
            states,
            sigma,
        },
    ))
}
