//! Switched dynamic SEM: domain types, synthetic state sets and cascade
//! generation.
//!
//! The model for interval `t` is
//!
//! ```text
//! Y_t = A^{s} Y_t + diag(b^{s}) X + E_t,    s = sigma(t)
//! ```
//!
//! where `A^s` is hollow (no self loops), `b^s` holds the exogenous gains and
//! `E_t` is i.i.d. Gaussian noise. State labels are 1-based throughout the
//! public API.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

// RNG stream ids. Each generated quantity draws from its own ChaCha stream
// so that adding draws to one never shifts another.
const STREAM_STATES: u64 = 1;
const STREAM_X: u64 = 2;
const STREAM_SIGMA: u64 = 3;
const STREAM_NOISE_BASE: u64 = 1 << 32;

/// One switching state: hollow adjacency `a` and the diagonal of `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePair {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub state_id: usize,
}

impl StatePair {
    /// Builds a pair, rejecting non-square or non-hollow `a`.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, state_id: usize) -> Result<Self> {
        let pair = StatePair { a, b, state_id };
        pair.validate()?;
        if !pair.is_hollow() {
            return Err(Error::invalid("adjacency matrix has a nonzero diagonal"));
        }
        Ok(pair)
    }

    /// Builds a pair and zeroes the diagonal of `a`.
    pub fn hollowed(mut a: DMatrix<f64>, b: DVector<f64>, state_id: usize) -> Result<Self> {
        for i in 0..a.nrows().min(a.ncols()) {
            a[(i, i)] = 0.0;
        }
        let pair = StatePair { a, b, state_id };
        pair.validate()?;
        Ok(pair)
    }

    pub fn zeros(n: usize, state_id: usize) -> Self {
        StatePair {
            a: DMatrix::zeros(n, n),
            b: DVector::zeros(n),
            state_id,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.a.is_square() {
            return Err(Error::dims(format!(
                "adjacency is {}x{}",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        if self.b.len() != self.a.nrows() {
            return Err(Error::dims(format!(
                "gain vector has length {}, adjacency is {}x{}",
                self.b.len(),
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        if self.a.iter().chain(self.b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("state pair has non-finite entries"));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_hollow(&self) -> bool {
        (0..self.n_nodes()).all(|i| self.a[(i, i)] == 0.0)
    }

    pub fn zero_diagonal(&mut self) {
        for i in 0..self.n_nodes() {
            self.a[(i, i)] = 0.0;
        }
    }

    /// `B = diag(b)`.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.b)
    }

    pub fn with_id(mut self, state_id: usize) -> Self {
        self.state_id = state_id;
        self
    }
}

/// `Y_t`: transformed first-infection times for one interval (N x C).
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeSnapshot {
    pub y: DMatrix<f64>,
    /// 1-based interval index.
    pub t: usize,
}

impl CascadeSnapshot {
    pub fn new(y: DMatrix<f64>, t: usize) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "snapshot {t} has non-finite entries"
            )));
        }
        Ok(CascadeSnapshot { y, t })
    }
}

/// Node-by-contagion susceptibilities `X` (N x C), constant over time.
#[derive(Clone, Debug, PartialEq)]
pub struct ExogenousMatrix {
    pub x: DMatrix<f64>,
}

impl ExogenousMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("exogenous matrix has non-finite entries"));
        }
        Ok(ExogenousMatrix { x })
    }

    pub fn n_nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cascades(&self) -> usize {
        self.x.ncols()
    }
}

/// `sigma(1..T)` with 1-based state labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchSequence {
    sigma: Vec<usize>,
    n_states: usize,
}

impl SwitchSequence {
    pub fn new(sigma: Vec<usize>, n_states: usize) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::invalid("switch sequence needs at least one state"));
        }
        if let Some((t, s)) = sigma
            .iter()
            .enumerate()
            .find(|(_, &s)| s == 0 || s > n_states)
        {
            return Err(Error::invalid(format!(
                "sigma({}) = {s} is outside 1..={n_states}",
                t + 1
            )));
        }
        Ok(SwitchSequence { sigma, n_states })
    }

    pub fn labels(&self) -> &[usize] {
        &self.sigma
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// State active at 1-based interval `t`.
    pub fn at(&self, t: usize) -> usize {
        self.sigma[t - 1]
    }

    /// One-hot indicators `chi` as a T x S matrix; every row sums to one.
    pub fn indicators(&self) -> DMatrix<f64> {
        let mut chi = DMatrix::zeros(self.sigma.len(), self.n_states);
        for (t, &s) in self.sigma.iter().enumerate() {
            chi[(t, s - 1)] = 1.0;
        }
        chi
    }
}

/// How the support of each synthetic `A^s` is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructureSource {
    /// `A^s = H_s (x) ... (x) H_s` with `power` factors, one seed per state.
    Kronecker {
        seeds: Vec<Vec<Vec<u8>>>,
        power: u32,
    },
    /// Independent Bernoulli(`density`) off-diagonal edges.
    Random { density: f64 },
}

impl Default for StructureSource {
    fn default() -> Self {
        StructureSource::Kronecker {
            seeds: kronecker_seeds()
                .iter()
                .map(|m| {
                    m.row_iter()
                        .map(|r| r.iter().map(|&v| v as u8).collect())
                        .collect()
                })
                .collect(),
            power: 3,
        }
    }
}

/// Magnitude of nonzero adjacency weights before spectral scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum WeightDist {
    /// Every edge has weight one.
    #[default]
    Binary,
    /// Edge weights i.i.d. uniform on `[low, high]`.
    Uniform { low: f64, high: f64 },
}

/// One constant-state stretch `start..=end` (1-based, inclusive).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub state: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceMode {
    /// `sigma(t)` i.i.d. categorical with the configured probabilities.
    #[default]
    Iid,
    /// Fixed piecewise-constant schedule.
    Piecewise { segments: Vec<Segment> },
}

fn default_noise_std() -> f64 {
    0.1
}
fn default_spectral_scale() -> Option<f64> {
    Some(0.5)
}
fn default_x_range() -> [f64; 2] {
    [0.0, 3.0]
}
fn default_b_range() -> [f64; 2] {
    [0.0, 1.0]
}

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_nodes: usize,
    pub n_cascades: usize,
    pub n_intervals: usize,
    pub n_states: usize,
    /// Standard deviation of each entry of `E_t`.
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Activation probabilities `p_s`; uniform when absent.
    #[serde(default)]
    pub state_probabilities: Option<Vec<f64>>,
    #[serde(default)]
    pub sequence: SequenceMode,
    #[serde(default)]
    pub structure: StructureSource,
    #[serde(default)]
    pub weights: WeightDist,
    /// Each `A^s` is multiplied by `c / rho(|A^s|)` so that `I - A^s` stays
    /// well conditioned. `None` keeps the raw weights.
    #[serde(default = "default_spectral_scale")]
    pub spectral_scale: Option<f64>,
    #[serde(default = "default_x_range")]
    pub x_range: [f64; 2],
    #[serde(default = "default_b_range")]
    pub b_range: [f64; 2],
}

impl Default for GenerationConfig {
    /// N=64, C=80, T=1000, S=4 with the four Kronecker seeds cubed and
    /// noise variance 0.01.
    fn default() -> Self {
        GenerationConfig {
            n_nodes: 64,
            n_cascades: 80,
            n_intervals: 1000,
            n_states: 4,
            noise_std: default_noise_std(),
            rng_seed: 0,
            state_probabilities: None,
            sequence: SequenceMode::Iid,
            structure: StructureSource::default(),
            weights: WeightDist::Binary,
            spectral_scale: default_spectral_scale(),
            x_range: default_x_range(),
            b_range: default_b_range(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_nodes == 0 || self.n_cascades == 0 || self.n_intervals == 0 || self.n_states == 0
        {
            return bad("n_nodes, n_cascades, n_intervals and n_states must be >= 1".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            ));
        }
        if let Some(p) = &self.state_probabilities {
            if p.len() != self.n_states {
                return bad(format!(
                    "{} state probabilities for {} states",
                    p.len(),
                    self.n_states
                ));
            }
            if p.iter().any(|&v| !(v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("state probabilities must be nonnegative and sum to 1".into());
            }
        }
        if let Some(c) = self.spectral_scale {
            if !(c > 0.0 && c < 1.0) {
                return bad(format!("spectral_scale must lie in (0, 1), got {c}"));
            }
        }
        if !(self.x_range[0] <= self.x_range[1]) || !(self.b_range[0] <= self.b_range[1]) {
            return bad("x_range and b_range must be ordered [low, high]".into());
        }
        match &self.structure {
            StructureSource::Kronecker { seeds, power } => {
                if seeds.len() < self.n_states {
                    return bad(format!(
                        "{} Kronecker seeds for {} states",
                        seeds.len(),
                        self.n_states
                    ));
                }
                for seed in seeds {
                    let m = seed.len();
                    if m == 0 || seed.iter().any(|r| r.len() != m) {
                        return bad("Kronecker seeds must be square and nonempty".into());
                    }
                    let n = m.checked_pow(*power).unwrap_or(usize::MAX);
                    if n != self.n_nodes {
                        return bad(format!(
                            "seed of size {m} raised to power {power} gives {n} nodes, config says {}",
                            self.n_nodes
                        ));
                    }
                }
            }
            StructureSource::Random { density } => {
                if !(0.0..=1.0).contains(density) {
                    return bad(format!("edge density must be in [0, 1], got {density}"));
                }
            }
        }
        if let SequenceMode::Piecewise { segments } = &self.sequence {
            piecewise_sequence(segments, self.n_intervals, self.n_states)?;
        }
        if let WeightDist::Uniform { low, high } = self.weights {
            if !(low <= high) {
                return bad("uniform weight range must be ordered".into());
            }
        }
        Ok(())
    }

    fn probabilities(&self) -> Vec<f64> {
        self.state_probabilities
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.n_states as f64; self.n_states])
    }
}

/// The four 4x4 seed matrices used for the synthetic benchmark.
pub fn kronecker_seeds() -> [DMatrix<f64>; 4] {
    [
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1., 1., 0., 0., //
                1., 1., 0., 0., //
                0., 0., 0., 1., //
                0., 0., 1., 0.,
            ],
        ),
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1., 0., 0., 0., //
                0., 1., 1., 0., //
                0., 1., 1., 1., //
                0., 0., 1., 0.,
            ],
        ),
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1., 0., 0., 0., //
                0., 1., 0., 0., //
                0., 0., 1., 1., //
                0., 0., 1., 1.,
            ],
        ),
        DMatrix::from_row_slice(
            4,
            4,
            &[
                1., 0., 0., 0., //
                0., 0., 1., 0., //
                0., 1., 1., 1., //
                0., 0., 0., 1.,
            ],
        ),
    ]
}

/// Four-state piecewise-constant schedule over t = 1..=1000.
pub fn slow_switching_segments() -> Vec<Segment> {
    let seg = |start, end, state| Segment { start, end, state };
    vec![
        seg(1, 24, 1),
        seg(25, 49, 2),
        seg(50, 74, 3),
        seg(75, 199, 4),
        seg(200, 299, 1),
        seg(300, 699, 2),
        seg(700, 899, 3),
        seg(900, 1000, 4),
    ]
}

/// Repeated Kronecker product of `seed` with itself, `power` factors, before
/// the diagonal is cleared.
pub fn kronecker_power(seed: &DMatrix<f64>, power: u32) -> Result<DMatrix<f64>> {
    if power == 0 {
        return Err(Error::invalid("Kronecker power must be >= 1"));
    }
    if !seed.is_square() || seed.nrows() == 0 {
        return Err(Error::invalid("Kronecker seed must be square and nonempty"));
    }
    if seed.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("Kronecker seed must be binary"));
    }
    let mut out = seed.clone();
    for _ in 1..power {
        out = out.kronecker(seed);
    }
    Ok(out)
}

/// Kronecker graph: `seed^{(x) power}` with the diagonal zeroed afterwards.
pub fn kronecker_graph(seed: &DMatrix<f64>, power: u32) -> Result<DMatrix<f64>> {
    let mut g = kronecker_power(seed, power)?;
    for i in 0..g.nrows() {
        g[(i, i)] = 0.0;
    }
    Ok(g)
}

fn seed_matrix(rows: &[Vec<u8>]) -> DMatrix<f64> {
    let m = rows.len();
    DMatrix::from_fn(m, m, |i, j| rows[i][j] as f64)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_sample(rng: &mut impl Rng, low: f64, high: f64) -> f64 {
    if low == high {
        low
    } else {
        Uniform::new_inclusive(low, high)
            .expect("ordered finite range")
            .sample(rng)
    }
}

/// Multiplies `a` by `c / rho(|a|)`; leaves `a` alone when `|a|` is
/// nilpotent.
pub fn scale_to_spectral_radius(a: &mut DMatrix<f64>, c: f64) {
    let rho = linalg::abs_spectral_radius(a);
    if rho > 0.0 {
        *a *= c / rho;
    }
}

/// Draws the S synthetic state pairs of `config`, deterministically in its
/// seed.
pub fn random_state_set(config: &GenerationConfig) -> Result<Vec<StatePair>> {
    config.validate()?;
    let mut rng = stream_rng(config.rng_seed, STREAM_STATES);
    let n = config.n_nodes;
    let mut states = Vec::with_capacity(config.n_states);
    for s in 0..config.n_states {
        let support = match &config.structure {
            StructureSource::Kronecker { seeds, power } => {
                kronecker_graph(&seed_matrix(&seeds[s]), *power)?
            }
            StructureSource::Random { density } => DMatrix::from_fn(n, n, |i, j| {
                if i != j && rng.random::<f64>() < *density {
                    1.0
                } else {
                    0.0
                }
            }),
        };
        let mut a = support;
        if let WeightDist::Uniform { low, high } = config.weights {
            for v in a.iter_mut() {
                if *v != 0.0 {
                    *v = uniform_sample(&mut rng, low, high);
                }
            }
        }
        if let Some(c) = config.spectral_scale {
            scale_to_spectral_radius(&mut a, c);
        }
        let b = DVector::from_fn(n, |_, _| {
            uniform_sample(&mut rng, config.b_range[0], config.b_range[1])
        });
        states.push(StatePair::hollowed(a, b, s + 1)?);
    }
    Ok(states)
}

/// `X` with entries i.i.d. uniform on `config.x_range`.
pub fn random_exogenous(config: &GenerationConfig) -> Result<ExogenousMatrix> {
    config.validate()?;
    let mut rng = stream_rng(config.rng_seed, STREAM_X);
    let [low, high] = config.x_range;
    ExogenousMatrix::new(DMatrix::from_fn(
        config.n_nodes,
        config.n_cascades,
        |_, _| uniform_sample(&mut rng, low, high),
    ))
}

/// Expands a piecewise schedule to a full sequence, requiring it to cover
/// `1..=n_intervals` exactly once.
pub fn piecewise_sequence(
    segments: &[Segment],
    n_intervals: usize,
    n_states: usize,
) -> Result<SwitchSequence> {
    let mut sigma = vec![0usize; n_intervals];
    for seg in segments {
        if seg.start == 0 || seg.start > seg.end || seg.end > n_intervals {
            return Err(Error::Config(format!(
                "segment {}..={} outside 1..={n_intervals}",
                seg.start, seg.end
            )));
        }
        for slot in &mut sigma[seg.start - 1..seg.end] {
            if *slot != 0 {
                return Err(Error::Config(format!(
                    "segments overlap within {}..={}",
                    seg.start, seg.end
                )));
            }
            *slot = seg.state;
        }
    }
    if let Some(t) = sigma.iter().position(|&s| s == 0) {
        return Err(Error::Config(format!(
            "interval {} not covered by any segment",
            t + 1
        )));
    }
    SwitchSequence::new(sigma, n_states).map_err(|e| Error::Config(e.to_string()))
}

/// Draws `sigma(1..T)` per the configured sequence mode.
pub fn sample_switch_sequence(config: &GenerationConfig) -> Result<SwitchSequence> {
    config.validate()?;
    match &config.sequence {
        SequenceMode::Piecewise { segments } => {
            piecewise_sequence(segments, config.n_intervals, config.n_states)
        }
        SequenceMode::Iid => {
            let p = config.probabilities();
            let mut rng = stream_rng(config.rng_seed, STREAM_SIGMA);
            let sigma = (0..config.n_intervals)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for (s, &ps) in p.iter().enumerate() {
                        acc += ps;
                        if u < acc {
                            return s + 1;
                        }
                    }
                    // u landed in the rounding slack above the last cumulative sum
                    p.iter().rposition(|&ps| ps > 0.0).unwrap_or(0) + 1
                })
                .collect();
            SwitchSequence::new(sigma, config.n_states)
        }
    }
}

/// `Y_t = (I - A^{sigma(t)})^{-1} (B^{sigma(t)} X + E_t)` for every `t`.
///
/// `E_t` is drawn from a per-interval stream of `rng_seed`, so results do not
/// depend on how the intervals are scheduled across threads.
pub fn generate_cascades(
    states: &[StatePair],
    x: &ExogenousMatrix,
    sigma: &SwitchSequence,
    noise_std: f64,
    rng_seed: u64,
) -> Result<Vec<CascadeSnapshot>> {
    if states.len() < sigma.n_states() {
        return Err(Error::invalid(format!(
            "sequence references {} states, {} given",
            sigma.n_states(),
            states.len()
        )));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::invalid("noise_std must be >= 0"));
    }
    let n = x.n_nodes();
    let c = x.n_cascades();
    let mut propagators = Vec::with_capacity(states.len());
    for (idx, pair) in states.iter().enumerate() {
        if pair.n_nodes() != n {
            return Err(Error::dims(format!(
                "state {} has {} nodes, X has {n} rows",
                idx + 1,
                pair.n_nodes()
            )));
        }
        let lhs = DMatrix::identity(n, n) - &pair.a;
        let inv = linalg::inverse_or_condition(&lhs).map_err(|condition| Error::SingularModel {
            state: idx + 1,
            condition,
        })?;
        let drive = pair.b_matrix() * &x.x;
        propagators.push((inv, drive));
    }
    (1..=sigma.len())
        .into_par_iter()
        .map(|t| {
            let (inv, drive) = &propagators[sigma.at(t) - 1];
            let mut rhs = drive.clone();
            if noise_std > 0.0 {
                let mut rng = stream_rng(rng_seed, STREAM_NOISE_BASE + t as u64);
                for col in 0..c {
                    for row in 0..n {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        rhs[(row, col)] += noise_std * z;
                    }
                }
            }
            CascadeSnapshot::new(inv * rhs, t)
        })
        .collect()
}

/// `||Y - A Y - diag(b) X||_F`.
pub fn sem_residual(y: &DMatrix<f64>, x: &DMatrix<f64>, pair: &StatePair) -> Result<f64> {
    let n = pair.n_nodes();
    if y.nrows() != n || x.nrows() != n || y.ncols() != x.ncols() {
        return Err(Error::dims(format!(
            "Y is {}x{}, X is {}x{}, state has {n} nodes",
            y.nrows(),
            y.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(residual_matrix(y, x, pair).norm())
}

pub(crate) fn residual_matrix(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    pair: &StatePair,
) -> DMatrix<f64> {
    let mut bx = x.clone();
    for (i, mut row) in bx.row_iter_mut().enumerate() {
        row *= pair.b[i];
    }
    y - &pair.a * y - bx
}

/// A complete synthetic or ingested dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: ExogenousMatrix,
    pub snapshots: Vec<CascadeSnapshot>,
    /// Ground-truth states, when known.
    pub states: Option<Vec<StatePair>>,
    /// Ground-truth switching sequence, when known.
    pub sigma: Option<SwitchSequence>,
}

/// Runs the full synthetic pipeline of `config`.
pub fn generate_dataset(config: &GenerationConfig) -> Result<Dataset> {
    config.validate()?;
    let states = random_state_set(config)?;
    let x = random_exogenous(config)?;
    let sigma = sample_switch_sequence(config)?;
    let snapshots = generate_cascades(&states, &x, &sigma, config.noise_std, config.rng_seed)?;
    Ok(Dataset {
        x,
        snapshots,
        states: Some(states),
        sigma: Some(sigma),
    })
}
