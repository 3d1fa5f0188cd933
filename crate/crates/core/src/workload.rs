//! Ground-truth active-node counts driven by a birth-death Markov chain.
//!
//! Each frame the count moves according to the `jumps`-step power of a
//! lazy reflecting random walk on `0..num_states`: stay with probability
//! `q`, otherwise step up or down with equal probability `(1 - q) / 2`.
//! The boundary states reflect with probability `1 - q`.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

/// Maximum active population in the homogeneous setting.
pub const HOMO_MAX_NODES: u32 = 64;
/// Total population shared across node types in the heterogeneous setting.
pub const HETERO_TOTAL_NODES: u32 = 192;

pub fn hetero_max_per_type(types: usize) -> u32 {
    HETERO_TOTAL_NODES / types.max(1) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub num_states: usize,
    pub stay_prob: f64,
    pub jumps: u32,
}

impl Default for TransitionSpec {
    fn default() -> Self {
        Self {
            num_states: HOMO_MAX_NODES as usize + 1,
            stay_prob: 0.2,
            jumps: 5,
        }
    }
}

impl TransitionSpec {
    pub fn new(num_states: usize, stay_prob: f64, jumps: u32) -> Result<Self> {
        let spec = Self {
            num_states,
            stay_prob,
            jumps,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Per-type chain for `types` node types sharing the heterogeneous population.
    pub fn hetero(types: usize, stay_prob: f64, jumps: u32) -> Result<Self> {
        Self::new(hetero_max_per_type(types) as usize + 1, stay_prob, jumps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states < 2 {
            return Err(Error::spec(format!(
                "num_states must be at least 2, got {}",
                self.num_states
            )));
        }
        if !(0.0..=1.0).contains(&self.stay_prob) {
            return Err(Error::spec(format!(
                "stay_prob must lie in [0, 1], got {}",
                self.stay_prob
            )));
        }
        if self.jumps == 0 {
            return Err(Error::spec("jumps must be positive"));
        }
        Ok(())
    }

    pub fn up_prob(&self) -> f64 {
        (1.0 - self.stay_prob) / 2.0
    }

    pub fn down_prob(&self) -> f64 {
        1.0 - self.up_prob() - self.stay_prob
    }

    pub fn max_state(&self) -> u32 {
        (self.num_states - 1) as u32
    }
}

/// One-step transition matrix.
pub fn build_tpm(spec: &TransitionSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let n = spec.num_states;
    let q = spec.stay_prob;
    let mut tpm = Array2::zeros((n, n));
    for i in 0..n {
        tpm[[i, i]] = q;
        if i == 0 {
            tpm[[0, 1]] = 1.0 - q;
        } else if i == n - 1 {
            tpm[[n - 1, n - 2]] = 1.0 - q;
        } else {
            tpm[[i, i - 1]] = spec.down_prob();
            tpm[[i, i + 1]] = spec.up_prob();
        }
    }
    Ok(tpm)
}

/// `tpm` raised to the `k`-th power by binary exponentiation.
pub fn matrix_power(tpm: &Array2<f64>, k: u32) -> Result<Array2<f64>> {
    let (rows, cols) = tpm.dim();
    if rows != cols {
        return Err(Error::arg(format!("matrix is {rows}x{cols}, not square")));
    }
    let mut result = Array2::eye(rows);
    let mut base = tpm.clone();
    let mut exp = k;
    while exp > 0 {
        if exp & 1 == 1 {
            result = result.dot(&base);
        }
        exp >>= 1;
        if exp > 0 {
            base = base.dot(&base);
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCountSeries {
    pub values: Vec<u32>,
}

impl NodeCountSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn constant(value: u32, num_frames: usize) -> Self {
        Self {
            values: vec![value; num_frames],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeteroSeries {
    pub per_type: Vec<NodeCountSeries>,
}

impl HeteroSeries {
    pub fn new(per_type: Vec<NodeCountSeries>) -> Result<Self> {
        let len = per_type.first().map_or(0, NodeCountSeries::len);
        if per_type.iter().any(|s| s.len() != len) {
            return Err(Error::spec("per-type series must have equal length"));
        }
        Ok(Self { per_type })
    }

    pub fn types(&self) -> usize {
        self.per_type.len()
    }

    pub fn len(&self) -> usize {
        self.per_type.first().map_or(0, NodeCountSeries::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Counts of every type in frame `t`.
    pub fn frame(&self, t: usize) -> Vec<u32> {
        self.per_type.iter().map(|s| s.values[t]).collect()
    }
}

impl From<NodeCountSeries> for HeteroSeries {
    fn from(series: NodeCountSeries) -> Self {
        Self {
            per_type: vec![series],
        }
    }
}

/// Row samplers for the `jumps`-step matrix, built once per series.
struct StepSampler {
    rows: Vec<WeightedIndex<f64>>,
}

impl StepSampler {
    fn new(spec: &TransitionSpec) -> Result<Self> {
        let step = matrix_power(&build_tpm(spec)?, spec.jumps)?;
        let rows = step
            .rows()
            .into_iter()
            .map(|row| {
                // Round-off can leave tiny negative residue after many products.
                let weights: Vec<f64> = row.iter().map(|&w| w.max(0.0)).collect();
                WeightedIndex::new(weights).map_err(|e| Error::spec(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }
}

pub fn sample_series(
    spec: &TransitionSpec,
    initial_state: u32,
    num_frames: usize,
    seed: u64,
) -> Result<NodeCountSeries> {
    spec.validate()?;
    if initial_state as usize >= spec.num_states {
        return Err(Error::spec(format!(
            "initial state {initial_state} outside 0..{}",
            spec.num_states
        )));
    }
    if num_frames == 0 {
        return Err(Error::spec("num_frames must be positive"));
    }
    let sampler = StepSampler::new(spec)?;
    let mut rng = rng_from(seed);
    let mut values = Vec::with_capacity(num_frames);
    let mut state = initial_state as usize;
    values.push(initial_state);
    for _ in 1..num_frames {
        state = sampler.rows[state].sample(&mut rng);
        values.push(state as u32);
    }
    Ok(NodeCountSeries { values })
}

/// Draws the initial state uniformly from `0..num_states`, then samples.
pub fn sample_series_uniform_start(
    spec: &TransitionSpec,
    num_frames: usize,
    seed: u64,
) -> Result<NodeCountSeries> {
    spec.validate()?;
    let initial = rng_from(derive_seed(seed, 0x1A17)).random_range(0..spec.num_states) as u32;
    sample_series(spec, initial, num_frames, seed)
}

pub fn sample_hetero(
    spec: &TransitionSpec,
    types: usize,
    seeds: &[u64],
    initial_states: &[u32],
    num_frames: usize,
) -> Result<HeteroSeries> {
    if types < 2 {
        return Err(Error::spec(format!("need at least 2 node types, got {types}")));
    }
    if seeds.len() != types || initial_states.len() != types {
        return Err(Error::spec(format!(
            "expected {types} seeds and initial states, got {} and {}",
            seeds.len(),
            initial_states.len()
        )));
    }
    let per_type = seeds
        .iter()
        .zip(initial_states)
        .map(|(&seed, &init)| sample_series(spec, init, num_frames, seed))
        .collect::<Result<Vec<_>>>()?;
    HeteroSeries::new(per_type)
}

/// Independent per-type chains with uniformly drawn initial states and seeds
/// derived from `seed`.
pub fn sample_hetero_uniform_start(
    spec: &TransitionSpec,
    types: usize,
    num_frames: usize,
    seed: u64,
) -> Result<HeteroSeries> {
    let seeds: Vec<u64> = (0..types as u64).map(|b| derive_seed(seed, b)).collect();
    let mut init_rng = rng_from(derive_seed(seed, 0x1A17));
    let inits: Vec<u32> = (0..types)
        .map(|_| init_rng.random_range(0..spec.num_states) as u32)
        .collect();
    sample_hetero(spec, types, &seeds, &inits, num_frames)
}

/// Writes `frame,type_0,...,type_{T-1}`.
pub fn write_series_csv<W: Write>(series: &HeteroSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["frame".to_string()];
    header.extend((0..series.types()).map(|b| format!("type_{b}")));
    w.write_record(&header)?;
    for t in 0..series.len() {
        let mut row = vec![t.to_string()];
        row.extend(series.frame(t).iter().map(u32::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv<R: Read>(reader: R) -> Result<HeteroSeries> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.get(0) != Some("frame") || header.len() < 2 {
        return Err(Error::parse("header", "expected `frame,type_0,...`"));
    }
    let types = header.len() - 1;
    let mut per_type = vec![Vec::new(); types];
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let position = format!("row {}", i + 1);
        let frame: usize = record[0]
            .parse()
            .map_err(|e| Error::parse(position.clone(), e))?;
        if frame != i {
            return Err(Error::parse(position, format!("expected frame {i}, got {frame}")));
        }
        for (b, values) in per_type.iter_mut().enumerate() {
            let v: u32 = record
                .get(b + 1)
                .ok_or_else(|| Error::parse(position.clone(), "missing column"))?
                .parse()
                .map_err(|e| Error::parse(position.clone(), e))?;
            values.push(v);
        }
    }
    HeteroSeries::new(
        per_type
            .into_iter()
            .map(|values| NodeCountSeries { values })
            .collect(),
    )
}

/// Empirical transition counts of a sampled series, for checking a sampler
/// against the `jumps`-step matrix.
#[derive(Debug, Clone)]
pub struct TransitionStats {
    counts: Array2<f64>,
}

impl TransitionStats {
    pub fn from_series(series: &NodeCountSeries, num_states: usize) -> Self {
        let mut counts = Array2::zeros((num_states, num_states));
        for w in series.values.windows(2) {
            counts[[w[0] as usize, w[1] as usize]] += 1.0;
        }
        Self { counts }
    }

    pub fn visits(&self, state: usize) -> f64 {
        self.counts.row(state).sum()
    }

    /// Largest row-wise total-variation distance over states visited at least `min_visits` times.
    pub fn max_row_tv(&self, step: &Array2<f64>, min_visits: usize) -> f64 {
        let n = self.counts.nrows();
        (0..n)
            .filter(|&i| self.visits(i) >= min_visits as f64)
            .map(|i| {
                let total = self.visits(i);
                (0..n)
                    .map(|j| (self.counts[[i, j]] / total - step[[i, j]]).abs())
                    .sum::<f64>()
                    / 2.0
            })
            .fold(0.0, f64::max)
    }

    /// Pools displacements from states at least `reach` away from either
    /// boundary, where every row of the step matrix is the same shifted
    /// kernel, and compares with that kernel.
    pub fn interior_displacement_tv(&self, step: &Array2<f64>, reach: usize) -> f64 {
        let n = self.counts.nrows();
        if n < 2 * reach + 1 {
            return f64::NAN;
        }
        let width = 2 * reach + 1;
        let mut pooled = vec![0.0; width];
        for i in reach..n - reach {
            for (d, slot) in pooled.iter_mut().enumerate() {
                *slot += self.counts[[i, i + d - reach]];
            }
        }
        let total: f64 = pooled.iter().sum();
        let centre = n / 2;
        pooled
            .iter()
            .enumerate()
            .map(|(d, &c)| (c / total - step[[centre, centre + d - reach]]).abs())
            .sum::<f64>()
            / 2.0
    }

    /// Total-variation distance between the empirical next-state histogram and
    /// the histogram predicted by the step matrix from the visited states.
    pub fn pooled_next_state_tv(&self, step: &Array2<f64>) -> f64 {
        let n = self.counts.nrows();
        let total = self.counts.sum();
        (0..n)
            .map(|j| {
                let observed = self.counts.column(j).sum() / total;
                let expected = (0..n).map(|i| self.visits(i) * step[[i, j]]).sum::<f64>() / total;
                (observed - expected).abs()
            })
            .sum::<f64>()
            / 2.0
    }
}
