//! Slot-level simulation of the lottery-frame (LoF), balls-and-bins (BB),
//! SRC_s and 3-SS-BB trials.
//!
//! Every trial reports the public slot outcomes together with the privileged
//! number of transmitters behind each slot, which only the simulator knows.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calibration constant of the LoF estimator.
pub const LOF_CONSTANT: f64 = 1.2897;
/// Load factor used when picking BB participation probabilities.
pub const BB_LOAD: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotOutcome {
    Empty,
    /// Exactly one transmitter, homogeneous alphabet.
    Single,
    Alpha,
    Beta,
    Collision,
}

impl SlotOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotOutcome::Empty => "empty",
            SlotOutcome::Single => "single",
            SlotOutcome::Alpha => "alpha",
            SlotOutcome::Beta => "beta",
            SlotOutcome::Collision => "collision",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symbol {
    Alpha,
    Beta,
}

/// Outcome of a slot given every symbol transmitted in it.
pub fn resolve_slot(transmitted: &[Symbol]) -> SlotOutcome {
    match transmitted {
        [] => SlotOutcome::Empty,
        [Symbol::Alpha] => SlotOutcome::Alpha,
        [Symbol::Beta] => SlotOutcome::Beta,
        _ => SlotOutcome::Collision,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LofResult {
    /// 1-based index of the first slot nobody transmitted in, saturating at `length`.
    pub first_empty_slot: u32,
    pub length: u32,
}

pub fn run_lof<R: Rng + ?Sized>(n_active: u32, l_lof: u32, rng: &mut R) -> LofResult {
    let length = l_lof.max(1);
    let mut occupied = vec![false; length as usize];
    for _ in 0..n_active {
        // Slot i < length with probability 2^-i, the last slot takes the remainder.
        let mut slot = length;
        for i in 1..length {
            if rng.random::<bool>() {
                slot = i;
                break;
            }
        }
        occupied[slot as usize - 1] = true;
    }
    let first_empty_slot = occupied
        .iter()
        .position(|&o| !o)
        .map_or(length, |i| i as u32 + 1);
    LofResult {
        first_empty_slot,
        length,
    }
}

pub fn lof_point_estimate(first_empty_slot: u32) -> f64 {
    LOF_CONSTANT * 2f64.powi(first_empty_slot as i32)
}

/// Averaged LoF estimate over several trials, in the exponent.
pub fn srcs_rough_estimate(first_empty_slots: &[u32]) -> Result<f64> {
    if first_empty_slots.is_empty() {
        return Err(Error::arg("at least one LoF trial is required"));
    }
    let exponent = first_empty_slots
        .iter()
        .map(|&j| j as f64 - 1.0)
        .sum::<f64>()
        / first_empty_slots.len() as f64;
    Ok(LOF_CONSTANT * exponent.exp2())
}

pub fn participation_prob(l: usize, rough: f64) -> f64 {
    if rough <= 0.0 {
        return 1.0;
    }
    (BB_LOAD * l as f64 / rough).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbTrialResult {
    pub outcomes: Vec<SlotOutcome>,
    /// Privileged: number of transmitters in each slot.
    pub counts: Vec<u32>,
    pub participation_prob: f64,
    pub length: usize,
}

impl BbTrialResult {
    pub fn empty_slots(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|&&o| o == SlotOutcome::Empty)
            .count()
    }
}

fn homo_outcome(count: u32) -> SlotOutcome {
    match count {
        0 => SlotOutcome::Empty,
        1 => SlotOutcome::Single,
        _ => SlotOutcome::Collision,
    }
}

pub fn run_bb<R: Rng + ?Sized>(n_active: u32, l: usize, rough: f64, rng: &mut R) -> BbTrialResult {
    let length = l.max(1);
    let p = participation_prob(length, rough);
    let mut counts = vec![0u32; length];
    for _ in 0..n_active {
        if p >= 1.0 || rng.random::<f64>() < p {
            counts[rng.random_range(0..length)] += 1;
        }
    }
    BbTrialResult {
        outcomes: counts.iter().map(|&c| homo_outcome(c)).collect(),
        counts,
        participation_prob: p,
        length,
    }
}

/// Inverts the expected empty-slot count of a BB trial.
///
/// With no empty slot the formula is undefined and `fallback` is returned.
/// Both branches are clamped to `[0, n_max]`.
pub fn bb_estimate(z: usize, l: usize, p: f64, fallback: f64, n_max: f64) -> Result<f64> {
    if l == 0 || z > l {
        return Err(Error::arg(format!("empty-slot count {z} invalid for length {l}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::arg(format!("participation probability {p} outside (0, 1]")));
    }
    let raw = if z == 0 {
        fallback
    } else {
        let l = l as f64;
        (z as f64 / l).ln() / (1.0 - p / l).ln()
    };
    Ok(raw.clamp(0.0, n_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrcsConfig {
    pub num_lof: u32,
    pub l_lof: u32,
    pub l_bb: usize,
}

impl SrcsConfig {
    pub fn lof_slots(&self) -> usize {
        (self.num_lof * self.l_lof) as usize
    }

    pub fn slots(&self) -> usize {
        self.lof_slots() + self.l_bb
    }
}

/// Rough estimate from `num_lof` LoF trials.
pub fn lof_rough_estimate<R: Rng + ?Sized>(
    n_active: u32,
    num_lof: u32,
    l_lof: u32,
    rng: &mut R,
) -> Result<f64> {
    let js: Vec<u32> = (0..num_lof)
        .map(|_| run_lof(n_active, l_lof, rng).first_empty_slot)
        .collect();
    srcs_rough_estimate(&js)
}

/// One SRC_s frame. Returns the estimate and the slots billed; LoF trials are
/// billed their full length even when they end early.
pub fn srcs_frame<R: Rng + ?Sized>(
    n_active: u32,
    config: &SrcsConfig,
    n_max: f64,
    rng: &mut R,
) -> Result<(f64, usize)> {
    if config.num_lof == 0 || config.l_lof == 0 || config.l_bb == 0 {
        return Err(Error::arg("SRC_s lengths must all be positive"));
    }
    let rough = lof_rough_estimate(n_active, config.num_lof, config.l_lof, rng)?;
    let trial = run_bb(n_active, config.l_bb, rough, rng);
    let estimate = bb_estimate(
        trial.empty_slots(),
        trial.length,
        trial.participation_prob,
        rough,
        n_max,
    )?;
    Ok((estimate, config.slots()))
}

/// BB length for a relative error tolerance `epsilon`, rounded to nearest.
pub fn srcs_bb_length(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::arg(format!("epsilon must be positive, got {epsilon}")));
    }
    let l = 65.0 / (1.0 - 0.04f64.powf(epsilon)).powi(2);
    Ok((l.round() as usize).max(1))
}

/// Symbols sent by a node of type `node_type` (1-based) in its chosen block.
/// Type 1 sends alpha in every slot; type b >= 2 sends beta in slot b-1 only.
pub fn symbol_pattern(node_type: usize, types: usize) -> Result<Vec<Option<Symbol>>> {
    if types < 2 {
        return Err(Error::arg(format!("need at least 2 types, got {types}")));
    }
    if node_type == 0 || node_type > types {
        return Err(Error::arg(format!("type {node_type} outside 1..={types}")));
    }
    let mut pattern = vec![None; types - 1];
    if node_type == 1 {
        pattern.fill(Some(Symbol::Alpha));
    } else {
        pattern[node_type - 2] = Some(Symbol::Beta);
    }
    Ok(pattern)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTrialResult {
    pub types: usize,
    pub blocks: usize,
    /// Block-major, `types - 1` slots per block.
    pub outcomes: Vec<SlotOutcome>,
    /// Privileged: block-major, participants of each type per block.
    pub type_counts: Vec<u32>,
    pub participation_probs: Vec<f64>,
}

impl BlockTrialResult {
    pub fn slots_per_block(&self) -> usize {
        self.types - 1
    }

    pub fn block_outcomes(&self, block: usize) -> &[SlotOutcome] {
        let w = self.slots_per_block();
        &self.outcomes[block * w..(block + 1) * w]
    }

    pub fn block_counts(&self, block: usize) -> &[u32] {
        &self.type_counts[block * self.types..(block + 1) * self.types]
    }
}

pub fn run_3ssbb<R: Rng + ?Sized>(
    n_active: &[u32],
    l: usize,
    rough: &[f64],
    rng: &mut R,
) -> Result<BlockTrialResult> {
    let types = n_active.len();
    if types < 2 {
        return Err(Error::arg(format!("3-SS-BB needs at least 2 types, got {types}")));
    }
    if rough.len() != types {
        return Err(Error::arg("one rough estimate per type is required"));
    }
    if l == 0 {
        return Err(Error::arg("trial needs at least one block"));
    }
    let width = types - 1;
    let patterns = (1..=types)
        .map(|b| symbol_pattern(b, types))
        .collect::<Result<Vec<_>>>()?;
    let participation_probs: Vec<f64> = rough.iter().map(|&r| participation_prob(l, r)).collect();

    let mut type_counts = vec![0u32; l * types];
    let mut slot_counts = vec![0u32; l * width];
    let mut slot_symbol = vec![Symbol::Alpha; l * width];
    for (b, (&n, &p)) in n_active.iter().zip(&participation_probs).enumerate() {
        for _ in 0..n {
            if p < 1.0 && rng.random::<f64>() >= p {
                continue;
            }
            let block = rng.random_range(0..l);
            type_counts[block * types + b] += 1;
            for (s, sym) in patterns[b].iter().enumerate() {
                if let Some(sym) = sym {
                    slot_counts[block * width + s] += 1;
                    slot_symbol[block * width + s] = *sym;
                }
            }
        }
    }
    let outcomes = slot_counts
        .iter()
        .zip(&slot_symbol)
        .map(|(&c, &sym)| match c {
            0 => resolve_slot(&[]),
            1 => resolve_slot(&[sym]),
            _ => SlotOutcome::Collision,
        })
        .collect();
    Ok(BlockTrialResult {
        types,
        blocks: l,
        outcomes,
        type_counts,
        participation_probs,
    })
}

/// One line of a JSONL trial trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialTrace {
    Lof(LofResult),
    Bb(BbTrialResult),
    Block(BlockTrialResult),
}

pub fn write_traces_jsonl<W: Write>(traces: &[TrialTrace], mut writer: W) -> Result<()> {
    for trace in traces {
        let line = serde_json::to_string(trace).map_err(|e| Error::from_json("trace", e))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

pub fn read_traces_jsonl<R: BufRead>(reader: R) -> Result<Vec<TrialTrace>> {
    let mut traces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trace = serde_json::from_str(&line)
            .map_err(|e| Error::from_json(format!("trace line {}", i + 1), e))?;
        traces.push(trace);
    }
    Ok(traces)
}
