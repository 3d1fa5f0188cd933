//! Homogeneous vs heterogeneous plumbing shared by data generation and the
//! online estimators: which trial runs each frame and how it is encoded.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    encode_3ssbb_student, encode_3ssbb_teacher, encode_bb_student, encode_bb_teacher, FeatureVector,
    Layout,
};
use crate::neural::Scaling;
use crate::protocols::{lof_rough_estimate, run_3ssbb, run_bb, SlotOutcome};
use crate::workload::{hetero_max_per_type, HOMO_MAX_NODES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setting {
    Homogeneous { n_max: u32 },
    Heterogeneous { types: usize, n_max: u32 },
}

impl Setting {
    pub fn homogeneous() -> Self {
        Setting::Homogeneous {
            n_max: HOMO_MAX_NODES,
        }
    }

    /// `types` node types with a per-type bound of `192 / types`.
    pub fn heterogeneous(types: usize) -> Result<Self> {
        if types < 2 {
            return Err(Error::spec(format!("heterogeneous setting needs at least 2 types, got {types}")));
        }
        Ok(Setting::Heterogeneous {
            types,
            n_max: hetero_max_per_type(types),
        })
    }

    pub fn types(&self) -> usize {
        match *self {
            Setting::Homogeneous { .. } => 1,
            Setting::Heterogeneous { types, .. } => types,
        }
    }

    pub fn n_max(&self) -> f64 {
        match *self {
            Setting::Homogeneous { n_max } | Setting::Heterogeneous { n_max, .. } => n_max as f64,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self, Setting::Homogeneous { .. })
    }

    pub fn student_layout(&self) -> Layout {
        if self.is_homogeneous() {
            Layout::HomoStudent
        } else {
            Layout::HetStudent
        }
    }

    pub fn teacher_layout(&self) -> Layout {
        if self.is_homogeneous() {
            Layout::HomoTeacher
        } else {
            Layout::HetTeacher
        }
    }

    pub fn student_len(&self, l: usize) -> usize {
        self.student_layout().len(l, self.types())
    }

    pub fn teacher_len(&self, l: usize) -> usize {
        self.teacher_layout().len(l, self.types())
    }

    pub fn scaling(&self) -> Scaling {
        Scaling {
            n_max: self.n_max(),
            types: self.types(),
        }
    }

    /// Slots consumed by one trial of length `l` (slots, or blocks of `types - 1` slots).
    pub fn trial_slots(&self, l: usize) -> usize {
        match *self {
            Setting::Homogeneous { .. } => l,
            Setting::Heterogeneous { types, .. } => (types - 1) * l,
        }
    }

    pub fn scale(&self, counts: &[u32]) -> Vec<f64> {
        counts.iter().map(|&c| c as f64 / self.n_max()).collect()
    }

    pub(crate) fn check_types(&self, types: usize) -> Result<()> {
        if types != self.types() {
            return Err(Error::LayoutMismatch {
                expected: format!("{} node type(s)", self.types()),
                found: format!("{types} node type(s)"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LofConfig {
    pub num_lof: u32,
    pub l_lof: u32,
}

impl Default for LofConfig {
    fn default() -> Self {
        Self { num_lof: 3, l_lof: 8 }
    }
}

impl LofConfig {
    pub fn slots(&self) -> usize {
        (self.num_lof * self.l_lof) as usize
    }
}

/// Public and privileged results of one frame's trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub outcomes: Vec<SlotOutcome>,
    /// Per-slot transmitter counts (homogeneous) or per-block per-type participants.
    pub counts: Vec<u32>,
    pub slots: usize,
}

impl Setting {
    pub fn observe<R: Rng + ?Sized>(
        &self,
        truth: &[u32],
        l: usize,
        rough: &[f64],
        rng: &mut R,
    ) -> Result<Observation> {
        self.check_types(truth.len())?;
        if self.is_homogeneous() {
            let trial = run_bb(truth[0], l, rough[0], rng);
            Ok(Observation {
                slots: trial.length,
                outcomes: trial.outcomes,
                counts: trial.counts,
            })
        } else {
            let trial = run_3ssbb(truth, l, rough, rng)?;
            Ok(Observation {
                slots: self.trial_slots(l),
                outcomes: trial.outcomes,
                counts: trial.type_counts,
            })
        }
    }

    pub fn student_features(&self, obs: &Observation, prev_estimates: &[f64]) -> Result<FeatureVector> {
        self.check_types(prev_estimates.len())?;
        if self.is_homogeneous() {
            encode_bb_student(&obs.outcomes, prev_estimates[0], self.n_max())
        } else {
            encode_3ssbb_student(&obs.outcomes, prev_estimates, self.n_max())
        }
    }

    pub fn teacher_features(&self, obs: &Observation, prev_truths: &[f64]) -> Result<FeatureVector> {
        self.check_types(prev_truths.len())?;
        if self.is_homogeneous() {
            encode_bb_teacher(&obs.counts, prev_truths[0], self.n_max())
        } else {
            encode_3ssbb_teacher(&obs.counts, prev_truths, self.n_max())
        }
    }

    /// Frame-0 rough estimates: `num_lof` LoF trials per type, clamped to `[0, n_max]`.
    pub fn initial_rough<R: Rng + ?Sized>(
        &self,
        truth: &[u32],
        lof: &LofConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        truth
            .iter()
            .map(|&n| {
                lof_rough_estimate(n, lof.num_lof, lof.l_lof, rng).map(|r| r.clamp(0.0, self.n_max()))
            })
            .collect()
    }
}

/// Estimates reused as BB rough estimates are floored at one node.
pub fn rough_from_estimates(estimates: &[f64]) -> Vec<f64> {
    estimates.iter().map(|&e| e.max(1.0)).collect()
}
