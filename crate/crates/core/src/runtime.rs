//! Online per-frame estimation loops under an equalized slot budget.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::DenseNet;
use crate::protocols::{bb_estimate, run_bb, srcs_frame, SrcsConfig};
use crate::seed::{derive_seed, rng_from};
use crate::setting::{rough_from_estimates, LofConfig, Setting};
use crate::workload::{HeteroSeries, NodeCountSeries};

/// Per-frame slot budget for the learned estimator and both baselines.
///
/// In the heterogeneous setting `srcs` and `bb_aware_length` are per type:
/// the T-type baselines run one instance per type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub setting: Setting,
    pub total_slots_per_frame: usize,
    /// BB length, or number of 3-SS-BB blocks.
    pub nn_length: usize,
    pub srcs: SrcsConfig,
    pub bb_aware_length: usize,
}

impl BudgetPlan {
    pub fn lof(&self) -> LofConfig {
        LofConfig {
            num_lof: self.srcs.num_lof,
            l_lof: self.srcs.l_lof,
        }
    }

    pub fn nn_slots(&self) -> usize {
        self.setting.trial_slots(self.nn_length)
    }

    pub fn srcs_slots(&self) -> usize {
        self.setting.types() * self.srcs.slots()
    }

    pub fn bb_aware_slots(&self) -> usize {
        self.setting.types() * self.bb_aware_length
    }
}

fn check_lof(lof: &LofConfig) -> Result<()> {
    if lof.num_lof == 0 || lof.l_lof == 0 {
        return Err(Error::Budget("LoF trial count and length must be positive".into()));
    }
    Ok(())
}

pub fn equalize_homo(total_slots: usize, lof: &LofConfig) -> Result<BudgetPlan> {
    check_lof(lof)?;
    if total_slots <= lof.slots() {
        return Err(Error::Budget(format!(
            "{total_slots} slots leave no room for a BB trial after {} LoF slots",
            lof.slots()
        )));
    }
    Ok(BudgetPlan {
        setting: Setting::homogeneous(),
        total_slots_per_frame: total_slots,
        nn_length: total_slots,
        srcs: SrcsConfig {
            num_lof: lof.num_lof,
            l_lof: lof.l_lof,
            l_bb: total_slots - lof.slots(),
        },
        bb_aware_length: total_slots,
    })
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Per-type baseline lengths matching `l_3ssbb * (types - 1)` slots, rounded half up.
pub fn equalize_hetero(l_3ssbb: usize, types: usize, lof: &LofConfig) -> Result<BudgetPlan> {
    check_lof(lof)?;
    let setting = Setting::heterogeneous(types)?;
    if l_3ssbb == 0 {
        return Err(Error::Budget("3-SS-BB needs at least one block".into()));
    }
    let per_type = (l_3ssbb * (types - 1)) as f64 / types as f64;
    let l_srcs = round_half_up(per_type - lof.slots() as f64);
    let l_bb_aware = round_half_up(per_type);
    if l_srcs < 1 {
        return Err(Error::Budget(format!(
            "per-type budget {per_type:.2} cannot cover {} LoF slots plus a BB trial",
            lof.slots()
        )));
    }
    Ok(BudgetPlan {
        setting,
        total_slots_per_frame: setting.trial_slots(l_3ssbb),
        nn_length: l_3ssbb,
        srcs: SrcsConfig {
            num_lof: lof.num_lof,
            l_lof: lof.l_lof,
            l_bb: l_srcs as usize,
        },
        bb_aware_length: l_bb_aware as usize,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nn,
    Srcs,
    BbAware,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Nn, Method::Srcs, Method::BbAware];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nn => "nn",
            Method::Srcs => "srcs",
            Method::BbAware => "bb_aware",
        }
    }
}

/// Estimates and accounting for one online run. Row `t` of `estimates` and
/// `truth` has one entry per node type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineRun {
    pub estimates: Vec<Vec<f64>>,
    pub truth: Vec<Vec<u32>>,
    /// Squared Euclidean error per frame.
    pub sq_errors: Vec<f64>,
    pub slots_used: Vec<usize>,
    pub n_max: f64,
}

impl OnlineRun {
    fn with_capacity(frames: usize, n_max: f64) -> Self {
        Self {
            estimates: Vec::with_capacity(frames),
            truth: Vec::with_capacity(frames),
            sq_errors: Vec::with_capacity(frames),
            slots_used: Vec::with_capacity(frames),
            n_max,
        }
    }

    fn push(&mut self, estimate: Vec<f64>, truth: Vec<u32>, slots: usize) {
        let sq = estimate
            .iter()
            .zip(&truth)
            .map(|(&e, &t)| (e - t as f64).powi(2))
            .sum();
        self.estimates.push(estimate);
        self.truth.push(truth);
        self.sq_errors.push(sq);
        self.slots_used.push(slots);
    }

    pub fn len(&self) -> usize {
        self.sq_errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_errors.is_empty()
    }

    pub fn types(&self) -> usize {
        self.truth.first().map_or(0, Vec::len)
    }

    /// Squared error per frame divided by `types * n_max^2`.
    pub fn normalized_errors(&self) -> Vec<f64> {
        let scale = self.types() as f64 * self.n_max * self.n_max;
        self.sq_errors.iter().map(|e| e / scale).collect()
    }

    /// Type `b` alone, as a homogeneous-shaped run.
    pub fn component(&self, b: usize) -> OnlineRun {
        let mut run = OnlineRun::with_capacity(self.len(), self.n_max);
        for t in 0..self.len() {
            run.push(vec![self.estimates[t][b]], vec![self.truth[t][b]], self.slots_used[t]);
        }
        run
    }

    /// Merges per-type runs frame by frame, summing errors and slots.
    fn merge(parts: Vec<OnlineRun>, n_max: f64) -> OnlineRun {
        let frames = parts.first().map_or(0, OnlineRun::len);
        let mut run = OnlineRun::with_capacity(frames, n_max);
        for t in 0..frames {
            let estimate = parts.iter().map(|p| p.estimates[t][0]).collect();
            let truth = parts.iter().map(|p| p.truth[t][0]).collect();
            let slots = parts.iter().map(|p| p.slots_used[t]).sum();
            run.push(estimate, truth, slots);
        }
        run
    }

    /// Columns `frame, truth_*, estimate_*, sq_error, slots_used`.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let types = self.types();
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["frame".to_string()];
        header.extend((0..types).map(|b| format!("truth_{b}")));
        header.extend((0..types).map(|b| format!("estimate_{b}")));
        header.extend(["sq_error".to_string(), "slots_used".to_string()]);
        csv.write_record(&header)?;
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.truth[t].iter().map(u32::to_string));
            row.extend(self.estimates[t].iter().map(f64::to_string));
            row.push(self.sq_errors[t].to_string());
            row.push(self.slots_used[t].to_string());
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }
}

fn check_workload(plan: &BudgetPlan, workload: &HeteroSeries) -> Result<()> {
    plan.setting.check_types(workload.types())?;
    if workload.is_empty() {
        return Err(Error::arg("workload has no frames"));
    }
    Ok(())
}

/// The learned estimator: LoF trials seed frame 0, afterwards every trial uses
/// the previous prediction as its rough estimate.
pub fn nn_online(student: &DenseNet, workload: &HeteroSeries, plan: &BudgetPlan, seed: u64) -> Result<OnlineRun> {
    check_workload(plan, workload)?;
    let setting = plan.setting;
    let l = plan.nn_length;
    if student.input_len() != setting.student_len(l) || student.output_len() != setting.types() {
        return Err(Error::LayoutMismatch {
            expected: format!("{} -> {}", setting.student_len(l), setting.types()),
            found: format!("{} -> {}", student.input_len(), student.output_len()),
        });
    }
    let lof = plan.lof();
    let mut rng = rng_from(seed);
    let mut run = OnlineRun::with_capacity(workload.len(), setting.n_max());

    let truth0 = workload.frame(0);
    let mut prev = setting.initial_rough(&truth0, &lof, &mut rng)?;
    for t in 0..workload.len() {
        let truth = workload.frame(t);
        let obs = setting.observe(&truth, l, &rough_from_estimates(&prev), &mut rng)?;
        let x = setting.student_features(&obs, &prev)?;
        let estimate = student.predict_counts(&x.values)?;
        let lof_slots = if t == 0 { setting.types() * lof.slots() } else { 0 };
        run.push(estimate.clone(), truth, obs.slots + lof_slots);
        prev = estimate;
    }
    Ok(run)
}

pub fn nn_online_homo(student: &DenseNet, workload: &NodeCountSeries, plan: &BudgetPlan, seed: u64) -> Result<OnlineRun> {
    nn_online(student, &HeteroSeries::from(workload.clone()), plan, seed)
}

fn srcs_single(values: &[u32], config: &SrcsConfig, n_max: f64, seed: u64) -> Result<OnlineRun> {
    let mut rng = rng_from(seed);
    let mut run = OnlineRun::with_capacity(values.len(), n_max);
    for &n in values {
        let (estimate, slots) = srcs_frame(n, config, n_max, &mut rng)?;
        run.push(vec![estimate], vec![n], slots);
    }
    Ok(run)
}

fn bb_aware_single(values: &[u32], srcs: &SrcsConfig, l: usize, n_max: f64, seed: u64) -> Result<OnlineRun> {
    if l == 0 {
        return Err(Error::Budget("BB-Aware trial length must be positive".into()));
    }
    let mut rng = rng_from(seed);
    let mut run = OnlineRun::with_capacity(values.len(), n_max);
    let mut prev = 0.0;
    for (t, &n) in values.iter().enumerate() {
        if t == 0 {
            let (estimate, slots) = srcs_frame(n, srcs, n_max, &mut rng)?;
            run.push(vec![estimate], vec![n], slots);
            prev = estimate;
            continue;
        }
        let trial = run_bb(n, l, prev.max(1.0), &mut rng);
        let estimate = bb_estimate(trial.empty_slots(), trial.length, trial.participation_prob, prev, n_max)?;
        run.push(vec![estimate], vec![n], trial.length);
        prev = estimate;
    }
    Ok(run)
}

/// Independent SRC_s per frame; the homogeneous case is type 0 of the T-type variant.
pub fn srcs_online(workload: &NodeCountSeries, plan: &BudgetPlan, seed: u64) -> Result<OnlineRun> {
    t_srcs_online(&HeteroSeries::from(workload.clone()), &homo_view(plan), seed)
}

/// SRC_s once, then BB trials seeded by the previous estimate, which is also
/// the fallback when a trial has no empty slot.
pub fn bb_aware_online(workload: &NodeCountSeries, plan: &BudgetPlan, seed: u64) -> Result<OnlineRun> {
    t_bb_aware_online(&HeteroSeries::from(workload.clone()), &homo_view(plan), seed)
}

fn homo_view(plan: &BudgetPlan) -> BudgetPlan {
    BudgetPlan {
        setting: Setting::Homogeneous {
            n_max: plan.setting.n_max() as u32,
        },
        ..*plan
    }
}

/// One SRC_s instance per type, each on its own stream.
pub fn t_srcs_online(workload: &HeteroSeries, plan: &BudgetPlan, seed: u64) -> Result<OnlineRun> {
    check_workload(plan, workload)?;
    let n_max = plan.setting.n_max();
    let parts = workload
        .per_type
        .iter()
        .enumerate()
        .map(|(b, s)| srcs_single(&s.values, &plan.srcs, n_max, derive_seed(seed, b as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(OnlineRun::merge(parts, n_max))
}

pub fn t_bb_aware_online(workload: &HeteroSeries, plan: &BudgetPlan, seed: u64) -> Result<OnlineRun> {
    check_workload(plan, workload)?;
    let n_max = plan.setting.n_max();
    let parts = workload
        .per_type
        .iter()
        .enumerate()
        .map(|(b, s)| {
            bb_aware_single(&s.values, &plan.srcs, plan.bb_aware_length, n_max, derive_seed(seed, b as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OnlineRun::merge(parts, n_max))
}

/// Runs `method` with the stream for `seed`; the learned method needs `student`.
pub fn run_method(
    method: Method,
    student: Option<&DenseNet>,
    workload: &HeteroSeries,
    plan: &BudgetPlan,
    seed: u64,
) -> Result<OnlineRun> {
    match method {
        Method::Nn => {
            let student = student.ok_or_else(|| Error::MissingArtifact("student network".into()))?;
            nn_online(student, workload, plan, derive_seed(seed, 0x4E4E))
        }
        Method::Srcs => t_srcs_online(workload, plan, derive_seed(seed, 0x5352)),
        Method::BbAware => t_bb_aware_online(workload, plan, derive_seed(seed, 0x4242)),
    }
}

/// Expected slots for `method` in every frame after the first.
pub fn steady_slots(method: Method, plan: &BudgetPlan) -> usize {
    match method {
        Method::Nn => plan.nn_slots(),
        Method::Srcs => plan.srcs_slots(),
        Method::BbAware => plan.bb_aware_slots(),
    }
}
