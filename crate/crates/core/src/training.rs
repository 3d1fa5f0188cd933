//! Genie-driven dataset generation and offline teacher/student training.
//!
//! A genie is a throwaway network fitted online, one frame at a time, whose
//! previous prediction serves as the rough estimate of the next trial. It makes
//! the recorded trials look like what the final student will see online.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::neural::{fit_dataset, fit_single, Adam, Dataset, DenseNet, SampleTarget, TrainConfig, TrainReport};
use crate::seed::{derive_seed, derived_rng};
use crate::setting::{rough_from_estimates, LofConfig, Setting};
use crate::workload::{HeteroSeries, TransitionSpec};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenieConfig {
    pub learning_rate: f64,
    pub steps_per_frame: usize,
    pub seed: u64,
}

impl Default for GenieConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps_per_frame: 1,
            seed: 0,
        }
    }
}

/// Where the workload came from, kept only for reproducibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadOrigin {
    pub transition: TransitionSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub setting: Setting,
    /// BB trial length (homogeneous) or number of 3-SS-BB blocks.
    pub trial_length: usize,
    pub lof: LofConfig,
    pub genie: GenieConfig,
    pub seed: u64,
    pub workload: Option<WorkloadOrigin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAux {
    /// Rough estimates handed to the trial.
    pub rough_estimates: Vec<f64>,
    /// Genie prediction from the previous frame (clamped counts).
    pub prev_estimates: Vec<f64>,
    pub prev_truths: Vec<u32>,
    /// Genie prediction for this frame, made before its update.
    pub genie_estimates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub student_features: FeatureVector,
    pub teacher_features: FeatureVector,
    pub target: Vec<u32>,
    pub aux: FrameAux,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub kind: DatasetKind,
    pub config: GenerationConfig,
    pub num_iters: usize,
    pub alpha: Option<f64>,
    pub teacher_fingerprint: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfdDataset {
    pub meta: DatasetMeta,
    pub records: Vec<FrameRecord>,
}

impl PfdDataset {
    pub fn setting(&self) -> Setting {
        self.meta.config.setting
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let setting = self.setting();
        let l = self.meta.config.trial_length;
        let n_max = setting.n_max();
        for (i, r) in self.records.iter().enumerate() {
            if r.frame_index != i + 1 {
                return Err(Error::spec(format!("record {i} has frame index {}", r.frame_index)));
            }
            check_layout(&r.student_features, setting.student_layout(), setting.student_len(l))?;
            check_layout(&r.teacher_features, setting.teacher_layout(), setting.teacher_len(l))?;
            setting.check_types(r.target.len())?;
            if r.target.iter().any(|&c| c as f64 > n_max) {
                return Err(Error::spec(format!("frame {} target exceeds {n_max}", r.frame_index)));
            }
        }
        Ok(())
    }

    fn scaled_targets(&self) -> Vec<Vec<f64>> {
        let setting = self.setting();
        self.records.iter().map(|r| setting.scale(&r.target)).collect()
    }

    fn teacher_inputs(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.teacher_features.values.clone()).collect()
    }

    fn student_inputs(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.student_features.values.clone()).collect()
    }
}

fn check_layout(fv: &FeatureVector, layout: crate::features::Layout, len: usize) -> Result<()> {
    if fv.layout != layout || fv.len() != len {
        return Err(Error::LayoutMismatch {
            expected: format!("{layout} of length {len}"),
            found: format!("{} of length {}", fv.layout, fv.len()),
        });
    }
    Ok(())
}

fn check_net_input(net: &DenseNet, len: usize, role: &str) -> Result<()> {
    if net.input_len() != len {
        return Err(Error::LayoutMismatch {
            expected: format!("{role} input length {len}"),
            found: format!("input length {}", net.input_len()),
        });
    }
    Ok(())
}

enum Genie<'a> {
    Teacher,
    Student { teacher: &'a DenseNet, alpha: f64 },
}

fn generate(workload: &HeteroSeries, config: &GenerationConfig, mode: Genie<'_>) -> Result<PfdDataset> {
    let setting = config.setting;
    setting.check_types(workload.types())?;
    let l = config.trial_length;
    if l == 0 {
        return Err(Error::arg("trial length must be positive"));
    }
    if workload.len() < 2 {
        return Err(Error::arg("workload needs at least two frames"));
    }
    if config.genie.steps_per_frame == 0 {
        return Err(Error::arg("genie needs at least one step per frame"));
    }
    let (genie_input, kind, alpha, fingerprint) = match mode {
        Genie::Teacher => (setting.teacher_len(l), DatasetKind::Teacher, None, None),
        Genie::Student { teacher, alpha } => {
            check_net_input(teacher, setting.teacher_len(l), "teacher")?;
            crate::neural::check_alpha(alpha)?;
            (setting.student_len(l), DatasetKind::Student, Some(alpha), Some(teacher.fingerprint()))
        }
    };
    let mut genie = DenseNet::pfd(genie_input, setting.scaling(), config.genie.seed)?;
    let mut optimizer = Adam::new(&genie, config.genie.learning_rate);
    let mut rng = derived_rng(config.seed, 0);

    let truth0 = workload.frame(0);
    let lof_rough = setting.initial_rough(&truth0, &config.lof, &mut rng)?;
    let obs0 = setting.observe(&truth0, l, &rough_from_estimates(&lof_rough), &mut rng)?;
    let x0 = match mode {
        Genie::Teacher => setting.teacher_features(&obs0, &lof_rough)?,
        Genie::Student { .. } => setting.student_features(&obs0, &lof_rough)?,
    };
    let mut prev_estimates = genie.predict_counts(&x0.values)?;

    let num_iters = workload.len() - 1;
    let mut records = Vec::with_capacity(num_iters);
    for t in 1..workload.len() {
        let truth = workload.frame(t);
        let prev_truth = workload.frame(t - 1);
        let rough = rough_from_estimates(&prev_estimates);
        let obs = setting.observe(&truth, l, &rough, &mut rng)?;
        let student = setting.student_features(&obs, &prev_estimates)?;
        let prev_truth_f: Vec<f64> = prev_truth.iter().map(|&c| c as f64).collect();
        let teacher = setting.teacher_features(&obs, &prev_truth_f)?;
        let target = setting.scale(&truth);

        let x = match mode {
            Genie::Teacher => &teacher.values,
            Genie::Student { .. } => &student.values,
        };
        let estimates = genie.predict_counts(x)?;
        let steps = config.genie.steps_per_frame;
        match mode {
            Genie::Teacher => {
                fit_single(&mut genie, &mut optimizer, x, &SampleTarget::Mse(&target), steps)?;
            }
            Genie::Student { teacher: tr, alpha } => {
                let tr_pred = tr.forward(&teacher.values)?;
                let objective = SampleTarget::Distill {
                    target: &target,
                    teacher: &tr_pred,
                    alpha,
                };
                fit_single(&mut genie, &mut optimizer, x, &objective, steps)?;
            }
        }
        records.push(FrameRecord {
            frame_index: t,
            student_features: student,
            teacher_features: teacher,
            target: truth,
            aux: FrameAux {
                rough_estimates: rough,
                prev_estimates: std::mem::replace(&mut prev_estimates, estimates.clone()),
                prev_truths: prev_truth,
                genie_estimates: estimates,
            },
        });
    }
    Ok(PfdDataset {
        meta: DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            kind,
            config: *config,
            num_iters,
            alpha,
            teacher_fingerprint: fingerprint,
        },
        records,
    })
}

/// Frame 0 seeds the genie from LoF trials and is not recorded, so a workload
/// of `num_iters + 1` frames yields `num_iters` records.
pub fn gen_teacher_training_data(workload: &HeteroSeries, config: &GenerationConfig) -> Result<PfdDataset> {
    generate(workload, config, Genie::Teacher)
}

/// The genie student is fitted with the distillation loss against the frozen
/// pretrained teacher's prediction.
pub fn gen_student_training_data(
    workload: &HeteroSeries,
    config: &GenerationConfig,
    teacher: &DenseNet,
    alpha: f64,
) -> Result<PfdDataset> {
    generate(workload, config, Genie::Student { teacher, alpha })
}

pub fn train_teacher_offline(dataset: &PfdDataset, config: &TrainConfig) -> Result<(DenseNet, TrainReport)> {
    dataset.validate()?;
    let setting = dataset.setting();
    let l = dataset.meta.config.trial_length;
    let data = Dataset::new(&dataset.teacher_inputs(), &dataset.scaled_targets(), None)?;
    let mut net = DenseNet::pfd(setting.teacher_len(l), setting.scaling(), derive_seed(config.seed, 0x7EAC))?;
    let report = fit_dataset(&mut net, &data, config)?;
    Ok((net, report))
}

/// Frozen teacher predictions on each record's teacher features (network scale).
pub fn teacher_predictions(teacher: &DenseNet, dataset: &PfdDataset) -> Result<Vec<Vec<f64>>> {
    let setting = dataset.setting();
    check_net_input(teacher, setting.teacher_len(dataset.meta.config.trial_length), "teacher")?;
    dataset
        .records
        .iter()
        .map(|r| teacher.forward(&r.teacher_features.values))
        .collect()
}

/// Mixing ratio comes from `config.mixing_alpha`.
pub fn train_student_offline(
    teacher: &DenseNet,
    dataset: &PfdDataset,
    config: &TrainConfig,
) -> Result<(DenseNet, TrainReport)> {
    dataset.validate()?;
    let setting = dataset.setting();
    let l = dataset.meta.config.trial_length;
    let tr = teacher_predictions(teacher, dataset)?;
    let data = Dataset::new(&dataset.student_inputs(), &dataset.scaled_targets(), Some(&tr))?;
    let mut net = DenseNet::pfd(setting.student_len(l), setting.scaling(), derive_seed(config.seed, 0x57D0))?;
    let report = fit_dataset(&mut net, &data, config)?;
    Ok((net, report))
}

/// Sidecar path holding the generation metadata next to a JSONL dataset.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// One record per JSONL line, plus a `.meta.json` sidecar.
pub fn save_dataset(dataset: &PfdDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path)?);
    for r in &dataset.records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::from_json("record", e))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let meta = serde_json::to_string_pretty(&dataset.meta).map_err(|e| Error::from_json("meta", e))?;
    std::fs::write(meta_path(path), meta)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PfdDataset> {
    let path = path.as_ref();
    let meta_file = meta_path(path);
    if !path.exists() || !meta_file.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let meta_text = std::fs::read_to_string(&meta_file)?;
    let probe: serde_json::Value =
        serde_json::from_str(&meta_text).map_err(|e| Error::from_json("meta", e))?;
    let found = probe.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            expected: DATASET_FORMAT_VERSION,
            found,
        });
    }
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| Error::from_json("meta", e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::from_json(format!("line {}", i + 1), e))?;
        records.push(record);
    }
    let dataset = PfdDataset { meta, records };
    dataset.validate()?;
    Ok(dataset)
}

/// Flat CSV for inspection: frame, targets, aux columns, then both feature vectors.
pub fn export_dataset_csv<W: Write>(dataset: &PfdDataset, writer: W) -> Result<()> {
    let types = dataset.setting().types();
    let mut csv = csv::Writer::from_writer(writer);
    let Some(first) = dataset.records.first() else {
        csv.write_record(["frame"])?;
        csv.flush()?;
        return Ok(());
    };
    let mut header = vec!["frame".to_string()];
    for prefix in ["target", "rough", "prev_estimate", "genie_estimate"] {
        header.extend((0..types).map(|b| format!("{prefix}_{b}")));
    }
    header.extend((0..first.student_features.len()).map(|i| format!("s{i}")));
    header.extend((0..first.teacher_features.len()).map(|i| format!("t{i}")));
    csv.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![r.frame_index.to_string()];
        row.extend(r.target.iter().map(u32::to_string));
        row.extend(r.aux.rough_estimates.iter().map(f64::to_string));
        row.extend(r.aux.prev_estimates.iter().map(f64::to_string));
        row.extend(r.aux.genie_estimates.iter().map(f64::to_string));
        row.extend(r.student_features.values.iter().map(f64::to_string));
        row.extend(r.teacher_features.values.iter().map(f64::to_string));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}
