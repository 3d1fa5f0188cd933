//! End-to-end pipeline, sweeps and result tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{DenseNet, TrainConfig, TrainReport};
use crate::runtime::{equalize_hetero, equalize_homo, run_method, BudgetPlan, Method, OnlineRun};
use crate::seed::derive_seed;
use crate::setting::{LofConfig, Setting};
use crate::training::{
    gen_student_training_data, gen_teacher_training_data, train_student_offline, train_teacher_offline,
    GenerationConfig, GenieConfig, PfdDataset, WorkloadOrigin,
};
use crate::workload::{sample_hetero_uniform_start, sample_series_uniform_start, HeteroSeries, TransitionSpec};

/// Squared error summed over components, divided by `len * n_max^2`.
pub fn normalized_error(estimate: &[f64], truth: &[f64], n_max: f64) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::arg(format!(
            "estimate has {} components, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    let sq: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    Ok(sq / (estimate.len() as f64 * n_max * n_max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: Method,
    pub per_frame_normalized_sq_error: Vec<f64>,
    pub mean_normalized_mse: f64,
    pub seed: u64,
}

impl RunMetrics {
    pub fn from_run(method: Method, run: &OnlineRun, seed: u64) -> Self {
        let per_frame = run.normalized_errors();
        let mean = mean(&per_frame);
        Self {
            method,
            per_frame_normalized_sq_error: per_frame,
            mean_normalized_mse: mean,
            seed,
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Full,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Teacher,
    Student,
}

/// Everything needed to train one teacher/student pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub types: usize,
    /// BB length (homogeneous) or 3-SS-BB blocks; equals the NN budget parameter.
    pub trial_length: usize,
    pub stay_prob: f64,
    pub jumps: u32,
    pub lof: LofConfig,
    pub teacher_frames: usize,
    pub student_frames: usize,
    pub genie_learning_rate: f64,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn for_profile(profile: Profile, types: usize, trial_length: usize, alpha: f64, seed: u64) -> Self {
        let (frames, teacher, student) = match profile {
            Profile::Full => {
                let frames = if types > 1 { 20_000 } else { 10_000 };
                (frames, TrainConfig::teacher(seed), TrainConfig::student(alpha, seed))
            }
            Profile::Desk => (
                5_000,
                TrainConfig {
                    max_epochs: 60,
                    patience: Some(8),
                    ..TrainConfig::teacher(seed)
                },
                TrainConfig {
                    max_epochs: 40,
                    early_stop_epoch: None,
                    patience: Some(8),
                    ..TrainConfig::student(alpha, seed)
                },
            ),
        };
        Self {
            types,
            trial_length,
            stay_prob: 0.2,
            jumps: 5,
            lof: LofConfig::default(),
            teacher_frames: frames,
            student_frames: frames,
            genie_learning_rate: 1e-3,
            teacher,
            student,
            seed,
        }
    }

    pub fn setting(&self) -> Result<Setting> {
        if self.types == 1 {
            Ok(Setting::homogeneous())
        } else {
            Setting::heterogeneous(self.types)
        }
    }

    pub fn transition(&self) -> Result<TransitionSpec> {
        TransitionSpec::new(self.setting()?.n_max() as usize + 1, self.stay_prob, self.jumps)
    }

    pub fn plan(&self) -> Result<BudgetPlan> {
        if self.types == 1 {
            equalize_homo(self.trial_length, &self.lof)
        } else {
            equalize_hetero(self.trial_length, self.types, &self.lof)
        }
    }

    /// Workload of `frames` frames, every type started uniformly at random.
    pub fn workload(&self, frames: usize, seed: u64) -> Result<HeteroSeries> {
        let transition = self.transition()?;
        if self.types == 1 {
            Ok(sample_series_uniform_start(&transition, frames, seed)?.into())
        } else {
            sample_hetero_uniform_start(&transition, self.types, frames, seed)
        }
    }

    /// Workload and generation settings of one dataset.
    pub fn generation(&self, phase: Phase) -> Result<(HeteroSeries, GenerationConfig)> {
        let transition = self.transition()?;
        let (frames, tag) = match phase {
            Phase::Teacher => (self.teacher_frames, 0),
            Phase::Student => (self.student_frames, 1),
        };
        let workload_seed = derive_seed(self.seed, 10 + tag);
        let workload = self.workload(frames + 1, workload_seed)?;
        let config = GenerationConfig {
            setting: self.setting()?,
            trial_length: self.trial_length,
            lof: self.lof,
            genie: GenieConfig {
                learning_rate: self.genie_learning_rate,
                steps_per_frame: 1,
                seed: derive_seed(self.seed, 20 + tag),
            },
            seed: derive_seed(self.seed, 30 + tag),
            workload: Some(WorkloadOrigin {
                transition,
                seed: workload_seed,
            }),
        };
        Ok((workload, config))
    }

    pub fn teacher_dataset(&self) -> Result<PfdDataset> {
        let (workload, config) = self.generation(Phase::Teacher)?;
        gen_teacher_training_data(&workload, &config)
    }

    pub fn student_dataset(&self, teacher: &DenseNet) -> Result<PfdDataset> {
        let (workload, config) = self.generation(Phase::Student)?;
        gen_student_training_data(&workload, &config, teacher, self.student.mixing_alpha)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub teacher: DenseNet,
    pub student: DenseNet,
    pub teacher_report: TrainReport,
    pub student_report: TrainReport,
}

pub fn train_teacher(config: &PipelineConfig) -> Result<(DenseNet, TrainReport)> {
    train_teacher_offline(&config.teacher_dataset()?, &config.teacher)
}

/// Student data generation and offline training against a fixed teacher.
pub fn train_student(config: &PipelineConfig, teacher: &DenseNet) -> Result<(DenseNet, TrainReport)> {
    let data = config.student_dataset(teacher)?;
    train_student_offline(teacher, &data, &config.student)
}

/// All four phases: teacher data, teacher, student data, student.
pub fn train_pipeline(config: &PipelineConfig) -> Result<TrainedModels> {
    let (teacher, teacher_report) = train_teacher(config)?;
    let (student, student_report) = train_student(config, &teacher)?;
    Ok(TrainedModels {
        teacher,
        student,
        teacher_report,
        student_report,
    })
}

/// Evaluation workload for run `run` of a sweep point.
pub fn eval_workload(config: &PipelineConfig, frames: usize, seed: u64, run: usize) -> Result<HeteroSeries> {
    config.workload(frames, derive_seed(seed, run as u64))
}

/// `runs` runs of `frames` frames per method; per-run metrics in method order.
pub fn evaluate(
    config: &PipelineConfig,
    student: Option<&DenseNet>,
    methods: &[Method],
    runs: usize,
    frames: usize,
    seed: u64,
) -> Result<Vec<Vec<RunMetrics>>> {
    let plan = config.plan()?;
    let mut out = vec![Vec::with_capacity(runs); methods.len()];
    for r in 0..runs {
        let workload = eval_workload(config, frames, seed, r)?;
        let run_seed = derive_seed(seed, 1_000 + r as u64);
        for (m, &method) in methods.iter().enumerate() {
            let run = run_method(method, student, &workload, &plan, run_seed)?;
            out[m].push(RunMetrics::from_run(method, &run, run_seed));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    TrialLength,
    JumpsK,
    Alpha,
    NumTypes,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariable::TrialLength => "trial_length",
            SweepVariable::JumpsK => "jumps_k",
            SweepVariable::Alpha => "alpha",
            SweepVariable::NumTypes => "num_types",
        }
    }

    /// `config` with the swept quantity set to `value`.
    pub fn apply(self, config: &PipelineConfig, value: f64) -> Result<PipelineConfig> {
        let whole = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::arg(format!("{} needs a positive integer, got {value}", self.as_str())))
            }
        };
        let mut out = config.clone();
        match self {
            SweepVariable::TrialLength => out.trial_length = whole()?,
            SweepVariable::JumpsK => out.jumps = whole()? as u32,
            SweepVariable::NumTypes => out.types = whole()?,
            SweepVariable::Alpha => {
                crate::neural::check_alpha(value)?;
                out.student.mixing_alpha = value;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub base: PipelineConfig,
    pub sweep: SweepVariable,
    pub values: Vec<f64>,
    pub runs: usize,
    pub frames: usize,
    pub eval_seed: u64,
    /// Train once on `base` and evaluate that student at every sweep value.
    pub reuse_model: bool,
    pub methods: Vec<Method>,
}

impl ExperimentConfig {
    pub fn new(base: PipelineConfig, sweep: SweepVariable, values: Vec<f64>, profile: Profile) -> Self {
        let (runs, frames) = match profile {
            Profile::Full => (20, 2_000),
            Profile::Desk => (5, 500),
        };
        Self {
            base,
            sweep,
            values,
            runs,
            frames,
            eval_seed: 0xE7A1,
            reuse_model: false,
            methods: Method::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::arg("sweep needs at least one value"));
        }
        if self.runs == 0 || self.frames == 0 {
            return Err(Error::arg("runs and frames must be positive"));
        }
        if self.reuse_model && matches!(self.sweep, SweepVariable::TrialLength | SweepVariable::NumTypes) {
            return Err(Error::arg(format!(
                "a single model cannot be reused across {} values",
                self.sweep.as_str()
            )));
        }
        Ok(())
    }
}

/// Row name used for the student's offline test loss in alpha sweeps.
pub const TEST_LOSS_ROW: &str = "student_test_loss";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub method: String,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub runs: usize,
    pub frames: usize,
}

impl ResultRow {
    pub fn from_metrics(sweep_value: f64, metrics: &[RunMetrics], frames: usize) -> Self {
        let means: Vec<f64> = metrics.iter().map(|m| m.mean_normalized_mse).collect();
        Self {
            sweep_value,
            method: metrics.first().map_or("", |m| m.method.as_str()).to_string(),
            mean_mse: mean(&means),
            std_mse: std_dev(&means),
            runs: metrics.len(),
            frames,
        }
    }
}

/// Student supplied by the caller, or trained per sweep point.
pub enum StudentSource<'a> {
    Train,
    Fixed(&'a DenseNet),
}

/// Rows ordered by sweep value, then method. Alpha sweeps add the student's
/// final offline test loss as an extra row.
pub fn run_experiment(config: &ExperimentConfig, source: StudentSource<'_>) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let needs_nn = config.methods.contains(&Method::Nn);
    let mut shared = None;
    if config.reuse_model && needs_nn && matches!(source, StudentSource::Train) {
        shared = Some(train_pipeline(&config.base)?);
    }
    let mut rows = Vec::new();
    for &value in &config.values {
        let point = config.sweep.apply(&config.base, value)?;
        let mut trained = None;
        let student = match (&source, &shared) {
            (StudentSource::Fixed(net), _) => Some(*net),
            (StudentSource::Train, Some(models)) => Some(&models.student),
            (StudentSource::Train, None) if needs_nn => {
                trained = Some(train_pipeline(&point)?);
                trained.as_ref().map(|m| &m.student)
            }
            _ => None,
        };
        let metrics = evaluate(&point, student, &config.methods, config.runs, config.frames, config.eval_seed)?;
        rows.extend(metrics.iter().map(|m| ResultRow::from_metrics(value, m, config.frames)));
        if let (SweepVariable::Alpha, Some(models)) = (config.sweep, &trained) {
            let report = &models.student_report;
            rows.push(ResultRow {
                sweep_value: value,
                method: TEST_LOSS_ROW.to_string(),
                mean_mse: report.test_loss[report.best_epoch],
                std_mse: 0.0,
                runs: 1,
                frames: report.test_indices.len(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(OutputFormat::Csv),
            Some("json") => Ok(OutputFormat::Json),
            _ => Err(Error::arg(format!("cannot infer result format from {}", path.display()))),
        }
    }
}

pub const RESULT_COLUMNS: [&str; 6] = ["sweep_value", "method", "mean_mse", "std_mse", "runs", "frames"];
pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ResultsDocument {
    schema_version: u32,
    columns: Vec<String>,
    rows: Vec<ResultRow>,
}

pub fn write_results<W: Write>(rows: &[ResultRow], format: OutputFormat, writer: W) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
            csv.write_record(RESULT_COLUMNS)?;
            for row in rows {
                csv.serialize(row)?;
            }
            csv.flush()?;
        }
        OutputFormat::Json => {
            let doc = ResultsDocument {
                schema_version: RESULTS_SCHEMA_VERSION,
                columns: RESULT_COLUMNS.iter().map(|c| c.to_string()).collect(),
                rows: rows.to_vec(),
            };
            let mut writer = writer;
            serde_json::to_writer_pretty(&mut writer, &doc).map_err(|e| Error::from_json("results", e))?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_results<R: Read>(format: OutputFormat, reader: R) -> Result<Vec<ResultRow>> {
    match format {
        OutputFormat::Csv => {
            let mut csv = csv::Reader::from_reader(reader);
            let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
            if header != RESULT_COLUMNS {
                return Err(Error::parse("results header", format!("unexpected columns {header:?}")));
            }
            csv.deserialize().map(|r| r.map_err(Error::from)).collect()
        }
        OutputFormat::Json => {
            let doc: ResultsDocument =
                serde_json::from_reader(reader).map_err(|e| Error::from_json("results", e))?;
            if doc.schema_version != RESULTS_SCHEMA_VERSION {
                return Err(Error::Version {
                    expected: RESULTS_SCHEMA_VERSION,
                    found: doc.schema_version,
                });
            }
            Ok(doc.rows)
        }
    }
}

/// Writes the table to `path`, format taken from the extension.
pub fn emit_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = OutputFormat::from_path(path)?;
    let file = BufWriter::new(File::create(path)?);
    write_results(rows, format, file)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let format = OutputFormat::from_path(path)?;
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    read_results(format, BufReader::new(File::open(path)?))
}

/// Columns `epoch, train_loss, test_loss`.
pub fn write_loss_curve<W: Write>(report: &TrainReport, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["epoch", "train_loss", "test_loss"])?;
    for (epoch, (train, test)) in report.train_loss.iter().zip(&report.test_loss).enumerate() {
        csv.write_record([epoch.to_string(), train.to_string(), test.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_error_examples() {
        assert_eq!(normalized_error(&[3.0], &[3.0], 64.0).unwrap(), 0.0);
        assert_eq!(normalized_error(&[64.0], &[0.0], 64.0).unwrap(), 1.0);
        assert_eq!(normalized_error(&[32.0, 5.0], &[0.0, 5.0], 64.0).unwrap(), 0.125);
        assert!(normalized_error(&[1.0], &[1.0, 2.0], 64.0).is_err());
    }

    fn rows() -> Vec<ResultRow> {
        vec![
            ResultRow {
                sweep_value: 50.0,
                method: "nn".into(),
                mean_mse: 0.1 + 0.2,
                std_mse: 1.0 / 3.0,
                runs: 5,
                frames: 500,
            },
            ResultRow {
                sweep_value: 0.25,
                method: "bb_aware".into(),
                mean_mse: 1e-300,
                std_mse: 0.0,
                runs: 1,
                frames: 2,
            },
        ]
    }

    #[test]
    fn results_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["r.csv", "r.json"] {
            let path = dir.path().join(name);
            emit_results(&rows(), &path).unwrap();
            assert_eq!(load_results(&path).unwrap(), rows());
        }
        assert!(emit_results(&rows(), dir.path().join("r.txt")).is_err());
        assert!(matches!(load_results(dir.path().join("x.csv")), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut out = Vec::new();
        write_results(&[], OutputFormat::Csv, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "sweep_value,method,mean_mse,std_mse,runs,frames\n");
        assert!(read_results(OutputFormat::Csv, "a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn json_schema_fields() {
        let mut out = Vec::new();
        write_results(&rows(), OutputFormat::Json, &mut out).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["columns"].as_array().unwrap().len(), 6);
        for row in v["rows"].as_array().unwrap() {
            for col in RESULT_COLUMNS {
                assert!(row.get(col).is_some(), "missing {col}");
            }
        }
    }

    #[test]
    fn grand_mean_equals_mean_of_run_means() {
        let metrics: Vec<RunMetrics> = (0..4)
            .map(|r| {
                let per_frame: Vec<f64> = (0..8).map(|t| ((r * 8 + t) as f64).sqrt() / 10.0).collect();
                RunMetrics {
                    method: Method::Srcs,
                    mean_normalized_mse: mean(&per_frame),
                    per_frame_normalized_sq_error: per_frame,
                    seed: r,
                }
            })
            .collect();
        let row = ResultRow::from_metrics(1.0, &metrics, 8);
        let all: Vec<f64> = metrics.iter().flat_map(|m| m.per_frame_normalized_sq_error.clone()).collect();
        assert!((row.mean_mse - mean(&all)).abs() < 1e-15);
        for m in &metrics {
            assert!((m.mean_normalized_mse - mean(&m.per_frame_normalized_sq_error)).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_application() {
        let base = PipelineConfig::for_profile(Profile::Desk, 1, 100, 0.1, 0);
        assert_eq!(SweepVariable::TrialLength.apply(&base, 50.0).unwrap().trial_length, 50);
        assert_eq!(SweepVariable::JumpsK.apply(&base, 10.0).unwrap().jumps, 10);
        assert_eq!(SweepVariable::Alpha.apply(&base, 0.5).unwrap().student.mixing_alpha, 0.5);
        assert_eq!(SweepVariable::NumTypes.apply(&base, 4.0).unwrap().types, 4);
        assert!(SweepVariable::TrialLength.apply(&base, 2.5).is_err());
        assert!(SweepVariable::Alpha.apply(&base, 1.5).is_err());
        let mut config = ExperimentConfig::new(base, SweepVariable::TrialLength, vec![], Profile::Desk);
        assert!(config.validate().is_err());
        config.values = vec![50.0];
        config.reuse_model = true;
        assert!(config.validate().is_err());
    }

    #[test]
    fn baseline_only_experiment_is_reproducible() {
        let base = PipelineConfig::for_profile(Profile::Desk, 1, 100, 0.1, 0);
        let mut config = ExperimentConfig::new(base, SweepVariable::TrialLength, vec![50.0, 100.0], Profile::Desk);
        config.methods = vec![Method::Srcs, Method::BbAware];
        config.runs = 2;
        config.frames = 50;
        let a = run_experiment(&config, StudentSource::Train).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, run_experiment(&config, StudentSource::Train).unwrap());
        assert_eq!(a[0].method, "srcs");
        assert_eq!(a[1].method, "bb_aware");
    }
}
