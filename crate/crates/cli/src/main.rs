use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pfdcount_core::config::FileConfig;
use pfdcount_core::experiment::{
    emit_results, evaluate, load_results, run_experiment, write_loss_curve, Phase, PipelineConfig, Profile,
    ResultRow, StudentSource, SweepVariable,
};
use pfdcount_core::neural::{load_net, save_net, TrainReport};
use pfdcount_core::runtime::{run_method, Method};
use pfdcount_core::training::{
    export_dataset_csv, gen_student_training_data, gen_teacher_training_data, load_dataset, save_dataset,
    train_student_offline, train_teacher_offline, GenerationConfig,
};
use pfdcount_core::workload::{read_series_csv, write_series_csv, HeteroSeries};

#[derive(Parser)]
#[command(name = "pfdcount", version, about = "Active-node count estimation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,
    /// Training seed (defaults to the first of `training.seeds`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of node types; 1 is the homogeneous setting.
    #[arg(long, global = true)]
    types: Option<usize>,
    /// BB trial length, or 3-SS-BB blocks when types > 1.
    #[arg(long, short = 'l', global = true)]
    trial_length: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Probability of staying in place per chain step.
    #[arg(long, global = true)]
    q: Option<f64>,
    /// Chain steps per frame.
    #[arg(long, short = 'k', global = true)]
    k: Option<u32>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    frames: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a node-count series from the birth-death chain.
    GenWorkload {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the genie teacher and record the teacher dataset.
    GenTeacherData {
        #[arg(long)]
        out: PathBuf,
        /// Use this series instead of sampling one.
        #[arg(long)]
        workload: Option<PathBuf>,
        /// Also write a flat CSV copy.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    TrainTeacher {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_curve: Option<PathBuf>,
    },
    /// Run the genie student against a trained teacher and record the student dataset.
    GenStudentData {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workload: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    TrainStudent {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_curve: Option<PathBuf>,
    },
    /// Evaluate the baselines, and the student when one is given, at the configured point.
    Evaluate {
        /// Trained student; without it only the baselines run.
        #[arg(long)]
        student: Option<PathBuf>,
        /// Results table, `.csv` or `.json`.
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-run trace CSVs.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Run the configured sweep, training a student per point unless one is given.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_sweep)]
        variable: Option<SweepVariable>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        reuse_model: bool,
    },
    /// Split a results table into one plot-ready series per method.
    EmitPlots {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    match s {
        "desk" => Ok(Profile::Desk),
        "full" => Ok(Profile::Full),
        _ => Err(format!("unknown profile `{s}` (desk, full)")),
    }
}

fn parse_sweep(s: &str) -> Result<SweepVariable, String> {
    [
        SweepVariable::TrialLength,
        SweepVariable::JumpsK,
        SweepVariable::Alpha,
        SweepVariable::NumTypes,
    ]
    .into_iter()
    .find(|v| v.as_str() == s)
    .ok_or_else(|| format!("unknown sweep variable `{s}`"))
}

impl Common {
    fn file_config(&self) -> Result<FileConfig> {
        let mut cfg = match &self.config {
            Some(path) => FileConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => FileConfig::default(),
        };
        if self.profile.is_some() {
            cfg.training.profile = self.profile;
        }
        if let Some(seed) = self.seed {
            cfg.training.seeds = Some(vec![seed]);
        }
        override_opt(&mut cfg.protocol.types, self.types);
        override_opt(&mut cfg.protocol.trial_length, self.trial_length);
        override_opt(&mut cfg.training.alpha, self.alpha);
        override_opt(&mut cfg.workload.stay_prob, self.q);
        override_opt(&mut cfg.workload.jumps, self.k);
        override_opt(&mut cfg.experiment.runs, self.runs);
        override_opt(&mut cfg.experiment.frames, self.frames);
        override_opt(&mut cfg.workload.frames, self.frames);
        Ok(cfg)
    }
}

fn override_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn print_seeds(items: &[(&str, u64)]) {
    let parts: Vec<String> = items.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("seeds: {}", parts.join(" "));
}

fn generation_seeds(base: u64, gen: &GenerationConfig) {
    let workload = gen.workload.map_or(0, |w| w.seed);
    print_seeds(&[
        ("pipeline", base),
        ("workload", workload),
        ("trials", gen.seed),
        ("genie", gen.genie.seed),
    ]);
}

fn with_workload(phase_default: HeteroSeries, path: Option<&Path>, gen: &mut GenerationConfig) -> Result<HeteroSeries> {
    match path {
        Some(p) => {
            let series = read_series_csv(BufReader::new(File::open(p).with_context(|| p.display().to_string())?))?;
            gen.workload = None;
            Ok(series)
        }
        None => Ok(phase_default),
    }
}

fn write_curve(report: &TrainReport, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        write_loss_curve(report, BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn report_training(what: &str, report: &TrainReport) {
    println!(
        "{what}: {} epochs, best epoch {}, test loss {:.6e} (untrained {:.6e})",
        report.epochs_run(),
        report.best_epoch,
        report.test_loss[report.best_epoch],
        report.initial_test_loss
    );
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let file = cli.common.file_config()?;
    let seed = file.seeds()[0];
    let pipeline: PipelineConfig = file.pipeline(seed)?;

    match &cli.command {
        Command::GenWorkload { out } => {
            let frames = file.workload.frames.unwrap_or(pipeline.teacher_frames + 1);
            let workload_seed = file.workload.seed.unwrap_or(seed);
            print_seeds(&[("workload", workload_seed)]);
            let series = pipeline.workload(frames, workload_seed)?;
            write_series_csv(&series, BufWriter::new(File::create(out)?))?;
            println!("wrote {} frames x {} types to {}", series.len(), series.types(), out.display());
        }
        Command::GenTeacherData { out, workload, csv } => {
            let (series, mut gen) = pipeline.generation(Phase::Teacher)?;
            let series = with_workload(series, workload.as_deref(), &mut gen)?;
            generation_seeds(seed, &gen);
            let data = gen_teacher_training_data(&series, &gen)?;
            save_dataset(&data, out)?;
            if let Some(p) = csv {
                export_dataset_csv(&data, BufWriter::new(File::create(p)?))?;
            }
            println!("wrote {} teacher records to {}", data.len(), out.display());
        }
        Command::TrainTeacher { data, out, loss_curve } => {
            print_seeds(&[("train", pipeline.teacher.seed)]);
            let data = load_dataset(data)?;
            let (net, report) = train_teacher_offline(&data, &pipeline.teacher)?;
            save_net(&net, out)?;
            write_curve(&report, loss_curve.as_deref())?;
            report_training("teacher", &report);
        }
        Command::GenStudentData { teacher, out, workload, csv } => {
            let teacher = load_net(teacher)?;
            let (series, mut gen) = pipeline.generation(Phase::Student)?;
            let series = with_workload(series, workload.as_deref(), &mut gen)?;
            generation_seeds(seed, &gen);
            let data = gen_student_training_data(&series, &gen, &teacher, pipeline.student.mixing_alpha)?;
            save_dataset(&data, out)?;
            if let Some(p) = csv {
                export_dataset_csv(&data, BufWriter::new(File::create(p)?))?;
            }
            println!("wrote {} student records to {}", data.len(), out.display());
        }
        Command::TrainStudent { teacher, data, out, loss_curve } => {
            print_seeds(&[("train", pipeline.student.seed)]);
            let teacher = load_net(teacher)?;
            let data = load_dataset(data)?;
            let (net, report) = train_student_offline(&teacher, &data, &pipeline.student)?;
            save_net(&net, out)?;
            write_curve(&report, loss_curve.as_deref())?;
            report_training("student", &report);
        }
        Command::Evaluate { student, out, trace_dir } => {
            let experiment = file.experiment(seed)?;
            let student = student.as_ref().map(load_net).transpose()?;
            let methods: Vec<Method> = experiment
                .methods
                .iter()
                .copied()
                .filter(|&m| m != Method::Nn || student.is_some())
                .collect();
            print_seeds(&[("eval", experiment.eval_seed)]);
            let metrics = evaluate(
                &pipeline,
                student.as_ref(),
                &methods,
                experiment.runs,
                experiment.frames,
                experiment.eval_seed,
            )?;
            let rows: Vec<ResultRow> = metrics
                .iter()
                .map(|m| ResultRow::from_metrics(pipeline.trial_length as f64, m, experiment.frames))
                .collect();
            if let Some(dir) = trace_dir {
                write_traces(&pipeline, student.as_ref(), &methods, &experiment, dir)?;
            }
            emit_results(&rows, out)?;
            for row in &rows {
                println!("{:>9}  mean {:.6e}  std {:.6e}", row.method, row.mean_mse, row.std_mse);
            }
        }
        Command::Sweep {
            out,
            variable,
            values,
            student,
            reuse_model,
        } => {
            let mut experiment = file.experiment(seed)?;
            if let Some(v) = variable {
                experiment.sweep = *v;
            }
            if let Some(v) = values {
                experiment.values = v.clone();
            }
            experiment.reuse_model |= *reuse_model;
            experiment.validate()?;
            print_seeds(&[("pipeline", seed), ("eval", experiment.eval_seed)]);
            let student = student.as_ref().map(load_net).transpose()?;
            let source = match &student {
                Some(net) => StudentSource::Fixed(net),
                None => StudentSource::Train,
            };
            let rows = run_experiment(&experiment, source)?;
            emit_results(&rows, out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::EmitPlots { results, out_dir } => {
            let rows = load_results(results)?;
            emit_plots(&rows, out_dir)?;
        }
    }
    Ok(())
}

fn write_traces(
    pipeline: &PipelineConfig,
    student: Option<&pfdcount_core::neural::DenseNet>,
    methods: &[Method],
    experiment: &pfdcount_core::experiment::ExperimentConfig,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let plan = pipeline.plan()?;
    for r in 0..experiment.runs {
        let workload = pfdcount_core::experiment::eval_workload(pipeline, experiment.frames, experiment.eval_seed, r)?;
        let run_seed = pfdcount_core::seed::derive_seed(experiment.eval_seed, 1_000 + r as u64);
        for &method in methods {
            let run = run_method(method, student, &workload, &plan, run_seed)?;
            let path = dir.join(format!("{}_run{r}.csv", method.as_str()));
            run.write_trace_csv(BufWriter::new(File::create(path)?))?;
        }
    }
    Ok(())
}

fn emit_plots(rows: &[ResultRow], dir: &Path) -> Result<()> {
    if rows.is_empty() {
        bail!("results table is empty");
    }
    std::fs::create_dir_all(dir)?;
    let mut series: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        series.entry(row.method.as_str()).or_default().push(row);
    }
    for (method, points) in &series {
        let path = dir.join(format!("{method}.csv"));
        let mut out = String::from("x,mean,std\n");
        for p in points {
            out.push_str(&format!("{},{},{}\n", p.sweep_value, p.mean_mse, p.std_mse));
        }
        std::fs::write(&path, out)?;
        println!("wrote {}", path.display());
    }
    let doc: BTreeMap<&str, Vec<serde_json::Value>> = series
        .iter()
        .map(|(m, ps)| {
            let pts = ps
                .iter()
                .map(|p| json!({ "x": p.sweep_value, "mean": p.mean_mse, "std": p.std_mse }))
                .collect();
            (*m, pts)
        })
        .collect();
    let path = dir.join("series.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
    println!("wrote {}", path.display());
    Ok(())
}
