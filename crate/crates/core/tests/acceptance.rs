//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p pfdcount-core --test acceptance`. Pass criterion
//! numbers as arguments (`-- 1 2 5`) to run a subset. Criteria listed in
//! `KNOWN_RED` are reported but do not fail the process.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ndarray::Array2;
use pfdcount_core::experiment::{
    emit_results, evaluate, load_results, mean, std_dev, PipelineConfig, Profile, ResultRow, RunMetrics,
    SweepVariable,
};
use pfdcount_core::neural::{init_net, load_net, loss_distill, loss_mse, save_net, Activation, DenseNet};
use pfdcount_core::protocols::{bb_estimate, run_bb, srcs_bb_length, srcs_frame, SrcsConfig};
use pfdcount_core::runtime::{equalize_hetero, equalize_homo, run_method, BudgetPlan, Method};
use pfdcount_core::seed::rng_from;
use pfdcount_core::setting::LofConfig;
use pfdcount_core::training::{load_dataset, save_dataset, train_student_offline};
use pfdcount_core::workload::{build_tpm, matrix_power, sample_series, TransitionSpec, TransitionStats};
use rand::Rng;

// Tolerances and sizes.
const GRAD_NETS: usize = 20;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;
const GRAD_DENOM_FLOOR: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-3;
const ALPHA_GRID: usize = 11;
const AFFINE_TOL: f64 = 1e-12;
const BB_TRIALS: usize = 10_000;
const BB_REL_TOL: f64 = 0.05;
const SRCS_FRAMES: usize = 10_000;
const SRCS_EPSILON: f64 = 0.5;
const SRCS_COVERAGE: f64 = 0.95;
const DTMC_FRAMES: usize = 100_000;
const DTMC_TV: f64 = 0.02;
const HEADLINE_RATIO: f64 = 0.8;
const EVAL_RUNS: usize = 5;
const EVAL_FRAMES: usize = 500;
const EVAL_SEED: u64 = 0xACCE;
const TRAIN_SEEDS: [u64; 3] = [0, 1, 2];
const SEEDS_REQUIRED: usize = 2;
const K_RATIO: f64 = 2.0;
const AUDIT_FRAMES: usize = 60;

/// Criteria that fail at desk scale; the analysis is in the README.
const KNOWN_RED: [u32; 1] = [10];

struct Check {
    pass: bool,
    detail: String,
}

impl Check {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }

    fn within(self, started: Instant, limit: Duration) -> Self {
        let took = started.elapsed();
        if took <= limit {
            return self;
        }
        Self {
            pass: false,
            detail: format!("{} [took {:.1}s, limit {}s]", self.detail, took.as_secs_f64(), limit.as_secs()),
        }
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn grad_check() -> Check {
    let t0 = Instant::now();
    let mut rng = rng_from(0x6AD);
    let acts = [Activation::Relu, Activation::Sigmoid, Activation::Linear];
    let mut worst = 0.0f64;
    let mut params = 0usize;
    let mut nets = 0;
    while nets < GRAD_NETS {
        let depth = rng.random_range(2..=4);
        let dims: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
        let activations: Vec<Activation> = (0..depth).map(|_| acts[rng.random_range(0..3)]).collect();
        let mut net = init_net(&dims, &activations, rng.random()).unwrap();
        for b in net.biases_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_fn((3, dims[0]), |_| rng.random_range(-1.0..1.0));
        let upstream = Array2::from_shape_fn((3, dims[depth]), |_| rng.random_range(-1.0..1.0));
        let cache = net.forward_batch(x.view()).unwrap();
        let near_kink = cache
            .pre_activations()
            .iter()
            .zip(&activations)
            .any(|(z, a)| *a == Activation::Relu && z.iter().any(|v| v.abs() < KINK_MARGIN));
        if near_kink {
            continue;
        }
        let grads = net.backward(&cache, upstream.view()).unwrap();
        let objective = |n: &DenseNet| -> f64 {
            let out = n.forward_batch(x.view()).unwrap();
            (out.output() * &upstream).sum()
        };
        for layer in 0..depth {
            let (rows, cols) = net.weights()[layer].dim();
            for r in 0..rows {
                for c in 0..cols {
                    let keep = net.weights()[layer][[r, c]];
                    net.weights_mut()[layer][[r, c]] = keep + GRAD_STEP;
                    let up = objective(&net);
                    net.weights_mut()[layer][[r, c]] = keep - GRAD_STEP;
                    let down = objective(&net);
                    net.weights_mut()[layer][[r, c]] = keep;
                    let numeric = (up - down) / (2.0 * GRAD_STEP);
                    worst = worst.max(rel_err(grads.weights[layer][[r, c]], numeric));
                    params += 1;
                }
                let keep = net.biases()[layer][r];
                net.biases_mut()[layer][r] = keep + GRAD_STEP;
                let up = objective(&net);
                net.biases_mut()[layer][r] = keep - GRAD_STEP;
                let down = objective(&net);
                net.biases_mut()[layer][r] = keep;
                let numeric = (up - down) / (2.0 * GRAD_STEP);
                worst = worst.max(rel_err(grads.biases[layer][r], numeric));
                params += 1;
            }
        }
        nets += 1;
    }
    Check::new(
        worst < GRAD_REL_TOL,
        format!("{GRAD_NETS} nets, {params} params, worst relative error {worst:.2e}"),
    )
    .within(t0, secs(10))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_DENOM_FLOOR)
}

fn distill_identities() -> Check {
    let mut rng = rng_from(0xD157);
    let mut exact = true;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let len = rng.random_range(1..=5);
        let mut v = || -> Vec<f64> { (0..len).map(|_| rng.random_range(-2.0..2.0)).collect() };
        let (s, t, y) = (v(), v(), v());
        let data = loss_mse(&s, &y).unwrap();
        let teach = loss_mse(&t, &y).unwrap();
        let l0 = loss_distill(&s, &t, &y, 0.0).unwrap();
        let l1 = loss_distill(&s, &t, &y, 1.0).unwrap();
        exact &= l1 == data && l0 == teach;
        for i in 0..ALPHA_GRID {
            let a = i as f64 / (ALPHA_GRID - 1) as f64;
            let la = loss_distill(&s, &t, &y, a).unwrap();
            worst = worst.max((la - (a * l1 + (1.0 - a) * l0)).abs());
        }
    }
    Check::new(
        exact && worst < AFFINE_TOL,
        format!("endpoints exact: {exact}, worst affine deviation {worst:.1e}"),
    )
}

fn bb_consistency() -> Check {
    let t0 = Instant::now();
    let mut rng = rng_from(0xBB);
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [8u32, 32, 64] {
        let total: f64 = (0..BB_TRIALS)
            .map(|_| {
                let trial = run_bb(n, 100, n as f64, &mut rng);
                bb_estimate(trial.empty_slots(), trial.length, trial.participation_prob, n as f64, 64.0).unwrap()
            })
            .sum();
        let m = total / BB_TRIALS as f64;
        pass &= (m - n as f64).abs() <= BB_REL_TOL * n as f64;
        parts.push(format!("n={n}: {m:.2}"));
    }
    Check::new(pass, parts.join(", ")).within(t0, secs(30))
}

fn srcs_guarantee() -> Check {
    let t0 = Instant::now();
    let config = SrcsConfig {
        num_lof: 3,
        l_lof: 8,
        l_bb: srcs_bb_length(SRCS_EPSILON).unwrap(),
    };
    let mut rng = rng_from(0x5C5);
    let mut parts = vec![format!("l={}", config.l_bb)];
    let mut pass = config.l_bb == 102;
    for n in [16u32, 48] {
        let hits = (0..SRCS_FRAMES)
            .filter(|_| {
                let (est, _) = srcs_frame(n, &config, 64.0, &mut rng).unwrap();
                (est - n as f64).abs() <= SRCS_EPSILON * n as f64
            })
            .count();
        let coverage = hits as f64 / SRCS_FRAMES as f64;
        pass &= coverage >= SRCS_COVERAGE;
        parts.push(format!("n={n}: coverage {coverage:.4}"));
    }
    Check::new(pass, parts.join(", ")).within(t0, secs(60))
}

fn dtmc_fidelity() -> Check {
    let t0 = Instant::now();
    let spec = TransitionSpec::new(65, 0.2, 5).unwrap();
    let step = matrix_power(&build_tpm(&TransitionSpec::new(65, 0.2, 1).unwrap()).unwrap(), 5).unwrap();
    let series = sample_series(&spec, 32, DTMC_FRAMES, 0xD7).unwrap();
    let stats = TransitionStats::from_series(&series, 65);
    let kernel = stats.interior_displacement_tv(&step, 5);
    let pooled = stats.pooled_next_state_tv(&step);
    Check::new(
        kernel < DTMC_TV && pooled < DTMC_TV,
        format!("interior 5-step kernel TV {kernel:.4}, pooled next-state TV {pooled:.4}"),
    )
    .within(t0, secs(10))
}

/// Trained networks shared between criteria.
#[derive(Default)]
struct Models {
    teachers: BTreeMap<(usize, usize, u64), DenseNet>,
    students: BTreeMap<(usize, usize, u64, u64), (DenseNet, f64, f64)>,
}

fn alpha_key(alpha: f64) -> u64 {
    alpha.to_bits()
}

impl Models {
    fn config(types: usize, l: usize, alpha: f64, seed: u64) -> PipelineConfig {
        PipelineConfig::for_profile(Profile::Desk, types, l, alpha, seed)
    }

    fn teacher(&mut self, types: usize, l: usize, seed: u64) -> &DenseNet {
        self.teachers.entry((types, l, seed)).or_insert_with(|| {
            let config = Self::config(types, l, 0.1, seed);
            pfdcount_core::experiment::train_teacher(&config).unwrap().0
        })
    }

    /// Student plus its test loss and student-only test error at the kept epoch.
    fn student(&mut self, types: usize, l: usize, alpha: f64, seed: u64) -> &(DenseNet, f64, f64) {
        let key = (types, l, alpha_key(alpha), seed);
        if !self.students.contains_key(&key) {
            let teacher = self.teacher(types, l, seed).clone();
            let config = Self::config(types, l, alpha, seed);
            let data = config.student_dataset(&teacher).unwrap();
            let (net, report) = train_student_offline(&teacher, &data, &config.student).unwrap();
            let loss = report.test_loss[report.best_epoch];
            self.students.insert(key, (net, loss, report.final_test_data_loss));
        }
        &self.students[&key]
    }
}

fn method_means(results: &[Vec<RunMetrics>]) -> Vec<(f64, f64)> {
    results
        .iter()
        .map(|runs| {
            let v: Vec<f64> = runs.iter().map(|r| r.mean_normalized_mse).collect();
            (mean(&v), std_dev(&v))
        })
        .collect()
}

/// NN against both baselines for each training seed.
fn headline(models: &mut Models, types: usize, l: usize) -> Check {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in TRAIN_SEEDS {
        let student = models.student(types, l, 0.1, seed).0.clone();
        let config = Models::config(types, l, 0.1, seed);
        let res = evaluate(&config, Some(&student), &Method::ALL, EVAL_RUNS, EVAL_FRAMES, EVAL_SEED).unwrap();
        let m = method_means(&res);
        let (nn, srcs, bba) = (m[0].0, m[1].0, m[2].0);
        let win = nn < HEADLINE_RATIO * srcs && nn < HEADLINE_RATIO * bba;
        wins += win as usize;
        parts.push(format!(
            "seed {seed}: nn {nn:.5} srcs {srcs:.5} bb_aware {bba:.5} (nn/min {:.2})",
            nn / srcs.min(bba)
        ));
    }
    Check::new(
        wins >= SEEDS_REQUIRED,
        format!("{wins}/{} seeds; {}", TRAIN_SEEDS.len(), parts.join("; ")),
    )
}

fn homo_headline(models: &mut Models) -> Check {
    let t0 = Instant::now();
    headline(models, 1, 100).within(t0, secs(30 * 60))
}

fn budget_trend(models: &mut Models) -> Check {
    let budgets = [50usize, 100, 150];
    let mut per_budget = Vec::new();
    for &b in &budgets {
        let student = models.student(1, b, 0.1, 0).0.clone();
        let config = Models::config(1, b, 0.1, 0);
        let res = evaluate(&config, Some(&student), &Method::ALL, EVAL_RUNS, EVAL_FRAMES, EVAL_SEED).unwrap();
        per_budget.push(method_means(&res));
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (m, method) in Method::ALL.iter().enumerate() {
        for w in per_budget.windows(2) {
            let (a, sa) = w[0][m];
            let (b, sb) = w[1][m];
            pass &= b <= a + ((sa * sa + sb * sb) / 2.0).sqrt();
        }
        let means: Vec<String> = per_budget.iter().map(|p| format!("{:.5}", p[m].0)).collect();
        parts.push(format!("{} [{}]", method.as_str(), means.join(" ")));
    }
    Check::new(pass, format!("budgets 50/100/150: {}", parts.join(", ")))
}

fn k_robustness(models: &mut Models) -> Check {
    let student = models.student(1, 100, 0.1, 0).0.clone();
    let base = Models::config(1, 100, 0.1, 0);
    let mut nn = Vec::new();
    let mut bba = Vec::new();
    for k in [1.0, 5.0, 10.0] {
        let config = SweepVariable::JumpsK.apply(&base, k).unwrap();
        let res = evaluate(&config, Some(&student), &[Method::Nn, Method::BbAware], EVAL_RUNS, EVAL_FRAMES, EVAL_SEED)
            .unwrap();
        let m = method_means(&res);
        nn.push(m[0].0);
        bba.push(m[1].0);
    }
    let max = nn.iter().cloned().fold(f64::MIN, f64::max);
    let min = nn.iter().cloned().fold(f64::MAX, f64::min);
    let ratio = max / min;
    Check::new(
        ratio < K_RATIO && bba[2] > bba[0],
        format!(
            "nn k=1/5/10 {:.5}/{:.5}/{:.5} (max/min {ratio:.2}); bb_aware k=1 {:.5} k=10 {:.5}",
            nn[0], nn[1], nn[2], bba[0], bba[2]
        ),
    )
}

fn alpha_shape(models: &mut Models) -> Check {
    let mut half = Vec::new();
    let mut one = Vec::new();
    let mut data = Vec::new();
    for seed in TRAIN_SEEDS {
        let (_, l5, d5) = *models.student(1, 100, 0.5, seed);
        let (_, l1, d1) = *models.student(1, 100, 1.0, seed);
        half.push(l5);
        one.push(l1);
        data.push((d5, d1));
    }
    let (a, b) = (mean(&half), mean(&one));
    let da = mean(&data.iter().map(|d| d.0).collect::<Vec<_>>());
    let db = mean(&data.iter().map(|d| d.1).collect::<Vec<_>>());
    Check::new(
        a < b,
        format!(
            "test loss alpha=0.5 {a:.3e}, alpha=1.0 {b:.3e} (student-only error {da:.3e} vs {db:.3e})"
        ),
    )
}

fn hetero_headline(models: &mut Models) -> Check {
    let plan = equalize_hetero(100, 3, &LofConfig::default()).unwrap();
    if plan.srcs.l_bb != 43 || plan.bb_aware_length != 67 {
        return Check::new(
            false,
            format!("budget mismatch: l_SRCs {} l_BBAware {}", plan.srcs.l_bb, plan.bb_aware_length),
        );
    }
    let h = headline(models, 3, 100);
    Check::new(h.pass, format!("l_SRCs 43, l_BBAware 67; {}", h.detail))
}

fn audit(plan: &BudgetPlan, config: &PipelineConfig, student: &DenseNet) -> Result<String, String> {
    let workload = config.workload(AUDIT_FRAMES, 0xA0D).unwrap();
    for (method, expect) in [
        (Method::Nn, plan.nn_slots()),
        (Method::Srcs, plan.srcs_slots()),
        (Method::BbAware, plan.bb_aware_slots()),
    ] {
        let run = run_method(method, Some(student), &workload, plan, 0xA0D).unwrap();
        if let Some(t) = (1..run.len()).find(|&t| run.slots_used[t] != expect) {
            return Err(format!(
                "{} frame {t}: {} slots, plan says {expect}",
                method.as_str(),
                run.slots_used[t]
            ));
        }
    }
    Ok(format!("nn {} srcs {} bb_aware {}", plan.nn_slots(), plan.srcs_slots(), plan.bb_aware_slots()))
}

fn budget_parity() -> Check {
    let homo = Models::config(1, 100, 0.1, 0);
    let hetero = Models::config(3, 100, 0.1, 0);
    let mut parts = Vec::new();
    for (name, config, plan) in [
        ("homo", &homo, equalize_homo(100, &LofConfig::default()).unwrap()),
        ("hetero", &hetero, equalize_hetero(100, 3, &LofConfig::default()).unwrap()),
    ] {
        let setting = config.setting().unwrap();
        let student = DenseNet::pfd(setting.student_len(100), setting.scaling(), 1).unwrap();
        match audit(&plan, config, &student) {
            Ok(s) => parts.push(format!("{name}: {s}")),
            Err(e) => return Check::new(false, format!("{name}: {e}")),
        }
    }
    Check::new(true, format!("{AUDIT_FRAMES} frames; {}", parts.join("; ")))
}

fn round_trips() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig {
        teacher_frames: 40,
        ..Models::config(3, 10, 0.1, 7)
    };
    let teacher_data = config.teacher_dataset().unwrap();
    let net = DenseNet::pfd(teacher_data.records[0].teacher_features.len(), config.setting().unwrap().scaling(), 3)
        .unwrap();

    let net_path = dir.path().join("net.json");
    save_net(&net, &net_path).unwrap();
    let back = load_net(&net_path).unwrap();
    let bits = |n: &DenseNet| -> Vec<u64> {
        n.weights()
            .iter()
            .flat_map(|w| w.iter().copied())
            .chain(n.biases().iter().flat_map(|b| b.iter().copied()))
            .map(f64::to_bits)
            .collect()
    };
    let net_ok = back == net && bits(&back) == bits(&net);

    let data_path = dir.path().join("data.jsonl");
    save_dataset(&teacher_data, &data_path).unwrap();
    let data_ok = load_dataset(&data_path).unwrap() == teacher_data;

    let rows = vec![
        ResultRow {
            sweep_value: 0.1,
            method: "nn".into(),
            mean_mse: 1.0 / 3.0,
            std_mse: std::f64::consts::PI * 1e-7,
            runs: 5,
            frames: 500,
        },
        ResultRow {
            sweep_value: 100.0,
            method: "bb_aware".into(),
            mean_mse: 2f64.sqrt() / 1e5,
            std_mse: 0.0,
            runs: 5,
            frames: 500,
        },
    ];
    let mut results_ok = true;
    for name in ["r.csv", "r.json"] {
        let p = dir.path().join(name);
        emit_results(&rows, &p).unwrap();
        let back = load_results(&p).unwrap();
        results_ok &= back.len() == rows.len()
            && back.iter().zip(&rows).all(|(a, b)| {
                a.method == b.method
                    && a.sweep_value.to_bits() == b.sweep_value.to_bits()
                    && a.mean_mse.to_bits() == b.mean_mse.to_bits()
                    && a.std_mse.to_bits() == b.std_mse.to_bits()
                    && (a.runs, a.frames) == (b.runs, b.frames)
            });
    }
    Check::new(
        net_ok && data_ok && results_ok,
        format!("weights {net_ok}, dataset {data_ok}, results csv+json {results_ok}"),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let mut models = Models::default();
    type Criterion<'a> = (u32, &'a str, Box<dyn FnMut(&mut Models) -> Check + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "gradient correctness", Box::new(|_| grad_check())),
        (2, "distillation loss identities", Box::new(|_| distill_identities())),
        (3, "BB estimator consistency", Box::new(|_| bb_consistency())),
        (4, "SRC_s accuracy guarantee", Box::new(|_| srcs_guarantee())),
        (5, "DTMC fidelity", Box::new(|_| dtmc_fidelity())),
        (6, "homogeneous headline ordering", Box::new(homo_headline)),
        (7, "budget monotonicity", Box::new(budget_trend)),
        (8, "robustness to k", Box::new(k_robustness)),
        (9, "alpha sweep shape", Box::new(alpha_shape)),
        (10, "heterogeneous headline", Box::new(hetero_headline)),
        (11, "budget parity audit", Box::new(|_| budget_parity())),
        (12, "serialization round trips", Box::new(|_| round_trips())),
    ];
    let mut unexpected = Vec::new();
    for (id, name, mut run) in criteria {
        if !selected(id) {
            continue;
        }
        let t0 = Instant::now();
        let check = run(&mut models);
        let status = match (check.pass, KNOWN_RED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected.push(id);
                "FAIL"
            }
        };
        println!(
            "[{status}] {id:>2} {name}: {} ({:.1}s)",
            check.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
