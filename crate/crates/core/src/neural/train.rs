use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::check_alpha;
use super::optim::{Adam, Optimizer};
use super::DenseNet;
use crate::error::{Error, Result};
use crate::seed::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Hard stop, applied on top of `max_epochs`.
    pub early_stop_epoch: Option<usize>,
    /// Stop after this many epochs without a new best test loss and restore the best weights.
    pub patience: Option<usize>,
    pub mixing_alpha: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            early_stop_epoch: None,
            patience: None,
            mixing_alpha: 0.1,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn teacher(seed: u64) -> Self {
        Self {
            max_epochs: 2500,
            patience: Some(50),
            seed,
            ..Self::default()
        }
    }

    pub fn student(alpha: f64, seed: u64) -> Self {
        Self {
            max_epochs: 500,
            early_stop_epoch: Some(500),
            mixing_alpha: alpha,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::arg("batch size and epoch count must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::arg("train fraction must lie in (0, 1)"));
        }
        check_alpha(self.mixing_alpha)
    }

    fn epoch_limit(&self) -> usize {
        self.early_stop_epoch
            .map_or(self.max_epochs, |e| e.min(self.max_epochs))
    }
}

/// Rows of inputs and scaled targets, plus optional frozen teacher predictions
/// (also scaled). With teacher predictions the objective is the distillation
/// loss, otherwise plain squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub teacher: Option<Array2<f64>>,
}

fn rows_to_array(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::arg(format!("{what} rows have unequal lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| Error::arg(e.to_string()))
}

impl Dataset {
    pub fn new(inputs: &[Vec<f64>], targets: &[Vec<f64>], teacher: Option<&[Vec<f64>]>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if targets.len() != inputs.len() || teacher.is_some_and(|t| t.len() != inputs.len()) {
            return Err(Error::arg("inputs, targets and teacher predictions must align"));
        }
        let targets = rows_to_array(targets, "target")?;
        let teacher = teacher.map(|t| rows_to_array(t, "teacher")).transpose()?;
        if teacher.as_ref().is_some_and(|t| t.dim() != targets.dim()) {
            return Err(Error::arg("teacher predictions must match target shape"));
        }
        Ok(Self {
            inputs: rows_to_array(inputs, "input")?,
            targets,
            teacher,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    /// Test loss of the freshly initialised network.
    pub initial_test_loss: f64,
    /// Student-only squared error on the test split for the returned weights.
    pub final_test_data_loss: f64,
    pub best_epoch: usize,
    pub test_indices: Vec<usize>,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

/// Target of a single-sample update.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleTarget<'a> {
    Mse(&'a [f64]),
    Distill {
        target: &'a [f64],
        teacher: &'a [f64],
        alpha: f64,
    },
}

/// `steps` descent steps on one sample. Returns the loss before the first step.
pub fn fit_single<O: Optimizer>(
    net: &mut DenseNet,
    optimizer: &mut O,
    x: &[f64],
    target: &SampleTarget<'_>,
    steps: usize,
) -> Result<f64> {
    if steps == 0 {
        return Err(Error::arg("at least one step is required"));
    }
    let (y, teacher, alpha) = match *target {
        SampleTarget::Mse(y) => (y, None, 1.0),
        SampleTarget::Distill { target, teacher, alpha } => {
            check_alpha(alpha)?;
            (target, Some(teacher), alpha)
        }
    };
    let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::arg(e.to_string()))?;
    let ys = ArrayView2::from_shape((1, y.len()), y).map_err(|e| Error::arg(e.to_string()))?;
    let ts = teacher
        .map(|t| ArrayView2::from_shape((1, t.len()), t).map_err(|e| Error::arg(e.to_string())))
        .transpose()?;
    let mut first = None;
    for _ in 0..steps {
        let (loss, grads) = batch_step(net, xs, ys, ts, alpha)?;
        first.get_or_insert(loss);
        optimizer.step(net, &grads);
    }
    Ok(first.unwrap())
}

/// Mean objective and mean gradients over a batch.
fn batch_step(
    net: &DenseNet,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    teacher: Option<ArrayView2<'_, f64>>,
    alpha: f64,
) -> Result<(f64, super::Gradients)> {
    if y.ncols() != net.output_len() {
        return Err(Error::arg(format!(
            "target width {} does not match network output {}",
            y.ncols(),
            net.output_len()
        )));
    }
    let cache = net.forward_batch(x)?;
    let rows = x.nrows() as f64;
    let diff = cache.output() - &y;
    let (weight, constant) = match teacher {
        Some(t) => (alpha, (1.0 - alpha) * (&t - &y).mapv(|d| d * d).sum()),
        None => (1.0, 0.0),
    };
    let loss = (weight * diff.mapv(|d| d * d).sum() + constant) / rows;
    let upstream = diff * (2.0 * weight / rows);
    let grads = net.backward(&cache, upstream.view())?;
    Ok((loss, grads))
}

fn objective_sum(
    net: &DenseNet,
    data: &Dataset,
    indices: &[usize],
    alpha: f64,
    student_only: bool,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in indices.chunks(512) {
        let x = data.inputs.select(Axis(0), chunk);
        let y = data.targets.select(Axis(0), chunk);
        let out = net.forward_batch(x.view())?;
        let sq = (out.output() - &y).mapv(|d| d * d).sum();
        total += match (&data.teacher, student_only) {
            (Some(t), false) => {
                let t = t.select(Axis(0), chunk);
                alpha * sq + (1.0 - alpha) * (&t - &y).mapv(|d| d * d).sum()
            }
            _ => sq,
        };
    }
    Ok(total)
}

fn mean_objective(net: &DenseNet, data: &Dataset, indices: &[usize], alpha: f64, student_only: bool) -> Result<f64> {
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(objective_sum(net, data, indices, alpha, student_only)? / indices.len() as f64)
}

/// Shuffles once, splits, then runs Adam mini-batch descent.
pub fn fit_dataset(net: &mut DenseNet, data: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.inputs.ncols() != net.input_len() {
        return Err(Error::LayoutMismatch {
            expected: format!("input length {}", net.input_len()),
            found: format!("input length {}", data.inputs.ncols()),
        });
    }
    let alpha = if data.teacher.is_some() {
        config.mixing_alpha
    } else {
        1.0
    };
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(config.seed, 1));
    let n_train = ((n as f64 * config.train_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let test_indices = order.split_off(n_train);
    let mut train_indices = order;

    let initial_test_loss = mean_objective(net, data, &test_indices, alpha, false)?;
    let mut optimizer = Adam::new(net, config.learning_rate);
    let mut batch_rng = derived_rng(config.seed, 2);
    let mut train_loss = Vec::new();
    let mut test_loss = Vec::new();
    let mut best = (f64::INFINITY, 0usize, net.clone());

    for epoch in 0..config.epoch_limit() {
        train_indices.shuffle(&mut batch_rng);
        let mut epoch_total = 0.0;
        for batch in train_indices.chunks(config.batch_size) {
            let x = data.inputs.select(Axis(0), batch);
            let y = data.targets.select(Axis(0), batch);
            let t = data.teacher.as_ref().map(|t| t.select(Axis(0), batch));
            let (loss, grads) = batch_step(net, x.view(), y.view(), t.as_ref().map(|t| t.view()), alpha)?;
            epoch_total += loss * batch.len() as f64;
            optimizer.step(net, &grads);
        }
        train_loss.push(epoch_total / train_indices.len() as f64);
        let test = mean_objective(net, data, &test_indices, alpha, false)?;
        test_loss.push(test);

        if let Some(patience) = config.patience {
            if test < best.0 {
                best = (test, epoch, net.clone());
            } else if epoch - best.1 >= patience {
                break;
            }
        }
    }

    let best_epoch = if config.patience.is_some() && best.0.is_finite() {
        *net = best.2;
        best.1
    } else {
        train_loss.len() - 1
    };
    let final_test_data_loss = mean_objective(net, data, &test_indices, alpha, true)?;
    Ok(TrainReport {
        train_loss,
        test_loss,
        initial_test_loss,
        final_test_data_loss,
        best_epoch,
        test_indices,
    })
}
