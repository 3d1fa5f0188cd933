use crate::error::{Error, Result};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "prediction length {} does not match target length {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Squared Euclidean distance between prediction and target.
pub fn loss_mse(prediction: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(prediction, target)?;
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

/// `alpha * |student - target|^2 + (1 - alpha) * |teacher - target|^2`.
pub fn loss_distill(student: &[f64], teacher: &[f64], target: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * loss_mse(student, target)? + (1.0 - alpha) * loss_mse(teacher, target)?)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::arg(format!("mixing ratio {alpha} outside [0, 1]")))
    }
}

pub fn mse_grad(prediction: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_lengths(prediction, target)?;
    Ok(prediction.iter().zip(target).map(|(p, t)| 2.0 * (p - t)).collect())
}

/// Gradient of the distillation loss with respect to the student prediction.
/// The teacher term does not depend on the student.
pub fn distill_grad(student: &[f64], target: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    Ok(mse_grad(student, target)?.into_iter().map(|g| alpha * g).collect())
}
