use super::TrainError;

/// Mean squared error over entries with `mask[i] == true`. Returns `None`
/// when nothing is selected: the task is skipped for that step.
pub fn mse_loss(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<Option<f64>, TrainError> {
    check_lengths(pred, target, mask)?;
    let (sum, n) = pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), ((p, t), _)| {
            (s + (p - t) * (p - t), n + 1)
        });
    Ok((n > 0).then(|| sum / n as f64))
}

/// `d mse / d pred`; zeros where masked out, `None` when nothing is selected.
pub fn mse_grad(
    pred: &[f64],
    target: &[f64],
    mask: &[bool],
) -> Result<Option<Vec<f64>>, TrainError> {
    check_lengths(pred, target, mask)?;
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Ok(None);
    }
    let scale = 2.0 / n as f64;
    Ok(Some(
        pred.iter()
            .zip(target)
            .zip(mask)
            .map(|((p, t), &m)| if m { scale * (p - t) } else { 0.0 })
            .collect(),
    ))
}

fn check_lengths(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<(), TrainError> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(TrainError::Shape(format!(
            "mse inputs have lengths {}, {}, {}",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    Ok(())
}
