//! Handoff, satisfaction and joint objectives.

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};

/// Floor applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

fn check_row(row: &[f64], label: usize, what: &str) -> Result<()> {
    if label >= row.len() {
        return Err(Error::contract(format!(
            "{what}: label {label} outside {} classes",
            row.len()
        )));
    }
    Ok(())
}

/// Mean cross-entropy over utterances.
pub fn handoff_loss(predictions: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "handoff_loss: {} prediction rows for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::contract("handoff_loss: empty dialogue"));
    }
    let mut total = 0.0;
    for (row, &y) in predictions.iter().zip(labels) {
        check_row(row, y, "handoff_loss")?;
        total -= row[y].max(LOG_EPS).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Cross-entropy of a single dialogue-level distribution.
pub fn satisfaction_loss(prediction: &[f64], label: usize) -> Result<f64> {
    check_row(prediction, label, "satisfaction_loss")?;
    Ok(-prediction[label].max(LOG_EPS).ln())
}

/// `L1 + η·L2 + δ·‖Θ‖²`.
pub fn joint_loss(l1: f64, l2: f64, store: &ParamStore, eta: f64, delta: f64) -> f64 {
    let reg = if delta == 0.0 { 0.0 } else { delta * store.sum_squares() };
    l1 + eta * l2 + reg
}

/// Graph form of [`handoff_loss`]; `y_hat` is `L x 2`.
pub fn handoff_loss_node(g: &mut Graph, y_hat: Var, labels: &[usize]) -> Result<Var> {
    let [rows, cols] = g.shape(y_hat);
    if rows != labels.len() {
        return Err(Error::contract(format!(
            "handoff_loss: {rows} prediction rows for {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= cols) {
        return Err(Error::contract(format!("handoff_loss: label {bad} outside {cols} classes")));
    }
    let logs = g.log_clamp(y_hat, LOG_EPS);
    let picked = g.pick(logs, labels);
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / rows as f64))
}

/// Graph form of [`satisfaction_loss`]; `y_hat` is `1 x 3`.
pub fn satisfaction_loss_node(g: &mut Graph, y_hat: Var, label: usize) -> Result<Var> {
    let [_, cols] = g.shape(y_hat);
    if label >= cols {
        return Err(Error::contract(format!(
            "satisfaction_loss: label {label} outside {cols} classes"
        )));
    }
    let logs = g.log_clamp(y_hat, LOG_EPS);
    let picked = g.pick(logs, &[label]);
    Ok(g.scale(picked, -1.0))
}
