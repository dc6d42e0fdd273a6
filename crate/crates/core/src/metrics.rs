//! RUL evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{MafnError, Result};

/// Offset in the RE denominator.
pub const RE_EPSILON: f64 = 1e-8;
/// Score time constant for early predictions (ŷ ≤ y).
pub const SCORE_EARLY_SCALE: f64 = 13.0;
/// Score time constant for late predictions (ŷ > y).
pub const SCORE_LATE_SCALE: f64 = 10.0;

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(MafnError::Contract("metric over zero engines".into()));
    }
    if pred.len() != truth.len() {
        return Err(MafnError::Contract(format!(
            "{} predictions for {} engines",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Mean of `|ŷ - y| / (y + ε)`.
pub fn relative_error(pred: &[f64], truth: &[f64], eps: f64) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, y)| (p - y).abs() / (y + eps))
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn re(pred: &[f64], truth: &[f64]) -> Result<f64> {
    relative_error(pred, truth, RE_EPSILON)
}

/// Contribution of one engine to the asymmetric score.
pub fn score_term(pred: f64, truth: f64) -> f64 {
    let d = pred - truth;
    if d <= 0.0 {
        (-d / SCORE_EARLY_SCALE).exp() - 1.0
    } else {
        (d / SCORE_LATE_SCALE).exp() - 1.0
    }
}

/// Summed over engines, not averaged.
pub fn score(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(&p, &y)| score_term(p, y)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub rmse: f64,
    pub re: f64,
    pub score: f64,
    pub engines: usize,
}

impl MetricSet {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(pred, truth)?,
            re: re(pred, truth)?,
            score: score(pred, truth)?,
            engines: pred.len(),
        })
    }
}
