//! The four head losses and their weighted total.
//!
//! Graph-level functions take batched `Var`s and are what training uses.
//! The `*_value` helpers evaluate a single sample from plain slices.

use mafn_tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{MafnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_state: f64,
    pub w_degradation: f64,
    pub w_forecast: f64,
    pub w_rul: f64,
    pub lambda_smooth: f64,
    pub lambda_late: f64,
    pub lambda_early: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_state: 0.5,
            w_degradation: 0.3,
            w_forecast: 1.0,
            w_rul: 1.0,
            lambda_smooth: 0.1,
            lambda_late: 2.0,
            lambda_early: 1.0,
        }
    }
}

/// Per-head loss nodes on a graph.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub state: Var,
    pub degradation: Var,
    pub forecast: Var,
    pub rul: Var,
}

/// Plain values of the four components plus the total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValues {
    pub state: f64,
    pub degradation: f64,
    pub forecast: f64,
    pub rul: f64,
    pub total: f64,
}

fn mask_total(mask: &[Vec<f64>]) -> f64 {
    mask.iter().flatten().sum()
}

/// Masked sparse categorical cross-entropy over `H` steps of
/// `[batch, K]` logits, averaged over every valid (sample, step) pair.
/// `targets[h][b]`, `mask[h][b]`.
pub fn state_loss(g: &mut Graph, logits: &[Var], targets: &[Vec<usize>], mask: &[Vec<f64>]) -> Result<Var> {
    let total = mask_total(mask);
    if total <= 0.0 {
        return Err(MafnError::Contract("state loss with an all-zero mask".into()));
    }
    if logits.len() != targets.len() || logits.len() != mask.len() {
        return Err(MafnError::Contract("state loss: horizon lengths differ".into()));
    }
    let stacked = g.concat(logits, 0)?;
    let (rows, k) = g.value(stacked).dims2();
    let mut select = vec![0.0; rows * k];
    let mut r = 0;
    for (tgt, m) in targets.iter().zip(mask) {
        for (&c, &w) in tgt.iter().zip(m) {
            if c >= k {
                return Err(MafnError::Contract(format!("state target {c} outside [0, {k})")));
            }
            select[r * k + c] = w / total;
            r += 1;
        }
    }
    if r != rows {
        return Err(MafnError::Contract("state loss: batch sizes differ".into()));
    }
    let logp = g.log_softmax(stacked)?;
    let sel = g.constant(Tensor::new(vec![rows, k], select)?);
    let picked = g.mul(logp, sel)?;
    let s = g.sum(picked)?;
    Ok(g.neg(s)?)
}

/// Monotonicity plus smoothness penalty on the scalar trend `[batch, H]`,
/// divided by `H - 1` and averaged over the batch.
pub fn degradation_loss(g: &mut Graph, trend: Var, lambda_smooth: f64) -> Result<Var> {
    let (batch, h) = g.value(trend).dims2();
    if h < 2 {
        return Err(MafnError::Contract(format!("degradation loss needs H >= 2, got {h}")));
    }
    let next = g.slice_cols(trend, 1, h - 1)?;
    let prev = g.slice_cols(trend, 0, h - 1)?;
    let diff = g.sub(next, prev)?;
    let drop = g.neg(diff)?;
    let reversal = g.relu(drop)?;
    let mono = g.sum(reversal)?;
    let sq = g.square(diff)?;
    let smooth = g.sum(sq)?;
    let smooth = g.scale(smooth, lambda_smooth)?;
    let both = g.add(mono, smooth)?;
    Ok(g.scale(both, 1.0 / ((h - 1) as f64 * batch as f64))?)
}

/// Masked squared error: per step the squared error is summed over
/// sensor channels, then averaged over valid (sample, step) pairs.
/// `pred[h]` is `[batch, d_s]`, `target[h]` a constant of the same shape.
pub fn forecast_loss(g: &mut Graph, pred: &[Var], target: &[Var], mask: &[Vec<f64>]) -> Result<Var> {
    let total = mask_total(mask);
    if total <= 0.0 {
        return Err(MafnError::Contract("forecast loss with an all-zero mask".into()));
    }
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(MafnError::Contract("forecast loss: horizon lengths differ".into()));
    }
    let p = g.concat(pred, 0)?;
    let y = g.concat(target, 0)?;
    let rows = g.value(p).dims2().0;
    let weights: Vec<f64> = mask.iter().flatten().copied().collect();
    if weights.len() != rows {
        return Err(MafnError::Contract("forecast loss: mask does not match batch".into()));
    }
    let m = g.constant(Tensor::new(vec![rows, 1], weights)?);
    let diff = g.sub(p, y)?;
    // masked entries are zeroed before squaring so garbage there cannot leak
    let diff = g.mul(diff, m)?;
    let sq = g.square(diff)?;
    let s = g.sum(sq)?;
    Ok(g.scale(s, 1.0 / total)?)
}

/// Asymmetric squared error, `[batch, 1]` predictions and targets.
pub fn rul_loss(g: &mut Graph, pred: Var, target: Var, lambda_late: f64, lambda_early: f64) -> Result<Var> {
    let n = g.value(pred).len();
    if n == 0 || g.value(target).len() != n {
        return Err(MafnError::Contract(
            "rul loss: batch lengths differ or are empty".into(),
        ));
    }
    let d = g.sub(pred, target)?;
    let late = g.relu(d)?;
    let late = g.square(late)?;
    let late = g.sum(late)?;
    let nd = g.neg(d)?;
    let early = g.relu(nd)?;
    let early = g.square(early)?;
    let early = g.sum(early)?;
    let late = g.scale(late, lambda_late)?;
    let early = g.scale(early, lambda_early)?;
    let both = g.add(late, early)?;
    Ok(g.scale(both, 1.0 / n as f64)?)
}

/// Weighted sum of the component losses. Fails on a non-finite component,
/// naming it.
pub fn total_loss(g: &mut Graph, parts: &LossVars, w: &LossWeights) -> Result<Var> {
    let named = [
        ("state", parts.state, w.w_state),
        ("degradation", parts.degradation, w.w_degradation),
        ("forecast", parts.forecast, w.w_forecast),
        ("rul", parts.rul, w.w_rul),
    ];
    let mut acc: Option<Var> = None;
    for (name, v, weight) in named {
        let value = g.value(v).item()?;
        if !value.is_finite() {
            return Err(MafnError::Numeric(format!("{name} loss is {value}")));
        }
        let term = g.scale(v, weight)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("four components"))
}

/// Plain-number form of [`total_loss`].
pub fn total_loss_value(parts: [f64; 4], w: &LossWeights) -> Result<f64> {
    for (name, v) in ["state", "degradation", "forecast", "rul"].iter().zip(parts) {
        if !v.is_finite() {
            return Err(MafnError::Numeric(format!("{name} loss is {v}")));
        }
    }
    Ok(w.w_state * parts[0] + w.w_degradation * parts[1] + w.w_forecast * parts[2] + w.w_rul * parts[3])
}

// ---- single-sample helpers ---------------------------------------------

fn mask_f(mask: &[bool]) -> Vec<Vec<f64>> {
    mask.iter().map(|&m| vec![if m { 1.0 } else { 0.0 }]).collect()
}

/// `logits[h]` has K entries.
pub fn state_loss_value(logits: &[Vec<f64>], targets: &[usize], mask: &[bool]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = logits
        .iter()
        .map(|l| Ok(g.constant(Tensor::new(vec![1, l.len()], l.clone())?)))
        .collect::<Result<_>>()?;
    let t: Vec<Vec<usize>> = targets.iter().map(|&c| vec![c]).collect();
    let v = state_loss(&mut g, &vars, &t, &mask_f(mask))?;
    Ok(g.value(v).item()?)
}

pub fn degradation_loss_value(trend: &[f64], lambda_smooth: f64) -> Result<f64> {
    if trend.len() < 2 {
        return Err(MafnError::Contract(format!(
            "degradation loss needs H >= 2, got {}",
            trend.len()
        )));
    }
    let mut g = Graph::new();
    let t = g.constant(Tensor::new(vec![1, trend.len()], trend.to_vec())?);
    let v = degradation_loss(&mut g, t, lambda_smooth)?;
    Ok(g.value(v).item()?)
}

/// `pred[h]` and `target[h]` have `d_s` entries.
pub fn forecast_loss_value(pred: &[Vec<f64>], target: &[Vec<f64>], mask: &[bool]) -> Result<f64> {
    let mut g = Graph::new();
    let mut to_vars = |rows: &[Vec<f64>]| -> Result<Vec<Var>> {
        rows.iter()
            .map(|r| Ok(g.constant(Tensor::new(vec![1, r.len()], r.clone())?)))
            .collect()
    };
    let p = to_vars(pred)?;
    let y = to_vars(target)?;
    let v = forecast_loss(&mut g, &p, &y, &mask_f(mask))?;
    Ok(g.value(v).item()?)
}

pub fn rul_loss_value(pred: &[f64], target: &[f64], lambda_late: f64, lambda_early: f64) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(MafnError::Contract(
            "rul loss: batch lengths differ or are empty".into(),
        ));
    }
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(vec![pred.len(), 1], pred.to_vec())?);
    let y = g.constant(Tensor::new(vec![target.len(), 1], target.to_vec())?);
    let v = rul_loss(&mut g, p, y, lambda_late, lambda_early)?;
    Ok(g.value(v).item()?)
}
