//! Evaluation scenarios: truncation at fixed cutoffs, and a provided test
//! set with its RUL file.

use std::fmt::Write as _;

use mafn_tensor::ParamStore;

use crate::data::{truncate_at_fraction, SensorRecord, WindowSample};
use crate::error::{MafnError, Result};
use crate::metrics::MetricSet;
use crate::model::Mafn;
use crate::strategy::RulEstimator;

/// 10%, 20%, ..., 90%.
pub const CUTOFF_PCTS: [u32; 9] = [10, 20, 30, 40, 50, 60, 70, 80, 90];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffRow {
    pub cutoff_pct: u32,
    pub rmse: f64,
    pub re: f64,
    pub score: f64,
    pub engines: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffReport {
    pub rows: Vec<CutoffRow>,
    /// Truncated histories too short for the estimator.
    pub skipped: usize,
}

impl CutoffReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cutoff_pct,rmse,re,score\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", r.cutoff_pct, r.rmse, r.re, r.score);
        }
        s
    }

    pub fn row(&self, pct: u32) -> Option<&CutoffRow> {
        self.rows.iter().find(|r| r.cutoff_pct == pct)
    }
}

/// Truncates every run-to-failure record at each cutoff and scores the
/// estimator against `min(remaining cycles, rul_cap)`.
pub fn evaluate_cutoffs(est: &dyn RulEstimator, engines: &[SensorRecord], rul_cap: f64) -> Result<CutoffReport> {
    if engines.is_empty() {
        return Err(MafnError::Data("no engines to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(CUTOFF_PCTS.len());
    let mut skipped = 0;
    for pct in CUTOFF_PCTS {
        let mut histories = Vec::new();
        let mut truth = Vec::new();
        for e in engines {
            let t = truncate_at_fraction(e, pct as f64 / 100.0)?;
            if t.kept < est.min_history().max(1) {
                skipped += 1;
                continue;
            }
            truth.push((t.residual as f64).min(rul_cap));
            histories.push(t.record);
        }
        if histories.is_empty() {
            return Err(MafnError::Data(format!(
                "every engine is too short for the estimator at the {pct}% cutoff"
            )));
        }
        let pred = est.estimate(&histories)?;
        let m = MetricSet::compute(&pred, &truth)?;
        rows.push(CutoffRow {
            cutoff_pct: pct,
            rmse: m.rmse,
            re: m.re,
            score: m.score,
            engines: histories.len(),
        });
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} truncated histories shorter than the estimator accepts");
    }
    Ok(CutoffReport { rows, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestSetRow {
    pub rmse: f64,
    pub score: f64,
    pub engines: usize,
}

impl TestSetRow {
    pub fn to_csv(&self) -> String {
        format!("rmse,score\n{:?},{:?}\n", self.rmse, self.score)
    }
}

/// Scores the estimator on truncated test histories against the RUL file,
/// capped at `rul_cap` like the training targets.
pub fn evaluate_testset(
    est: &dyn RulEstimator,
    histories: &[SensorRecord],
    rul: &[f64],
    rul_cap: f64,
) -> Result<TestSetRow> {
    if histories.len() != rul.len() {
        return Err(MafnError::Data(format!(
            "{} test engines but {} RUL values",
            histories.len(),
            rul.len()
        )));
    }
    if histories.is_empty() {
        return Err(MafnError::Data("empty test set".into()));
    }
    let truth: Vec<f64> = rul.iter().map(|r| r.min(rul_cap)).collect();
    let pred = est.estimate(histories)?;
    let m = MetricSet::compute(&pred, &truth)?;
    Ok(TestSetRow {
        rmse: m.rmse,
        score: m.score,
        engines: histories.len(),
    })
}

/// Tolerance of the trend monotonicity check.
pub const MONOTONE_TOL: f64 = 1e-3;

/// How well the heads recover the signal decomposition on held-out windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionReport {
    /// Predicted future state equals the true one, over valid steps.
    pub state_accuracy: f64,
    /// Windows whose scalar trend never drops by more than `MONOTONE_TOL`.
    pub monotone_fraction: f64,
    /// Mean squared error of the fused forecast over valid steps and channels.
    pub forecast_mse: f64,
    /// Same, repeating the last input cycle.
    pub persistence_mse: f64,
    pub windows: usize,
}

impl DecompositionReport {
    pub fn to_csv(&self) -> String {
        format!(
            "state_accuracy,monotone_fraction,forecast_mse,persistence_mse,windows\n{:?},{:?},{:?},{:?},{}\n",
            self.state_accuracy, self.monotone_fraction, self.forecast_mse, self.persistence_mse, self.windows
        )
    }

    /// `1 - forecast_mse / persistence_mse`.
    pub fn forecast_gain(&self) -> f64 {
        1.0 - self.forecast_mse / self.persistence_mse
    }
}

pub fn evaluate_decomposition(
    model: &Mafn,
    params: &ParamStore,
    windows: &[WindowSample],
) -> Result<DecompositionReport> {
    let mut steps = 0usize;
    let mut correct = 0usize;
    let mut monotone = 0usize;
    let mut se = 0.0;
    let mut se_persist = 0.0;
    let mut cells = 0usize;
    for chunk in windows.chunks(256) {
        let refs: Vec<(&[Vec<f64>], &[usize])> = chunk
            .iter()
            .map(|w| (w.inputs.as_slice(), w.input_states.as_slice()))
            .collect();
        let outs = model.predict(params, &refs)?;
        for (w, o) in chunk.iter().zip(&outs) {
            if o.degradation.windows(2).all(|d| d[1] >= d[0] - MONOTONE_TOL) {
                monotone += 1;
            }
            let last = w
                .inputs
                .last()
                .ok_or_else(|| MafnError::Contract("empty input window".into()))?;
            for h in (0..w.mask.len()).filter(|&h| w.mask[h]) {
                steps += 1;
                correct += usize::from(o.predicted_states[h] == w.future_states[h]);
                for (c, &y) in w.future_sensors[h].iter().enumerate() {
                    se += (o.forecast[h][c] - y).powi(2);
                    se_persist += (last[c] - y).powi(2);
                    cells += 1;
                }
            }
        }
    }
    if steps == 0 {
        return Err(MafnError::Data("no valid horizon steps to evaluate".into()));
    }
    Ok(DecompositionReport {
        state_accuracy: correct as f64 / steps as f64,
        monotone_fraction: monotone as f64 / windows.len() as f64,
        forecast_mse: se / cells as f64,
        persistence_mse: se_persist / cells as f64,
        windows: windows.len(),
    })
}
