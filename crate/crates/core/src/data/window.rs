//! Sliding windows with targets for all four heads.

use serde::{Deserialize, Serialize};

use super::cmapss::SensorRecord;
use crate::cluster::ClusterModel;
use crate::error::{MafnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window: usize,
    pub horizon: usize,
    pub stride: usize,
    pub rul_cap: f64,
}

impl WindowSpec {
    pub fn from_config(cfg: &crate::config::TrainConfig) -> Self {
        Self {
            window: cfg.window,
            horizon: cfg.horizon,
            stride: cfg.stride,
            rul_cap: cfg.rul_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    /// `window × channels`, normalized.
    pub inputs: Vec<Vec<f64>>,
    /// Operating state of each input cycle.
    pub input_states: Vec<usize>,
    /// Operating states of the `horizon` cycles after the cutoff; 0 where masked.
    pub future_states: Vec<usize>,
    /// Normalized readings after the cutoff; zeros where masked.
    pub future_sensors: Vec<Vec<f64>>,
    /// `true` where the run actually covers that horizon step.
    pub mask: Vec<bool>,
    /// `min(failure_cycle - cutoff, rul_cap)`.
    pub rul: f64,
    pub unit_id: u32,
    /// 1-based index of the last input cycle.
    pub cutoff: usize,
}

impl WindowSample {
    pub fn valid_steps(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Number of windows `make_windows` produces for a run of `len` cycles.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window || stride == 0 {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// Cuts one window per cutoff `window, window + stride, ...` up to the
/// last cycle. State targets come from clustering the true future
/// operating settings. Runs shorter than the window yield no samples.
pub fn make_windows(record: &SensorRecord, clusters: &ClusterModel, spec: &WindowSpec) -> Result<Vec<WindowSample>> {
    if spec.window == 0 || spec.horizon == 0 || spec.stride == 0 {
        return Err(MafnError::Contract(
            "window, horizon and stride must be positive".into(),
        ));
    }
    let states = clusters.assign_all(&record.settings)?;
    make_windows_with_states(record, &states, spec)
}

/// As [`make_windows`] with precomputed per-cycle states.
pub fn make_windows_with_states(
    record: &SensorRecord,
    states: &[usize],
    spec: &WindowSpec,
) -> Result<Vec<WindowSample>> {
    let len = record.len();
    if states.len() != len {
        return Err(MafnError::Contract(format!(
            "{} states for a {len}-cycle record",
            states.len()
        )));
    }
    let channels = record.channels();
    let mut out = Vec::with_capacity(window_count(len, spec.window, spec.stride));
    let mut cutoff = spec.window;
    while cutoff <= len {
        let start = cutoff - spec.window;
        let mut future_states = vec![0; spec.horizon];
        let mut future_sensors = vec![vec![0.0; channels]; spec.horizon];
        let mut mask = vec![false; spec.horizon];
        for h in 0..spec.horizon {
            let t = cutoff + h;
            if t < len {
                future_states[h] = states[t];
                future_sensors[h] = record.sensors[t].clone();
                mask[h] = true;
            }
        }
        out.push(WindowSample {
            inputs: record.sensors[start..cutoff].to_vec(),
            input_states: states[start..cutoff].to_vec(),
            future_states,
            future_sensors,
            mask,
            rul: ((len - cutoff) as f64).min(spec.rul_cap),
            unit_id: record.unit_id,
            cutoff,
        });
        cutoff += spec.stride;
    }
    Ok(out)
}

/// A run cut short for evaluation, with its true remaining life.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncated {
    pub record: SensorRecord,
    pub kept: usize,
    /// `len - kept`, uncapped.
    pub residual: usize,
}

/// Keeps the first `floor(pct · len)` cycles.
pub fn truncate_at_fraction(record: &SensorRecord, pct: f64) -> Result<Truncated> {
    if !(pct > 0.0 && pct < 1.0) {
        return Err(MafnError::Contract(format!("cutoff fraction {pct} outside (0, 1)")));
    }
    let len = record.len();
    // the tiny offset keeps e.g. 0.29 * 100 from flooring to 28
    let kept = ((pct * len as f64) + 1e-9).floor() as usize;
    let kept = kept.min(len);
    Ok(Truncated {
        record: record.prefix(kept),
        kept,
        residual: len - kept,
    })
}
