//! Synthetic run-to-failure data with known decomposition.
//!
//! Each informative sensor reads `base + gain · trend(t) + offset[state(t)] + noise`.
//! States follow a square wave with a per-engine phase; each state has its
//! own operating settings so clustering can recover it. The ten channels
//! that sensor selection drops stay constant.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CycleRow, EngineRecord, NUM_SENSORS, SELECTED_SENSORS};
use crate::error::{MafnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrendShape {
    /// `amplitude · t / life`
    Linear { amplitude: f64 },
    /// `amplitude · (e^{rate·t/life} − 1) / (e^{rate} − 1)`
    Exponential { amplitude: f64, rate: f64 },
}

impl TrendShape {
    /// Trend at cycle `t` (1-based) of a `life`-cycle run.
    pub fn at(&self, t: usize, life: usize) -> f64 {
        let u = t as f64 / life as f64;
        match *self {
            TrendShape::Linear { amplitude } => amplitude * u,
            TrendShape::Exponential { amplitude, rate } => amplitude * ((rate * u).exp() - 1.0) / (rate.exp() - 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub engines: usize,
    /// Additive shift per state; its length is the number of states.
    pub offsets: Vec<f64>,
    /// Cycles spent in a state before switching to the next.
    pub state_period: usize,
    pub trend: TrendShape,
    pub noise_sigma: f64,
    pub life_min: usize,
    pub life_max: usize,
    /// Per informative channel; 11 entries.
    pub gains: Vec<f64>,
    /// Per informative channel; 11 entries.
    pub bases: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            engines: 40,
            offsets: vec![-1.0, 1.0],
            state_period: 5,
            trend: TrendShape::Linear { amplitude: 2.0 },
            noise_sigma: 0.05,
            life_min: 150,
            life_max: 250,
            gains: vec![1.0; SELECTED_SENSORS.len()],
            bases: vec![0.0; SELECTED_SENSORS.len()],
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MafnError::Config(format!("synthetic spec: {m}")));
        if self.engines == 0 {
            return bad("engines must be positive".into());
        }
        if self.offsets.is_empty() {
            return bad("offsets needs one entry per state".into());
        }
        if self.state_period == 0 {
            return bad("state_period must be positive".into());
        }
        if self.life_min < 2 || self.life_max < self.life_min {
            return bad(format!("life range [{}, {}] is invalid", self.life_min, self.life_max));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma {} must be finite and nonnegative",
                self.noise_sigma
            ));
        }
        let n = SELECTED_SENSORS.len();
        if self.gains.len() != n || self.bases.len() != n {
            return bad(format!("gains and bases need {n} entries each"));
        }
        if let TrendShape::Exponential { rate, .. } = self.trend {
            if rate == 0.0 || !rate.is_finite() {
                return bad("exponential trend needs a finite nonzero rate".into());
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| MafnError::Config(format!("synthetic spec: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn num_states(&self) -> usize {
        self.offsets.len()
    }

    /// Operating settings that identify state `k`.
    pub fn settings_for(k: usize) -> [f64; 3] {
        [10.0 * k as f64, 0.1 * k as f64, 100.0 - 20.0 * k as f64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub unit: u32,
    pub cycle: u32,
    pub state: usize,
    pub trend: f64,
    pub rul: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub records: Vec<EngineRecord>,
    pub truth: Vec<TruthRow>,
}

/// Value of the constant channels.
const FLAT_SENSOR: f64 = 1.0;

pub fn synthesize(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| MafnError::Config(format!("noise: {e}")))?;
    let k = spec.num_states();
    let mut records = Vec::with_capacity(spec.engines);
    let mut truth = Vec::new();
    for e in 0..spec.engines {
        let unit = e as u32 + 1;
        let life = rng.gen_range(spec.life_min..=spec.life_max);
        let phase = rng.gen_range(0..spec.state_period * k);
        let mut cycles = Vec::with_capacity(life);
        for t in 1..=life {
            let state = ((t - 1 + phase) / spec.state_period) % k;
            let trend = spec.trend.at(t, life);
            let mut sensors = [FLAT_SENSOR; NUM_SENSORS];
            for (i, &s) in SELECTED_SENSORS.iter().enumerate() {
                let eps = if spec.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                sensors[s - 1] = spec.bases[i] + spec.gains[i] * trend + spec.offsets[state] + eps;
            }
            cycles.push(CycleRow {
                cycle: t as u32,
                settings: SynthSpec::settings_for(state),
                sensors,
            });
            truth.push(TruthRow {
                unit,
                cycle: t as u32,
                state,
                trend,
                rul: life - t,
            });
        }
        records.push(EngineRecord { unit_id: unit, cycles });
    }
    Ok(SynthDataset { records, truth })
}

pub const TRUTH_HEADER: &str = "unit,cycle,state,trend,rul";

pub fn truth_csv(rows: &[TruthRow]) -> String {
    let mut s = String::from(TRUTH_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:?},{}", r.unit, r.cycle, r.state, r.trend, r.rul);
    }
    s
}
