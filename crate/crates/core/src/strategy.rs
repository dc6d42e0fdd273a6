//! Named, swappable RUL estimators and forecasters.
//!
//! Evaluation and the CLI look strategies up by name, so baselines and the
//! network go through the same code path.

use std::collections::BTreeMap;

use crate::checkpoint::Checkpoint;
use crate::data::SensorRecord;
use crate::error::{MafnError, Result};
use crate::pipeline::Predictor;

pub trait RulEstimator {
    fn name(&self) -> &'static str;

    /// Shortest history the estimator accepts.
    fn min_history(&self) -> usize {
        1
    }

    /// One estimate per history (raw, sensor-selected cycles).
    fn estimate(&self, histories: &[SensorRecord]) -> Result<Vec<f64>>;
}

pub trait Forecaster {
    fn name(&self) -> &'static str;

    /// `horizon × sensors` predictions in sensor units for each history.
    fn forecast(&self, histories: &[SensorRecord], horizon: usize) -> Result<Vec<Vec<Vec<f64>>>>;
}

/// What a strategy may draw on when it is built.
#[derive(Debug, Clone, Default)]
pub struct StrategyContext {
    pub checkpoint: Option<Checkpoint>,
    /// Total run length per unit, for the oracle.
    pub lifetimes: BTreeMap<u32, usize>,
    pub rul_cap: f64,
    /// Value returned by the constant baseline.
    pub constant_rul: f64,
}

type Factory<T> = fn(&StrategyContext) -> Result<Box<T>>;

/// Name → constructor table.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, f: Factory<T>) {
        self.entries.insert(name, f);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn build(&self, name: &str, ctx: &StrategyContext) -> Result<Box<T>> {
        let f = self.entries.get(name).ok_or_else(|| {
            MafnError::Config(format!(
                "unknown {} `{name}`; available: {}",
                self.kind,
                self.names().join(", ")
            ))
        })?;
        f(ctx)
    }
}

fn predictor(ctx: &StrategyContext) -> Result<Predictor> {
    let ckpt = ctx
        .checkpoint
        .as_ref()
        .ok_or_else(|| MafnError::Config("this strategy needs a checkpoint".into()))?;
    Predictor::new(ckpt)
}

pub fn rul_estimators() -> Registry<dyn RulEstimator> {
    let mut r: Registry<dyn RulEstimator> = Registry::new("RUL estimator");
    r.register("mafn", |ctx| Ok(Box::new(MafnRul(predictor(ctx)?))));
    r.register("constant", |ctx| Ok(Box::new(ConstantRul(ctx.constant_rul))));
    r.register("oracle", |ctx| {
        Ok(Box::new(OracleRul {
            lifetimes: ctx.lifetimes.clone(),
            cap: ctx.rul_cap,
        }))
    });
    r
}

pub fn forecasters() -> Registry<dyn Forecaster> {
    let mut r: Registry<dyn Forecaster> = Registry::new("forecaster");
    r.register("mafn", |ctx| Ok(Box::new(MafnForecaster(predictor(ctx)?))));
    r.register("persistence", |_| Ok(Box::new(Persistence)));
    r
}

pub struct MafnRul(pub Predictor);

impl RulEstimator for MafnRul {
    fn name(&self) -> &'static str {
        "mafn"
    }

    fn min_history(&self) -> usize {
        self.0.min_history()
    }

    fn estimate(&self, histories: &[SensorRecord]) -> Result<Vec<f64>> {
        self.0.predict_rul_many(histories)
    }
}

/// Predicts the same value for every engine.
pub struct ConstantRul(pub f64);

impl RulEstimator for ConstantRul {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn estimate(&self, histories: &[SensorRecord]) -> Result<Vec<f64>> {
        Ok(vec![self.0; histories.len()])
    }
}

/// Knows each unit's full life; returns the capped true residual.
pub struct OracleRul {
    pub lifetimes: BTreeMap<u32, usize>,
    pub cap: f64,
}

impl RulEstimator for OracleRul {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn estimate(&self, histories: &[SensorRecord]) -> Result<Vec<f64>> {
        histories
            .iter()
            .map(|h| {
                let life = self
                    .lifetimes
                    .get(&h.unit_id)
                    .ok_or_else(|| MafnError::Contract(format!("oracle has no lifetime for unit {}", h.unit_id)))?;
                Ok((life.saturating_sub(h.len()) as f64).min(self.cap))
            })
            .collect()
    }
}

pub struct MafnForecaster(pub Predictor);

impl Forecaster for MafnForecaster {
    fn name(&self) -> &'static str {
        "mafn"
    }

    fn forecast(&self, histories: &[SensorRecord], horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        Ok(self
            .0
            .forecast_many(histories, horizon)?
            .into_iter()
            .map(|f| f.sensors)
            .collect())
    }
}

/// Repeats the last observed cycle.
pub struct Persistence;

impl Forecaster for Persistence {
    fn name(&self) -> &'static str {
        "persistence"
    }

    fn forecast(&self, histories: &[SensorRecord], horizon: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        histories
            .iter()
            .map(|h| {
                let last = h
                    .sensors
                    .last()
                    .ok_or_else(|| MafnError::Contract(format!("unit {} has an empty history", h.unit_id)))?;
                Ok(vec![last.clone(); horizon])
            })
            .collect()
    }
}
