//! Mini-batch training with Adam, global-norm clipping and early stopping.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mafn_tensor::{Graph, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::WindowSample;
use crate::error::{MafnError, Result};
use crate::model::{batch_losses, make_batch, FusionStates, LossSetup, Mafn};
use crate::nn::Bound;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = |t: &mafn_tensor::Tensor| vec![0.0; t.len()];
        Self {
            m: params.iter().map(|(n, t)| (n.to_string(), zeros(t))).collect(),
            v: params.iter().map(|(n, t)| (n.to_string(), zeros(t))).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored on `params`.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, h: &AdamHyper) -> Result<()> {
    for (name, t) in params.iter() {
        if t.grad().is_none() {
            return Err(MafnError::Contract(format!("adam: parameter `{name}` has no gradient")));
        }
    }
    state.step += 1;
    let step = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(step);
    let c2 = 1.0 - h.beta2.powi(step);
    for (name, t) in params.iter_mut() {
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; t.len()]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; t.len()]);
        if m.len() != t.len() || v.len() != t.len() {
            return Err(MafnError::Contract(format!("adam: moment shape mismatch for `{name}`")));
        }
        let g = t.grad().map(<[f64]>::to_vec).unwrap_or_default();
        let data = t.data_mut();
        for i in 0..data.len() {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            data[i] -= h.lr * mh / (vh.sqrt() + h.eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum();
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for (_, t) in params.iter_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|x| *x *= k);
            }
        }
    }
    norm
}

/// Splits engine ids into (train, validation) with a seeded shuffle. At
/// least one engine lands on each side.
pub fn split_engines(ids: &[u32], fraction: f64, seed: u64) -> Result<(Vec<u32>, Vec<u32>)> {
    let mut ids: Vec<u32> = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(MafnError::Data(format!(
            "need at least 2 engines for a train/validation split, found {}",
            ids.len()
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MafnError::Config(format!(
            "validation_fraction {fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_val = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len() - 1);
    let mut val = ids.split_off(ids.len() - n_val);
    ids.sort_unstable();
    val.sort_unstable();
    Ok((ids, val))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub state: f64,
    pub degradation: f64,
    pub forecast: f64,
    pub rul: f64,
    pub total: f64,
    pub val_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

pub const LOG_HEADER: &str = "epoch,L_state,L_degradation,L_forecast,L_RUL,L_total,val_total";

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?},{:?}",
                e.epoch, e.state, e.degradation, e.forecast, e.rul, e.total, e.val_total
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ParamStore,
    pub log: TrainingLog,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
}

/// Component means over a set of windows, weighted by batch size.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossSums {
    pub state: f64,
    pub degradation: f64,
    pub forecast: f64,
    pub rul: f64,
    pub total: f64,
    pub windows: usize,
}

impl LossSums {
    fn add(&mut self, g: &Graph, parts: &crate::loss::LossVars, total: mafn_tensor::Var, n: usize) {
        let v = |x| g.value(x).data()[0] * n as f64;
        self.state += v(parts.state);
        self.degradation += v(parts.degradation);
        self.forecast += v(parts.forecast);
        self.rul += v(parts.rul);
        self.total += v(total);
        self.windows += n;
    }

    fn means(&self) -> [f64; 5] {
        let n = self.windows.max(1) as f64;
        [
            self.state / n,
            self.degradation / n,
            self.forecast / n,
            self.rul / n,
            self.total / n,
        ]
    }
}

fn batch_error(epoch: usize, batch: usize, e: MafnError) -> MafnError {
    match e {
        MafnError::Numeric(msg) => MafnError::Numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
        MafnError::Tensor(mafn_tensor::TensorError::Numeric { op, detail }) => {
            MafnError::Numeric(format!("epoch {epoch}, batch {batch}: {op}: {detail}"))
        }
        other => other,
    }
}

/// Teacher-forced losses over `samples` without updating anything.
pub fn evaluate_losses(
    model: &Mafn,
    params: &ParamStore,
    samples: &[WindowSample],
    setup: &LossSetup,
    batch_size: usize,
) -> Result<LossSums> {
    let mut sums = LossSums::default();
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let (inputs, targets) = make_batch(&refs)?;
        let mut g = Graph::new();
        let mut p = Bound::new(params);
        let vars = model.forward(&mut g, &mut p, &inputs, FusionStates::Teacher(&targets.future_states))?;
        let (parts, total) = batch_losses(&mut g, &vars, &targets, setup)?;
        sums.add(&g, &parts, total, chunk.len());
    }
    Ok(sums)
}

/// One optimizer step on a batch. Returns the batch's loss values.
pub fn train_step(
    model: &Mafn,
    params: &mut ParamStore,
    adam: &mut AdamState,
    batch: &[&WindowSample],
    setup: &LossSetup,
    hyper: &AdamHyper,
    grad_clip: f64,
) -> Result<LossSums> {
    let (inputs, targets) = make_batch(batch)?;
    let mut g = Graph::new();
    let mut sums = LossSums::default();
    {
        let mut p = Bound::new(params);
        let vars = model.forward(&mut g, &mut p, &inputs, FusionStates::Teacher(&targets.future_states))?;
        let (parts, total) = batch_losses(&mut g, &vars, &targets, setup)?;
        sums.add(&g, &parts, total, batch.len());
        g.backward(total)?;
    }
    params.zero_grads();
    params.accumulate(g.bound_grads())?;
    // parameters the loss does not reach have an exact zero gradient
    for (_, t) in params.iter_mut() {
        if t.grad().is_none() {
            let zeros = vec![0.0; t.len()];
            t.accumulate_grad(&zeros)?;
        }
    }
    for (name, t) in params.iter() {
        if t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(MafnError::Numeric(format!("non-finite gradient for `{name}`")));
        }
    }
    clip_grad_norm(params, grad_clip);
    adam_step(params, adam, hyper)?;
    Ok(sums)
}

/// Runs the full training loop. `init` is consumed as the starting point.
pub fn train(
    model: &Mafn,
    init: ParamStore,
    train_set: &[WindowSample],
    validation: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(MafnError::Data("no training windows".into()));
    }
    if validation.is_empty() {
        return Err(MafnError::Data("no validation windows".into()));
    }
    let setup = LossSetup::from_config(cfg);
    let hyper = AdamHyper::from_config(cfg);
    let mut params = init;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut log = TrainingLog::default();
    let mut best = (params.clone(), 0usize, f64::INFINITY);
    let mut stale = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = LossSums::default();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let s = train_step(model, &mut params, &mut adam, &batch, &setup, &hyper, cfg.grad_clip)
                .map_err(|e| batch_error(epoch, b + 1, e))?;
            sums.state += s.state;
            sums.degradation += s.degradation;
            sums.forecast += s.forecast;
            sums.rul += s.rul;
            sums.total += s.total;
            sums.windows += s.windows;
        }
        let val = evaluate_losses(model, &params, validation, &setup, cfg.batch_size)
            .map_err(|e| batch_error(epoch, 0, e))?;
        let [state, degradation, forecast, rul, total] = sums.means();
        let val_total = val.means()[4];
        log.epochs.push(EpochLog {
            epoch,
            state,
            degradation,
            forecast,
            rul,
            total,
            val_total,
        });
        log::info!("epoch {epoch}: train {total:.6} val {val_total:.6}");
        if val_total < best.2 {
            best = (params.clone(), epoch, val_total);
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (params, best_epoch, best_val) = best;
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
        best_val,
        stopped_early,
    })
}
