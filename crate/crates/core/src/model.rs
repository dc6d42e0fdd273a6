//! The multi-head attention fusion network.
//!
//! Shared encoder: state embedding, Conv1D, BiLSTM and attention produce a
//! context vector. Four heads hang off it: a state decoder (K logits per
//! horizon step), a degradation decoder (trend vectors plus a scalar trend),
//! a fusion stack forecasting the sensors from trend vector + state
//! embedding, and a dense RUL regressor.

use mafn_tensor::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::WindowSample;
use crate::error::{MafnError, Result};
use crate::loss::{self, LossVars, LossWeights};
use crate::nn::{Activation, Attention, BiLstm, Bound, Conv1d, Dense, Embedding, LstmCell};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MafnDims {
    pub sensors: usize,
    pub states: usize,
    pub window: usize,
    pub horizon: usize,
    pub embed_dim: usize,
    pub conv_kernel: usize,
    pub conv_filters: usize,
    pub lstm_hidden: usize,
    pub attention_dim: usize,
    pub decoder_hidden: usize,
    pub trend_dim: usize,
    pub fusion_widths: Vec<usize>,
    pub rul_hidden: [usize; 2],
    /// The RUL head's linear output is multiplied by this (the RUL cap),
    /// so a unit output corresponds to a capped life.
    pub rul_scale: f64,
}

impl MafnDims {
    pub fn from_config(cfg: &TrainConfig, sensors: usize) -> Self {
        Self {
            sensors,
            states: cfg.num_states,
            window: cfg.window,
            horizon: cfg.horizon,
            embed_dim: cfg.embed_dim,
            conv_kernel: cfg.conv_kernel,
            conv_filters: cfg.conv_filters,
            lstm_hidden: cfg.lstm_hidden,
            attention_dim: cfg.attention_dim,
            decoder_hidden: cfg.decoder_hidden,
            trend_dim: cfg.trend_dim,
            fusion_widths: cfg.fusion_widths.clone(),
            rul_hidden: cfg.rul_hidden,
            rul_scale: cfg.rul_cap,
        }
    }
}

/// LSTM decoder unrolled over the horizon. Its initial `(h, c)` are
/// linear projections of the context, which is also the input at every step.
#[derive(Debug, Clone, PartialEq)]
struct Decoder {
    init_h: Dense,
    init_c: Dense,
    cell: LstmCell,
}

impl Decoder {
    fn new(name: &str, context: usize, hidden: usize) -> Self {
        Self {
            init_h: Dense::new(format!("{name}.init_h"), context, hidden, Activation::Identity),
            init_c: Dense::new(format!("{name}.init_c"), context, hidden, Activation::Identity),
            cell: LstmCell {
                name: format!("{name}.lstm"),
                input: context,
                hidden,
            },
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.init_h.init(store, rng);
        self.init_c.init(store, rng);
        self.cell.init(store, rng);
    }

    fn unroll(&self, g: &mut Graph, p: &mut Bound, ctx: Var, steps: usize) -> Result<Vec<Var>> {
        let mut h = self.init_h.forward(g, p, ctx)?;
        let mut c = self.init_c.forward(g, p, ctx)?;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            (h, c) = self.cell.step(g, p, ctx, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mafn {
    pub dims: MafnDims,
    embedding: Embedding,
    conv: Conv1d,
    bilstm: BiLstm,
    attention: Attention,
    rul_layers: [Dense; 3],
    degradation: Decoder,
    trend_vector: Dense,
    trend_scalar: Dense,
    state_decoder: Decoder,
    state_logits: Dense,
    fusion: Vec<Dense>,
    fusion_out: Dense,
}

/// Model inputs for a batch of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInputs {
    /// One `[batch, sensors]` tensor per input step.
    pub sensors: Vec<Tensor>,
    /// `states[t][b]`
    pub states: Vec<Vec<usize>>,
}

impl BatchInputs {
    pub fn batch_size(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

/// Head targets for a batch of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTargets {
    /// `future_states[h][b]`
    pub future_states: Vec<Vec<usize>>,
    /// `mask[h][b]` in {0, 1}
    pub mask: Vec<Vec<f64>>,
    /// One `[batch, sensors]` tensor per horizon step.
    pub future_sensors: Vec<Tensor>,
    /// `[batch, 1]` capped RUL in cycles.
    pub rul: Tensor,
}

fn stack_rows(rows: impl Iterator<Item = Vec<f64>>, cols: usize) -> Result<Tensor> {
    let data: Vec<f64> = rows.flatten().collect();
    let n = data.len() / cols.max(1);
    Ok(Tensor::new(vec![n, cols], data)?)
}

pub fn batch_inputs(windows: &[(&[Vec<f64>], &[usize])]) -> Result<BatchInputs> {
    let Some(first) = windows.first() else {
        return Err(MafnError::Contract("empty batch".into()));
    };
    let steps = first.0.len();
    let channels = first.0.first().map_or(0, Vec::len);
    for (x, s) in windows {
        if x.len() != steps || s.len() != steps || x.iter().any(|r| r.len() != channels) {
            return Err(MafnError::Contract("ragged batch of windows".into()));
        }
    }
    let sensors = (0..steps)
        .map(|t| stack_rows(windows.iter().map(|w| w.0[t].clone()), channels))
        .collect::<Result<_>>()?;
    let states = (0..steps).map(|t| windows.iter().map(|w| w.1[t]).collect()).collect();
    Ok(BatchInputs { sensors, states })
}

pub fn make_batch(samples: &[&WindowSample]) -> Result<(BatchInputs, BatchTargets)> {
    let windows: Vec<(&[Vec<f64>], &[usize])> = samples
        .iter()
        .map(|s| (s.inputs.as_slice(), s.input_states.as_slice()))
        .collect();
    let inputs = batch_inputs(&windows)?;
    let horizon = samples[0].mask.len();
    let channels = samples[0].inputs[0].len();
    if samples.iter().any(|s| s.mask.len() != horizon) {
        return Err(MafnError::Contract("ragged horizon in batch".into()));
    }
    let targets = BatchTargets {
        future_states: (0..horizon)
            .map(|h| samples.iter().map(|s| s.future_states[h]).collect())
            .collect(),
        mask: (0..horizon)
            .map(|h| samples.iter().map(|s| if s.mask[h] { 1.0 } else { 0.0 }).collect())
            .collect(),
        future_sensors: (0..horizon)
            .map(|h| stack_rows(samples.iter().map(|s| s.future_sensors[h].clone()), channels))
            .collect::<Result<_>>()?,
        rul: Tensor::new(vec![samples.len(), 1], samples.iter().map(|s| s.rul).collect())?,
    };
    Ok((inputs, targets))
}

/// Which states feed the fusion head's embeddings.
#[derive(Debug, Clone, Copy)]
pub enum FusionStates<'a> {
    /// True future states, `[h][b]` (training).
    Teacher(&'a [Vec<usize>]),
    /// Argmax of the state head (inference).
    Predicted,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct MafnVars {
    /// `H` nodes of `[batch, K]`.
    pub state_logits: Vec<Var>,
    /// `H` nodes of `[batch, trend_dim]`.
    pub trend_vectors: Vec<Var>,
    /// `[batch, H]` scalar trend.
    pub trend: Var,
    /// `H` nodes of `[batch, sensors]`, normalized units.
    pub forecast: Vec<Var>,
    /// `[batch, 1]` raw head output before scaling.
    pub rul_unit: Var,
    /// `[batch, 1]` in cycles.
    pub rul: Var,
    /// `[batch, window]`
    pub attention: Var,
    /// States whose embeddings were fused, `[h][b]`.
    pub fused_states: Vec<Vec<usize>>,
    /// Width of each fusion input `f_t`.
    pub fusion_input_dim: usize,
}

/// Per-window values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MafnOutput {
    /// `H × K`
    pub state_logits: Vec<Vec<f64>>,
    /// `H`
    pub degradation: Vec<f64>,
    /// `H × trend_dim`
    pub trend_vectors: Vec<Vec<f64>>,
    /// `H × sensors`, normalized units
    pub forecast: Vec<Vec<f64>>,
    /// Cycles, unclamped.
    pub rul: f64,
    /// `window`
    pub attention_weights: Vec<f64>,
    /// Argmax state per horizon step.
    pub predicted_states: Vec<usize>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Mafn {
    pub fn new(dims: MafnDims) -> Result<Self> {
        if dims.horizon == 0 || dims.window == 0 || dims.sensors == 0 || dims.states == 0 {
            return Err(MafnError::Config("model dimensions must be positive".into()));
        }
        if dims.fusion_widths.is_empty() {
            return Err(MafnError::Config("fusion stack needs at least one layer".into()));
        }
        let ctx = 2 * dims.lstm_hidden;
        let mut fusion = Vec::new();
        let mut width = dims.trend_dim + dims.embed_dim;
        for (i, &w) in dims.fusion_widths.iter().enumerate() {
            fusion.push(Dense::new(format!("heads.fusion.layer{i}"), width, w, Activation::Relu));
            width = w;
        }
        Ok(Self {
            embedding: Embedding {
                name: "embedding".into(),
                num_states: dims.states,
                dim: dims.embed_dim,
            },
            conv: Conv1d {
                name: "encoder.conv".into(),
                channels: dims.sensors + dims.embed_dim,
                filters: dims.conv_filters,
                kernel: dims.conv_kernel,
                activation: Activation::Relu,
            },
            bilstm: BiLstm::new("encoder.bilstm", dims.conv_filters, dims.lstm_hidden),
            attention: Attention {
                name: "encoder.attention".into(),
                input: ctx,
                dim: dims.attention_dim,
            },
            rul_layers: [
                Dense::new("heads.rul.dense1", ctx, dims.rul_hidden[0], Activation::Relu),
                Dense::new(
                    "heads.rul.dense2",
                    dims.rul_hidden[0],
                    dims.rul_hidden[1],
                    Activation::Relu,
                ),
                Dense::new("heads.rul.out", dims.rul_hidden[1], 1, Activation::Identity),
            ],
            degradation: Decoder::new("heads.degradation", ctx, dims.decoder_hidden),
            trend_vector: Dense::new(
                "heads.degradation.trend",
                dims.decoder_hidden,
                dims.trend_dim,
                Activation::Identity,
            ),
            trend_scalar: Dense::new("heads.degradation.scalar", dims.trend_dim, 1, Activation::Identity),
            state_decoder: Decoder::new("heads.state", ctx, dims.decoder_hidden),
            state_logits: Dense::new(
                "heads.state.logits",
                dims.decoder_hidden,
                dims.states,
                Activation::Identity,
            ),
            fusion_out: Dense::new("heads.fusion.out", width, dims.sensors, Activation::Identity),
            fusion,
            dims,
        })
    }

    /// Freshly initialized parameters, fully determined by `seed`.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.embedding.init(&mut store, &mut rng);
        self.conv.init(&mut store, &mut rng);
        self.bilstm.init(&mut store, &mut rng);
        self.attention.init(&mut store, &mut rng);
        for l in &self.rul_layers {
            l.init(&mut store, &mut rng);
        }
        self.degradation.init(&mut store, &mut rng);
        self.trend_vector.init(&mut store, &mut rng);
        self.trend_scalar.init(&mut store, &mut rng);
        self.state_decoder.init(&mut store, &mut rng);
        self.state_logits.init(&mut store, &mut rng);
        for l in &self.fusion {
            l.init(&mut store, &mut rng);
        }
        self.fusion_out.init(&mut store, &mut rng);
        store
    }

    /// Checks that a parameter set has every tensor this architecture
    /// needs, with matching shapes.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        let reference = self.init_params(0);
        for (name, t) in reference.iter() {
            let found = store
                .get(name)
                .map_err(|_| MafnError::Contract(format!("checkpoint lacks parameter `{name}`")))?;
            if found.shape() != t.shape() {
                return Err(MafnError::Contract(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    found.shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &mut Bound,
        inputs: &BatchInputs,
        fusion_states: FusionStates,
    ) -> Result<MafnVars> {
        let d = &self.dims;
        let batch = inputs.batch_size();
        if inputs.sensors.len() != d.window || inputs.states.len() != d.window {
            return Err(MafnError::Contract(format!(
                "input: window of {} steps, model expects {}",
                inputs.sensors.len(),
                d.window
            )));
        }
        let mut xs = Vec::with_capacity(d.window);
        for (x, s) in inputs.sensors.iter().zip(&inputs.states) {
            if x.dims2() != (batch, d.sensors) {
                return Err(MafnError::Contract(format!(
                    "input: sensor step has shape {:?}, expected [{batch}, {}]",
                    x.shape(),
                    d.sensors
                )));
            }
            let xv = g.constant(x.clone());
            let e = self.embedding.forward(g, p, s).map_err(|e| e.at("embedding"))?;
            xs.push(g.concat(&[xv, e], 1)?);
        }
        let z = self.conv.forward(g, p, &xs).map_err(|e| e.at("conv1d"))?;
        let hs = self.bilstm.forward(g, p, &z).map_err(|e| e.at("bilstm"))?;
        let (ctx, attention) = self.attention.forward(g, p, &hs).map_err(|e| e.at("attention"))?;

        let mut r = ctx;
        for l in &self.rul_layers {
            r = l.forward(g, p, r).map_err(|e| e.at("rul head"))?;
        }
        let rul_unit = r;
        let rul = g.scale(rul_unit, d.rul_scale)?;

        let deg_h = self
            .degradation
            .unroll(g, p, ctx, d.horizon)
            .map_err(|e| e.at("degradation head"))?;
        let mut trend_vectors = Vec::with_capacity(d.horizon);
        let mut trend_steps = Vec::with_capacity(d.horizon);
        for &h in &deg_h {
            let dv = self.trend_vector.forward(g, p, h)?;
            trend_steps.push(self.trend_scalar.forward(g, p, dv)?);
            trend_vectors.push(dv);
        }
        let trend = g.concat(&trend_steps, 1)?;

        let st_h = self
            .state_decoder
            .unroll(g, p, ctx, d.horizon)
            .map_err(|e| e.at("state head"))?;
        let state_logits: Vec<Var> = st_h
            .iter()
            .map(|&h| self.state_logits.forward(g, p, h))
            .collect::<Result<_>>()?;

        let fused_states: Vec<Vec<usize>> = match fusion_states {
            FusionStates::Teacher(t) => {
                if t.len() != d.horizon || t.iter().any(|s| s.len() != batch) {
                    return Err(MafnError::Contract(
                        "fusion: teacher states do not match horizon × batch".into(),
                    ));
                }
                t.to_vec()
            }
            FusionStates::Predicted => state_logits
                .iter()
                .map(|&l| {
                    let v = g.value(l);
                    (0..batch).map(|b| argmax(v.row(b))).collect()
                })
                .collect(),
        };
        let mut forecast = Vec::with_capacity(d.horizon);
        let mut fusion_input_dim = 0;
        for (dv, ids) in trend_vectors.iter().zip(&fused_states) {
            let e = self.embedding.forward(g, p, ids).map_err(|e| e.at("fusion"))?;
            let mut f = g.concat(&[*dv, e], 1)?;
            fusion_input_dim = g.value(f).dims2().1;
            for l in &self.fusion {
                f = l.forward(g, p, f).map_err(|e| e.at("fusion"))?;
            }
            forecast.push(self.fusion_out.forward(g, p, f)?);
        }

        Ok(MafnVars {
            state_logits,
            trend_vectors,
            trend,
            forecast,
            rul_unit,
            rul,
            attention,
            fused_states,
            fusion_input_dim,
        })
    }

    /// Values for window `b` of a forward pass.
    pub fn extract(&self, g: &Graph, vars: &MafnVars, b: usize) -> MafnOutput {
        let state_logits: Vec<Vec<f64>> = vars.state_logits.iter().map(|&v| g.value(v).row(b).to_vec()).collect();
        MafnOutput {
            predicted_states: state_logits.iter().map(|l| argmax(l)).collect(),
            state_logits,
            degradation: g.value(vars.trend).row(b).to_vec(),
            trend_vectors: vars.trend_vectors.iter().map(|&v| g.value(v).row(b).to_vec()).collect(),
            forecast: vars.forecast.iter().map(|&v| g.value(v).row(b).to_vec()).collect(),
            rul: g.value(vars.rul).row(b)[0],
            attention_weights: g.value(vars.attention).row(b).to_vec(),
        }
    }

    /// Inference on a batch of `(window inputs, window states)`.
    pub fn predict(&self, store: &ParamStore, windows: &[(&[Vec<f64>], &[usize])]) -> Result<Vec<MafnOutput>> {
        let inputs = batch_inputs(windows)?;
        let mut g = Graph::new();
        let mut p = Bound::new(store);
        let vars = self.forward(&mut g, &mut p, &inputs, FusionStates::Predicted)?;
        Ok((0..windows.len()).map(|b| self.extract(&g, &vars, b)).collect())
    }

    pub fn predict_window(&self, store: &ParamStore, inputs: &[Vec<f64>], states: &[usize]) -> Result<MafnOutput> {
        Ok(self.predict(store, &[(inputs, states)])?.remove(0))
    }
}

/// How the RUL loss is scaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSetup {
    pub weights: LossWeights,
    /// Compare `ŷ / cap` with `y / cap` instead of raw cycles.
    pub rul_normalized: bool,
    pub rul_cap: f64,
}

impl LossSetup {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            weights: cfg.loss_weights(),
            rul_normalized: cfg.rul_loss_normalized,
            rul_cap: cfg.rul_cap,
        }
    }
}

/// Builds the four head losses and the weighted total for a batch. A
/// batch with no valid horizon step contributes zero state and forecast loss.
pub fn batch_losses(
    g: &mut Graph,
    vars: &MafnVars,
    targets: &BatchTargets,
    setup: &LossSetup,
) -> Result<(LossVars, Var)> {
    let valid: f64 = targets.mask.iter().flatten().sum();
    let state = if valid > 0.0 {
        loss::state_loss(g, &vars.state_logits, &targets.future_states, &targets.mask)?
    } else {
        g.constant(Tensor::scalar(0.0))
    };
    let forecast = if valid > 0.0 {
        let y: Vec<Var> = targets.future_sensors.iter().map(|t| g.constant(t.clone())).collect();
        loss::forecast_loss(g, &vars.forecast, &y, &targets.mask)?
    } else {
        g.constant(Tensor::scalar(0.0))
    };
    let degradation = if vars.state_logits.len() >= 2 {
        loss::degradation_loss(g, vars.trend, setup.weights.lambda_smooth)?
    } else {
        g.constant(Tensor::scalar(0.0))
    };
    let (pred, target) = if setup.rul_normalized {
        let t = targets.rul.data().iter().map(|v| v / setup.rul_cap).collect();
        let y = g.constant(Tensor::new(targets.rul.shape().to_vec(), t)?);
        (vars.rul_unit, y)
    } else {
        (vars.rul, g.constant(targets.rul.clone()))
    };
    let rul = loss::rul_loss(g, pred, target, setup.weights.lambda_late, setup.weights.lambda_early)?;
    let parts = LossVars {
        state,
        degradation,
        forecast,
        rul,
    };
    let total = loss::total_loss(g, &parts, &setup.weights)?;
    Ok((parts, total))
}

pub fn clamp_rul(raw: f64, cap: f64) -> f64 {
    raw.clamp(0.0, cap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dims() -> MafnDims {
        MafnDims {
            sensors: 2,
            states: 2,
            window: 4,
            horizon: 3,
            embed_dim: 2,
            conv_kernel: 3,
            conv_filters: 3,
            lstm_hidden: 3,
            attention_dim: 3,
            decoder_hidden: 3,
            trend_dim: 2,
            fusion_widths: vec![4],
            rul_hidden: [4, 3],
            rul_scale: 125.0,
        }
    }

    fn window() -> (Vec<Vec<f64>>, Vec<usize>) {
        (
            vec![vec![0.1, 0.9], vec![0.2, 0.7], vec![0.4, 0.5], vec![0.5, 0.2]],
            vec![0, 1, 1, 0],
        )
    }

    #[test]
    fn output_shapes() {
        let m = Mafn::new(tiny_dims()).unwrap();
        let store = m.init_params(3);
        let (x, s) = window();
        let out = m.predict_window(&store, &x, &s).unwrap();
        assert_eq!(out.state_logits.len(), 3);
        assert!(out.state_logits.iter().all(|r| r.len() == 2));
        assert_eq!(out.degradation.len(), 3);
        assert_eq!(out.forecast.len(), 3);
        assert!(out.forecast.iter().all(|r| r.len() == 2));
        assert_eq!(out.attention_weights.len(), 4);
        assert!((out.attention_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.rul.is_finite());
    }

    #[test]
    fn forward_is_deterministic() {
        let m = Mafn::new(tiny_dims()).unwrap();
        let store = m.init_params(3);
        let (x, s) = window();
        let a = m.predict_window(&store, &x, &s).unwrap();
        let b = m.predict_window(&store, &x, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fusion_input_is_trend_plus_embedding() {
        let m = Mafn::new(tiny_dims()).unwrap();
        let store = m.init_params(1);
        let (x, s) = window();
        let inputs = batch_inputs(&[(&x, &s)]).unwrap();
        let mut g = Graph::new();
        let vars = m
            .forward(&mut g, &mut Bound::new(&store), &inputs, FusionStates::Predicted)
            .unwrap();
        assert_eq!(vars.fusion_input_dim, 2 + 2);
    }

    #[test]
    fn wrong_window_length_names_stage() {
        let m = Mafn::new(tiny_dims()).unwrap();
        let store = m.init_params(1);
        let x = vec![vec![0.1, 0.2]; 3];
        let err = m.predict_window(&store, &x, &[0, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("input"), "{err}");
        let x = vec![vec![0.1, 0.2, 0.3]; 4];
        assert!(m.predict_window(&store, &x, &[0; 4]).is_err());
    }

    #[test]
    fn check_params_detects_missing_and_misshapen() {
        let m = Mafn::new(tiny_dims()).unwrap();
        let mut store = m.init_params(1);
        m.check_params(&store).unwrap();
        store.insert("heads.rul.out.b", Tensor::zeros(&[1, 2]));
        assert!(m.check_params(&store).is_err());
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_rul(-3.0, 125.0), 0.0);
        assert_eq!(clamp_rul(140.0, 125.0), 125.0);
        assert_eq!(clamp_rul(60.5, 125.0), 60.5);
    }
}
