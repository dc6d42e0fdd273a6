//! Finite-difference checks for every layer, every loss and the full model.

use mafn_core::data::WindowSample;
use mafn_core::loss::{self, LossVars, LossWeights};
use mafn_core::model::{batch_losses, make_batch, FusionStates, LossSetup, Mafn, MafnDims};
use mafn_core::nn::{Activation, Attention, BiLstm, Bound, Conv1d, Dense, Embedding, LstmCell};
use mafn_core::Result;
use mafn_tensor::gradcheck::{check_gradients, GradCheckReport};
use mafn_tensor::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay out of reach of ±ε.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces any output to a scalar with fixed pseudo-random weights.
fn project(g: &mut Graph, x: Var, salt: u64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ salt);
    let w = g.constant(rand_tensor(&mut rng, &shape));
    let y = g.mul(x, w)?;
    Ok(g.sum(y)?)
}

/// Checks gradients with respect to every parameter in `store` plus the
/// extra `inputs`. `f` receives the non-parameter input vars.
fn check_with_params<F>(store: &ParamStore, inputs: Vec<Tensor>, f: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &mut Bound, &[Var]) -> Result<Var>,
{
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut all: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
    all.extend(inputs);
    check_gradients(&all, EPS, |g, vars| {
        let mut p = Bound::new(store);
        for (n, &v) in names.iter().zip(vars) {
            p.set(n, v);
        }
        f(g, &mut p, &vars[names.len()..]).map_err(|e| mafn_tensor::TensorError::Contract(e.to_string()))
    })
    .unwrap()
}

fn assert_passes(what: &str, seed: u64, r: &GradCheckReport, tol: f64) {
    assert!(
        r.passes(tol),
        "{what} seed {seed}: max rel err {:e} at {:?} ({} checked)",
        r.max_rel_err,
        r.worst,
        r.checked
    );
}

pub fn embedding_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = Embedding {
            name: "e".into(),
            num_states: 3,
            dim: 2,
        };
        let mut store = ParamStore::new();
        emb.init(&mut store, &mut rng);
        let ids: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let r = check_with_params(&store, vec![], |g, p, _| {
            let e = emb.forward(g, p, &ids)?;
            project(g, e, seed)
        });
        assert_passes("embedding", seed, &r, TOL);
    }
}

pub fn dense_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for act in [Activation::Identity, Activation::Tanh, Activation::Relu] {
            let d = Dense::new("d", 3, 2, act);
            let mut store = ParamStore::new();
            d.init(&mut store, &mut rng);
            let x = away_from_zero(&mut rng, &[2, 3]);
            // keep ReLU pre-activations off the kink
            let pre = {
                let mut g = Graph::new();
                let xv = g.constant(x.clone());
                let out = Dense::new("d", 3, 2, Activation::Identity)
                    .forward(&mut g, &mut Bound::new(&store), xv)
                    .unwrap();
                g.value(out)
                    .data()
                    .iter()
                    .map(|v| v.abs())
                    .fold(f64::INFINITY, f64::min)
            };
            if act == Activation::Relu && pre < 1e-3 {
                continue;
            }
            let r = check_with_params(&store, vec![x], |g, p, v| {
                let y = d.forward(g, p, v[0])?;
                project(g, y, seed)
            });
            assert_passes("dense", seed, &r, TOL);
        }
    }
}

pub fn conv1d_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = Conv1d {
            name: "c".into(),
            channels: 2,
            filters: 3,
            kernel: 3,
            activation: Activation::Tanh,
        };
        let mut store = ParamStore::new();
        conv.init(&mut store, &mut rng);
        let xs: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut rng, &[2, 2])).collect();
        let r = check_with_params(&store, xs, |g, p, v| {
            let z = conv.forward(g, p, v)?;
            let all = g.concat(&z, 1)?;
            project(g, all, seed)
        });
        assert_passes("conv1d", seed, &r, TOL);
    }
}

pub fn lstm_step_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = LstmCell {
            name: "l".into(),
            input: 2,
            hidden: 3,
        };
        let mut store = ParamStore::new();
        cell.init(&mut store, &mut rng);
        let inputs = vec![
            rand_tensor(&mut rng, &[2, 2]),
            rand_tensor(&mut rng, &[2, 3]),
            rand_tensor(&mut rng, &[2, 3]),
        ];
        let r = check_with_params(&store, inputs, |g, p, v| {
            let (h, c) = cell.step(g, p, v[0], v[1], v[2])?;
            let both = g.concat(&[h, c], 1)?;
            project(g, both, seed)
        });
        assert_passes("lstm step", seed, &r, TOL);
    }
}

pub fn bilstm_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bi = BiLstm::new("b", 2, 2);
        let mut store = ParamStore::new();
        bi.init(&mut store, &mut rng);
        let xs: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &[2, 2])).collect();
        let r = check_with_params(&store, xs, |g, p, v| {
            let hs = bi.forward(g, p, v)?;
            let all = g.concat(&hs, 1)?;
            project(g, all, seed)
        });
        assert_passes("bilstm", seed, &r, TOL);
    }
}

pub fn attention_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let att = Attention {
            name: "a".into(),
            input: 3,
            dim: 2,
        };
        let mut store = ParamStore::new();
        att.init(&mut store, &mut rng);
        let hs: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut rng, &[2, 3])).collect();
        let r = check_with_params(&store, hs, |g, p, v| {
            let (ctx, alpha) = att.forward(g, p, v)?;
            let a = project(g, ctx, seed)?;
            let b = project(g, alpha, seed + 1)?;
            Ok(g.add(a, b)?)
        });
        assert_passes("attention", seed, &r, TOL);
    }
}

fn check_plain<F>(inputs: Vec<Tensor>, f: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_gradients(&inputs, EPS, |g, v| {
        f(g, v).map_err(|e| mafn_tensor::TensorError::Contract(e.to_string()))
    })
    .unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, b: usize) -> Vec<Vec<f64>> {
    // prefix masks, at least one valid step somewhere
    let valid: Vec<usize> = (0..b)
        .map(|i| {
            if i == 0 {
                rng.gen_range(1..=h)
            } else {
                rng.gen_range(0..=h)
            }
        })
        .collect();
    (0..h)
        .map(|t| valid.iter().map(|&v| if t < v { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn state_loss_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, b, k) = (3, 2, 3);
        let logits: Vec<Tensor> = (0..h).map(|_| rand_tensor(&mut rng, &[b, k])).collect();
        let targets: Vec<Vec<usize>> = (0..h).map(|_| (0..b).map(|_| rng.gen_range(0..k)).collect()).collect();
        let mask = random_mask(&mut rng, h, b);
        let r = check_plain(logits, |g, v| loss::state_loss(g, v, &targets, &mask));
        assert_passes("state loss", seed, &r, TOL);
    }
}

/// Trend with consecutive differences bounded away from zero so the
/// monotonicity hinge is differentiable at every checked point.
fn trend_tensor(rng: &mut ChaCha8Rng, b: usize, h: usize) -> Tensor {
    let mut data = Vec::new();
    for _ in 0..b {
        let mut v = rng.gen_range(-1.0..1.0);
        for _ in 0..h {
            data.push(v);
            let step: f64 = rng.gen_range(0.05..0.5);
            v += if rng.gen_bool(0.5) { step } else { -step };
        }
    }
    Tensor::new(vec![b, h], data).unwrap()
}

pub fn degradation_loss_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambda = rng.gen_range(0.0..1.0);
        let r = check_plain(vec![trend_tensor(&mut rng, 2, 4)], |g, v| {
            loss::degradation_loss(g, v[0], lambda)
        });
        assert_passes("degradation loss", seed, &r, TOL);
    }
}

pub fn forecast_loss_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, b, d) = (3, 2, 2);
        let pred: Vec<Tensor> = (0..h).map(|_| rand_tensor(&mut rng, &[b, d])).collect();
        let target: Vec<Tensor> = (0..h).map(|_| rand_tensor(&mut rng, &[b, d])).collect();
        let mask = random_mask(&mut rng, h, b);
        let r = check_plain(pred, |g, v| {
            let y: Vec<Var> = target.iter().map(|t| g.constant(t.clone())).collect();
            loss::forecast_loss(g, v, &y, &mask)
        });
        assert_passes("forecast loss", seed, &r, TOL);
    }
}

pub fn rul_loss_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = rand_tensor(&mut rng, &[4, 1]);
        let target = rand_tensor(&mut rng, &[4, 1]);
        let r = check_plain(vec![pred, target], |g, v| loss::rul_loss(g, v[0], v[1], 2.0, 1.0));
        assert_passes("rul loss", seed, &r, TOL);
    }
}

pub fn total_loss_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = LossWeights {
            w_state: rng.gen_range(0.0..1.0),
            w_degradation: rng.gen_range(0.0..1.0),
            w_forecast: rng.gen_range(0.0..1.0),
            w_rul: rng.gen_range(0.0..1.0),
            ..LossWeights::default()
        };
        let parts: Vec<Tensor> = (0..4).map(|_| Tensor::scalar(rng.gen_range(0.0..3.0))).collect();
        let r = check_plain(parts, |g, v| {
            let sq: Vec<Var> = v.iter().map(|&x| g.square(x)).collect::<std::result::Result<_, _>>()?;
            let lv = LossVars {
                state: sq[0],
                degradation: sq[1],
                forecast: sq[2],
                rul: sq[3],
            };
            loss::total_loss(g, &lv, &w)
        });
        assert_passes("total loss", seed, &r, TOL);
    }
}

pub fn tiny_dims() -> MafnDims {
    MafnDims {
        sensors: 2,
        states: 2,
        window: 4,
        horizon: 3,
        embed_dim: 3,
        conv_kernel: 3,
        conv_filters: 3,
        lstm_hidden: 3,
        attention_dim: 3,
        decoder_hidden: 3,
        trend_dim: 3,
        fusion_widths: vec![3],
        rul_hidden: [3, 3],
        rul_scale: 1.0,
    }
}

fn tiny_samples(rng: &mut ChaCha8Rng) -> Vec<WindowSample> {
    (0..2)
        .map(|b| {
            let valid = if b == 0 { 3 } else { 2 };
            WindowSample {
                inputs: (0..4)
                    .map(|_| (0..2).map(|_| rng.gen_range(0.0..1.0)).collect())
                    .collect(),
                input_states: (0..4).map(|_| rng.gen_range(0..2)).collect(),
                future_states: (0..3)
                    .map(|h| if h < valid { rng.gen_range(0..2) } else { 0 })
                    .collect(),
                future_sensors: (0..3)
                    .map(|_| (0..2).map(|_| rng.gen_range(0.0..1.0)).collect())
                    .collect(),
                mask: (0..3).map(|h| h < valid).collect(),
                rul: rng.gen_range(0.0..1.0),
                unit_id: b as u32,
                cutoff: 4,
            }
        })
        .collect()
}

pub fn full_model_gradients() {
    let model = Mafn::new(tiny_dims()).unwrap();
    let setup = LossSetup {
        weights: LossWeights::default(),
        rul_normalized: false,
        rul_cap: 1.0,
    };
    let mut checked = 0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        // zero-initialized biases can sit exactly on a ReLU kink; jitter everything
        let mut store = model.init_params(seed);
        for (_, t) in store.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
        let samples = tiny_samples(&mut rng);
        let refs: Vec<&WindowSample> = samples.iter().collect();
        let (inputs, targets) = make_batch(&refs).unwrap();
        let r = check_with_params(&store, vec![], |g, p, _| {
            let vars = model.forward(g, p, &inputs, FusionStates::Teacher(&targets.future_states))?;
            Ok(batch_losses(g, &vars, &targets, &setup)?.1)
        });
        assert_passes("full model", seed, &r, 1e-3);
        checked += r.checked;
    }
    assert_eq!(checked, 5 * model.init_params(0).num_scalars());
}
