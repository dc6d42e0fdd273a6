//! Differentiable layers: state embedding, same-padded 1-D convolution,
//! LSTM cell, bidirectional LSTM, additive attention and dense layers.
//!
//! Layers are descriptors (a parameter-name prefix plus dimensions). Their
//! weights live in a [`ParamStore`]; a forward pass binds each parameter
//! onto the graph once through [`Bound`]. Sequences are slices of `Var`s,
//! one `[batch, features]` matrix per time step.

use std::collections::HashMap;

use mafn_tensor::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MafnError, Result};

/// Parameters of one store, bound lazily onto one graph.
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: HashMap<String, Var>,
}

impl<'a> Bound<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            vars: HashMap::new(),
        }
    }

    pub fn get(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let v = g.bind(name, self.store.get(name)?);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Uses `v` for `name` instead of binding the stored tensor.
    pub fn set(&mut self, name: &str, v: Var) {
        self.vars.insert(name.to_string(), v);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x)?,
            Activation::Tanh => g.tanh(x)?,
        })
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
}

fn check_width(g: &Graph, x: Var, expected: usize, layer: &str) -> Result<()> {
    let (_, c) = g.value(x).dims2();
    if c != expected {
        return Err(MafnError::Contract(format!(
            "{layer}: input has {c} features, expected {expected}"
        )));
    }
    Ok(())
}

// ---- dense ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(name: impl Into<String>, input: usize, output: usize, activation: Activation) -> Self {
        Self {
            name: name.into(),
            input,
            output,
            activation,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.insert(
            format!("{}.W", self.name),
            glorot(rng, &[self.input, self.output], self.input, self.output),
        );
        store.insert(format!("{}.b", self.name), Tensor::zeros(&[1, self.output]));
    }

    /// `activation(x W + b)` for `x: [batch, input]`.
    pub fn forward(&self, g: &mut Graph, p: &mut Bound, x: Var) -> Result<Var> {
        check_width(g, x, self.input, &self.name)?;
        let w = p.get(g, &format!("{}.W", self.name))?;
        let b = p.get(g, &format!("{}.b", self.name))?;
        let xw = g.matmul(x, w)?;
        let y = g.add(xw, b)?;
        self.activation.apply(g, y)
    }
}

// ---- embedding --------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub name: String,
    pub num_states: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn table_name(&self) -> String {
        format!("{}.table", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.insert(
            self.table_name(),
            glorot(rng, &[self.num_states, self.dim], self.num_states, self.dim),
        );
    }

    /// One table row per id: `[ids.len(), dim]`.
    pub fn forward(&self, g: &mut Graph, p: &mut Bound, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&s| s >= self.num_states) {
            return Err(MafnError::Contract(format!(
                "state id {bad} outside [0, {})",
                self.num_states
            )));
        }
        let table = p.get(g, &self.table_name())?;
        Ok(g.gather_rows(table, ids)?)
    }
}

// ---- conv1d -----------------------------------------------------------

/// Stride-1 convolution over time with zero "same" padding.
///
/// Filter `n` at step `t` sees inputs `t + j - p` for `j in 0..kernel`,
/// with `p = (kernel - 1) / 2`, so even kernels pad `p` on the left and
/// `kernel - 1 - p` on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub name: String,
    pub channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub activation: Activation,
}

impl Conv1d {
    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Weight stored as `[kernel · channels, filters]`; rows
    /// `j·C .. (j+1)·C` hold kernel slice `j`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let fan_in = self.kernel * self.channels;
        store.insert(
            format!("{}.W", self.name),
            glorot(rng, &[fan_in, self.filters], fan_in, self.filters),
        );
        store.insert(format!("{}.b", self.name), Tensor::zeros(&[1, self.filters]));
    }

    pub fn forward(&self, g: &mut Graph, p: &mut Bound, xs: &[Var]) -> Result<Vec<Var>> {
        let t_len = xs.len();
        if t_len == 0 {
            return Err(MafnError::Contract(format!("{}: empty sequence", self.name)));
        }
        if self.kernel > 2 * t_len {
            return Err(MafnError::Contract(format!(
                "{}: kernel {} longer than twice the window {t_len}",
                self.name, self.kernel
            )));
        }
        for &x in xs {
            check_width(g, x, self.channels, &self.name)?;
        }
        let w = p.get(g, &format!("{}.W", self.name))?;
        let b = p.get(g, &format!("{}.b", self.name))?;
        let slices: Vec<Var> = (0..self.kernel)
            .map(|j| g.slice_rows(w, j * self.channels, self.channels))
            .collect::<std::result::Result<_, _>>()?;
        let pad = self.padding() as isize;
        let mut out = Vec::with_capacity(t_len);
        for t in 0..t_len as isize {
            let mut acc = None;
            for (j, &wj) in slices.iter().enumerate() {
                let src = t + j as isize - pad;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let term = g.matmul(xs[src as usize], wj)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => g.add(a, term)?,
                });
            }
            let pre = match acc {
                Some(a) => g.add(a, b)?,
                None => {
                    let rows = g.value(xs[0]).dims2().0;
                    let zero = g.constant(Tensor::zeros(&[rows, self.filters]));
                    g.add(zero, b)?
                }
            };
            out.push(self.activation.apply(g, pre)?);
        }
        Ok(out)
    }
}

// ---- LSTM -------------------------------------------------------------

/// Gates packed in column blocks `[input | forget | candidate | output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let h = self.hidden;
        let limit = 1.0 / (h as f64).sqrt();
        store.insert(format!("{}.W_x", self.name), uniform(rng, &[self.input, 4 * h], limit));
        store.insert(format!("{}.W_h", self.name), uniform(rng, &[h, 4 * h], limit));
        let mut b = Tensor::zeros(&[1, 4 * h]);
        b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        store.insert(format!("{}.b", self.name), b);
    }

    /// One step: returns `(h_t, c_t)`, each `[batch, hidden]`.
    pub fn step(&self, g: &mut Graph, p: &mut Bound, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        check_width(g, x, self.input, &self.name)?;
        check_width(g, h_prev, self.hidden, &self.name)?;
        check_width(g, c_prev, self.hidden, &self.name)?;
        let wx = p.get(g, &format!("{}.W_x", self.name))?;
        let wh = p.get(g, &format!("{}.W_h", self.name))?;
        let b = p.get(g, &format!("{}.b", self.name))?;
        let h = self.hidden;
        let a = g.matmul(x, wx)?;
        let r = g.matmul(h_prev, wh)?;
        let z = g.add(a, r)?;
        let z = g.add(z, b)?;
        let zi = g.slice_cols(z, 0, h)?;
        let zf = g.slice_cols(z, h, h)?;
        let zg = g.slice_cols(z, 2 * h, h)?;
        let zo = g.slice_cols(z, 3 * h, h)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let cand = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c))
    }

    /// Unrolls over `xs` from zero state, returning every hidden state.
    pub fn run(&self, g: &mut Graph, p: &mut Bound, xs: &[Var]) -> Result<Vec<Var>> {
        let Some(&first) = xs.first() else {
            return Ok(Vec::new());
        };
        let rows = g.value(first).dims2().0;
        let mut h = g.constant(Tensor::zeros(&[rows, self.hidden]));
        let mut c = g.constant(Tensor::zeros(&[rows, self.hidden]));
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            (h, c) = self.step(g, p, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new(name: &str, input: usize, hidden: usize) -> Self {
        Self {
            fwd: LstmCell {
                name: format!("{name}.fwd"),
                input,
                hidden,
            },
            bwd: LstmCell {
                name: format!("{name}.bwd"),
                input,
                hidden,
            },
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.fwd.init(store, rng);
        self.bwd.init(store, rng);
    }

    /// `[→h_t; ←h_t]` per step, both directions starting from zero state.
    pub fn forward(&self, g: &mut Graph, p: &mut Bound, xs: &[Var]) -> Result<Vec<Var>> {
        if xs.is_empty() {
            return Err(MafnError::Contract("bilstm: empty sequence".into()));
        }
        let fwd = self.fwd.run(g, p, xs)?;
        let rev: Vec<Var> = xs.iter().rev().copied().collect();
        let mut bwd = self.bwd.run(g, p, &rev)?;
        bwd.reverse();
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| Ok(g.concat(&[f, b], 1)?))
            .collect()
    }
}

// ---- attention ----------------------------------------------------------

/// Additive attention with a learned query:
/// `e_t = vᵀ tanh(W_h h_t + W_s s)`, `α = softmax(e)`, `c = Σ α_t h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub name: String,
    pub input: usize,
    pub dim: usize,
}

impl Attention {
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let n = &self.name;
        store.insert(
            format!("{n}.W_h"),
            glorot(rng, &[self.input, self.dim], self.input, self.dim),
        );
        store.insert(
            format!("{n}.W_s"),
            glorot(rng, &[self.dim, self.dim], self.dim, self.dim),
        );
        store.insert(format!("{n}.s"), glorot(rng, &[1, self.dim], 1, self.dim));
        store.insert(format!("{n}.v"), glorot(rng, &[self.dim, 1], self.dim, 1));
    }

    /// Alignment scores `[batch, T]` before normalization.
    pub fn scores(&self, g: &mut Graph, p: &mut Bound, hs: &[Var]) -> Result<Var> {
        if hs.is_empty() {
            return Err(MafnError::Contract("attention: empty sequence".into()));
        }
        let n = &self.name;
        let wh = p.get(g, &format!("{n}.W_h"))?;
        let ws = p.get(g, &format!("{n}.W_s"))?;
        let s = p.get(g, &format!("{n}.s"))?;
        let v = p.get(g, &format!("{n}.v"))?;
        let query = g.matmul(s, ws)?;
        let mut es = Vec::with_capacity(hs.len());
        for &h in hs {
            check_width(g, h, self.input, n)?;
            let proj = g.matmul(h, wh)?;
            let pre = g.add(proj, query)?;
            let act = g.tanh(pre)?;
            es.push(g.matmul(act, v)?);
        }
        Ok(g.concat(&es, 1)?)
    }

    /// Returns `(context [batch, input], weights [batch, T])`.
    pub fn forward(&self, g: &mut Graph, p: &mut Bound, hs: &[Var]) -> Result<(Var, Var)> {
        let scores = self.scores(g, p, hs)?;
        let alpha = g.softmax(scores)?;
        let mut ctx = None;
        for (t, &h) in hs.iter().enumerate() {
            let a_t = g.slice_cols(alpha, t, 1)?;
            let term = g.mul(a_t, h)?;
            ctx = Some(match ctx {
                None => term,
                Some(c) => g.add(c, term)?,
            });
        }
        Ok((ctx.expect("non-empty sequence"), alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(g: &mut Graph, v: &[f64]) -> Var {
        g.constant(Tensor::new(vec![1, v.len()], v.to_vec()).unwrap())
    }

    #[test]
    fn embed_examples() {
        let emb = Embedding {
            name: "e".into(),
            num_states: 1,
            dim: 3,
        };
        let mut store = ParamStore::new();
        store.insert("e.table", Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let mut g = Graph::new();
        let mut p = Bound::new(&store);
        let y = emb.forward(&mut g, &mut p, &[0, 0]).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(emb.forward(&mut g, &mut p, &[1]).is_err());

        let emb = Embedding {
            name: "e".into(),
            num_states: 3,
            dim: 3,
        };
        let mut store = ParamStore::new();
        store.insert(
            "e.table",
            Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap(),
        );
        let mut g = Graph::new();
        let mut p = Bound::new(&store);
        let y = emb.forward(&mut g, &mut p, &[2, 0]).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);

        let y = emb.forward(&mut g, &mut p, &[1, 1]).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let grads: Vec<_> = g.bound_grads().collect();
        assert_eq!(grads[0].1, &[0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let conv = Conv1d {
            name: "c".into(),
            channels: 1,
            filters: 1,
            kernel: 1,
            activation: Activation::Relu,
        };
        let mut store = ParamStore::new();
        store.insert("c.W", Tensor::from_rows(&[vec![1.0]]).unwrap());
        store.insert("c.b", Tensor::zeros(&[1, 1]));
        let mut g = Graph::new();
        let xs: Vec<Var> = [0.5, 2.0, 0.0].iter().map(|&v| row(&mut g, &[v])).collect();
        let mut p = Bound::new(&store);
        let ys = conv.forward(&mut g, &mut p, &xs).unwrap();
        let out: Vec<f64> = ys.iter().map(|&y| g.value(y).data()[0]).collect();
        assert_eq!(out, vec![0.5, 2.0, 0.0]);
    }

    #[test]
    fn conv_hand_example_with_padding() {
        let conv = Conv1d {
            name: "c".into(),
            channels: 1,
            filters: 1,
            kernel: 3,
            activation: Activation::Identity,
        };
        let mut store = ParamStore::new();
        store.insert("c.W", Tensor::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap());
        store.insert("c.b", Tensor::zeros(&[1, 1]));
        let mut g = Graph::new();
        let xs: Vec<Var> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| row(&mut g, &[v])).collect();
        let mut p = Bound::new(&store);
        let ys = conv.forward(&mut g, &mut p, &xs).unwrap();
        let out: Vec<f64> = ys.iter().map(|&y| g.value(y).data()[0]).collect();
        assert_eq!(out, vec![3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let conv = Conv1d {
            name: "c".into(),
            channels: 1,
            filters: 1,
            kernel: 5,
            activation: Activation::Identity,
        };
        let mut store = ParamStore::new();
        conv.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let mut g = Graph::new();
        let xs = vec![row(&mut g, &[1.0]), row(&mut g, &[1.0])];
        assert!(conv.forward(&mut g, &mut Bound::new(&store), &xs).is_err());
    }

    #[test]
    fn lstm_zero_weights_give_zero_hidden() {
        let cell = LstmCell {
            name: "l".into(),
            input: 2,
            hidden: 3,
        };
        let mut store = ParamStore::new();
        store.insert("l.W_x", Tensor::zeros(&[2, 12]));
        store.insert("l.W_h", Tensor::zeros(&[3, 12]));
        store.insert("l.b", Tensor::zeros(&[1, 12]));
        let mut g = Graph::new();
        let x = row(&mut g, &[0.7, -4.0]);
        let h0 = row(&mut g, &[0.1, 0.2, 0.3]);
        let c0 = row(&mut g, &[0.0; 3]);
        let (h, _) = cell.step(&mut g, &mut Bound::new(&store), x, h0, c0).unwrap();
        assert_eq!(g.value(h).data(), &[0.0; 3]);
    }

    #[test]
    fn lstm_saturated_forget_gate_keeps_cell() {
        let cell = LstmCell {
            name: "l".into(),
            input: 1,
            hidden: 2,
        };
        let mut store = ParamStore::new();
        store.insert("l.W_x", Tensor::zeros(&[1, 8]));
        store.insert("l.W_h", Tensor::zeros(&[2, 8]));
        // forget bias 10, input gate bias -10
        let mut b = vec![0.0; 8];
        b[0..2].copy_from_slice(&[-10.0, -10.0]);
        b[2..4].copy_from_slice(&[10.0, 10.0]);
        store.insert("l.b", Tensor::new(vec![1, 8], b).unwrap());
        let mut g = Graph::new();
        let x = row(&mut g, &[3.0]);
        let h0 = row(&mut g, &[0.0, 0.0]);
        let c0 = row(&mut g, &[0.4, -0.8]);
        let (_, c) = cell.step(&mut g, &mut Bound::new(&store), x, h0, c0).unwrap();
        let c = g.value(c).data();
        assert!((c[0] - 0.4).abs() < 1e-4 && (c[1] + 0.8).abs() < 1e-4);
    }

    #[test]
    fn lstm_init_sets_forget_bias() {
        let cell = LstmCell {
            name: "l".into(),
            input: 2,
            hidden: 3,
        };
        let mut store = ParamStore::new();
        cell.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let b = store.get("l.b").unwrap().data();
        assert_eq!(&b[3..6], &[1.0; 3]);
        assert_eq!(&b[..3], &[0.0; 3]);
    }

    #[test]
    fn attention_single_step_and_identical_states() {
        let att = Attention {
            name: "a".into(),
            input: 2,
            dim: 3,
        };
        let mut store = ParamStore::new();
        att.init(&mut store, &mut ChaCha8Rng::seed_from_u64(5));
        let mut g = Graph::new();
        let h = row(&mut g, &[0.3, -0.6]);
        let mut p = Bound::new(&store);
        let (c, a) = att.forward(&mut g, &mut p, &[h]).unwrap();
        assert_eq!(g.value(a).data(), &[1.0]);
        assert_eq!(g.value(c).data(), &[0.3, -0.6]);

        let hs = vec![h; 4];
        let (c, a) = att.forward(&mut g, &mut p, &hs).unwrap();
        for w in g.value(a).data() {
            assert!((w - 0.25).abs() < 1e-15);
        }
        for (x, y) in g.value(c).data().iter().zip([0.3, -0.6]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn dense_examples() {
        let d = Dense::new("d", 2, 2, Activation::Identity);
        let mut store = ParamStore::new();
        store.insert("d.W", Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        store.insert("d.b", Tensor::zeros(&[1, 2]));
        let mut g = Graph::new();
        let x = row(&mut g, &[4.0, -2.0]);
        let y = d.forward(&mut g, &mut Bound::new(&store), x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, -2.0]);

        let d = Dense::new("d", 2, 1, Activation::Identity);
        let mut store = ParamStore::new();
        store.insert("d.W", Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        store.insert("d.b", Tensor::from_rows(&[vec![0.5]]).unwrap());
        let mut g = Graph::new();
        let x = row(&mut g, &[1.0, 2.0]);
        let y = d.forward(&mut g, &mut Bound::new(&store), x).unwrap();
        assert_eq!(g.value(y).data(), &[3.5]);

        let d = Dense::new("d", 2, 1, Activation::Relu);
        let x = row(&mut g, &[-1.0, -2.0]);
        let y = d.forward(&mut g, &mut Bound::new(&store), x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0]);

        let bad = row(&mut g, &[1.0, 2.0, 3.0]);
        assert!(d.forward(&mut g, &mut Bound::new(&store), bad).is_err());
    }
}
