//! Dynamic tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its value and the parents it was
//! computed from. Nodes are only ever appended, so push order is a valid
//! topological order and `backward` is a single reverse sweep.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise single-argument operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Square,
    /// `max(0, x)`; same rule as `Relu`, kept as a separate name for loss code.
    Max0,
    Neg,
    Ln,
}

/// Pointwise two-argument operations with row/column broadcasting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceCols { src: Var, start: usize },
    SliceRows { src: Var, start: usize },
    GatherRows { src: Var, index: Vec<usize> },
    Transpose(Var),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single forward pass worth of recorded operations.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Accumulated gradients of leaf nodes, additive across `backward` calls.
    leaf_grads: Vec<Option<Vec<f64>>>,
    /// Leaves bound to named parameters.
    bindings: Vec<(String, Var)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Tracked leaf. Its gradient is available through [`Graph::grad`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.zero_grad();
        self.push(t, Op::Leaf, true)
    }

    /// Untracked leaf (inputs, targets, masks).
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.zero_grad();
        self.push(t, Op::Leaf, false)
    }

    /// Tracked leaf bound to a parameter name, see [`Graph::bound_grads`].
    pub fn bind(&mut self, name: &str, t: &Tensor) -> Var {
        let v = self.variable(t.clone());
        self.bindings.push((name.to_string(), v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// `(name, gradient)` for every bound parameter that received one.
    pub fn bound_grads(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.bindings
            .iter()
            .filter_map(|(n, v)| self.leaf_grads[v.0].as_deref().map(|g| (n.as_str(), g)))
    }

    pub fn bindings(&self) -> &[(String, Var)] {
        &self.bindings
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- pointwise ---------------------------------------------------

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let f: fn(f64) -> f64 = match op {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            // NaN must survive so divergence is reported, not masked
            Unary::Relu | Unary::Max0 => |v| if v > 0.0 || v.is_nan() { v } else { 0.0 },
            Unary::Exp => f64::exp,
            Unary::Square => |v| v * v,
            Unary::Neg => |v| -v,
            Unary::Ln => f64::ln,
        };
        if op == Unary::Ln && src.data().iter().any(|&v| v <= 0.0) {
            return Err(TensorError::Numeric {
                op: "ln",
                detail: "non-positive input".into(),
            });
        }
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Unary(op, x), rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }

    /// Elementwise binary op. Operands must agree on the 2-D view
    /// (leading dims × last dim) except where one side has extent 1,
    /// which covers bias rows `[1, n]` and per-row scalars `[m, 1]`.
    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (ra, ca) = av.dims2();
        let (rb, cb) = bv.dims2();
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let err = || TensorError::Shape {
            op: name,
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        };
        let r = bdim(ra, rb).ok_or_else(err)?;
        let c = bdim(ca, cb).ok_or_else(err)?;
        let shape = if (ra, ca) == (r, c) {
            av.shape().to_vec()
        } else if (rb, cb) == (r, c) {
            bv.shape().to_vec()
        } else {
            vec![r, c]
        };
        let f: fn(f64, f64) -> f64 = match op {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let (ad, bd) = (av.data(), bv.data());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let ia = if ra == 1 { 0 } else { i };
            let ib = if rb == 1 { 0 } else { i };
            for j in 0..c {
                let x = ad[ia * ca + if ca == 1 { 0 } else { j }];
                let y = bd[ib * cb + if cb == 1 { 0 } else { j }];
                data.push(f(x, y));
            }
        }
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v * k).collect())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Scale(x, k), rg))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| v + k).collect())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::AddScalar(x), rg))
    }

    // ---- linear algebra and reductions --------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        if src.shape().len() != 2 {
            return Err(TensorError::Shape {
                op: "transpose",
                lhs: src.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (src.shape()[0], src.shape()[1]);
        let value = Tensor::new(vec![c, r], transposed(src.data(), r, c))?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.nodes[x.0].value.len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Softmax along the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        check_finite(src, "softmax")?;
        let (r, c) = src.dims2();
        let mut data = src.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        debug_assert_eq!(data.len(), r * c);
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// `log(softmax(x))` along the last axis via log-sum-exp.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        check_finite(src, "log_softmax")?;
        let (_, c) = src.dims2();
        let mut data = src.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::LogSoftmax(x), rg))
    }

    // ---- structural ---------------------------------------------------

    /// Concatenates 2-D tensors (rank-1 inputs are treated as one row)
    /// along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(TensorError::Contract(format!(
                "concat of {} parts on axis {axis}",
                parts.len()
            )));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|p| self.nodes[p.0].value.dims2()).collect();
        let (r0, c0) = dims[0];
        for (p, &(r, c)) in parts.iter().zip(&dims) {
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: self.nodes[parts[0].0].value.shape().to_vec(),
                    rhs: self.nodes[p.0].value.shape().to_vec(),
                });
            }
        }
        let value = if axis == 0 {
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.data());
            }
            Tensor::new(vec![rows, c0], data)?
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for (p, &(_, c)) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&self.nodes[p.0].value.data()[i * c..(i + 1) * c]);
                }
            }
            let shape = if r0 == 1 && parts.iter().all(|p| self.nodes[p.0].value.shape().len() == 1) {
                vec![cols]
            } else {
                vec![r0, cols]
            };
            Tensor::new(shape, data)?
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Columns `start..start+len` of the 2-D view.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let (r, c) = src.dims2();
        if len == 0 || start + len > c {
            return Err(TensorError::Shape {
                op: "slice_cols",
                lhs: src.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src.data()[i * c + start..i * c + start + len]);
        }
        let value = Tensor::new(vec![r, len], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceCols { src: x, start }, rg))
    }

    /// Rows `start..start+len` of the 2-D view.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let (r, c) = src.dims2();
        if len == 0 || start + len > r {
            return Err(TensorError::Shape {
                op: "slice_rows",
                lhs: src.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let value = Tensor::new(vec![len, c], src.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceRows { src: x, start }, rg))
    }

    /// Row lookup: output row `i` is `x[index[i]]`. Gradients scatter-add
    /// back into the looked-up rows only.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let (r, c) = src.dims2();
        if index.is_empty() {
            return Err(TensorError::Contract("gather_rows with empty index".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(TensorError::Contract(format!(
                "row index {bad} out of range for {r} rows"
            )));
        }
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(&src.data()[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(vec![index.len(), c], data)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::GatherRows {
                src: x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    // ---- backward -----------------------------------------------------

    /// Propagates d(loss)/d(node) back through the tape and adds the
    /// result into every tracked leaf's accumulator. Calling it twice
    /// without [`Graph::zero_grads`] doubles the leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    match &mut self.leaf_grads[i] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(g),
                    }
                    continue;
                }
                op => self.propagate(op, i, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[i].value;
        match op {
            Op::Leaf => {}
            Op::Unary(u, x) => {
                let xv = self.nodes[x.0].value.data();
                let y = out.data();
                let local: Vec<f64> = match u {
                    Unary::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Unary::Sigmoid => g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    Unary::Relu | Unary::Max0 => {
                        g.iter().zip(xv).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect()
                    }
                    Unary::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                    Unary::Square => g.iter().zip(xv).map(|(g, x)| 2.0 * g * x).collect(),
                    Unary::Neg => g.iter().map(|g| -g).collect(),
                    Unary::Ln => g.iter().zip(xv).map(|(g, x)| g / x).collect(),
                };
                self.acc(grads, *x, local);
            }
            Op::Binary(op, a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (r, c) = out.dims2();
                let (ra, ca) = av.dims2();
                let (rb, cb) = bv.dims2();
                let need_a = self.rg(*a);
                let need_b = self.rg(*b);
                let mut ga = need_a.then(|| vec![0.0; av.len()]);
                let mut gb = need_b.then(|| vec![0.0; bv.len()]);
                for ii in 0..r {
                    let ia = if ra == 1 { 0 } else { ii };
                    let ib = if rb == 1 { 0 } else { ii };
                    for jj in 0..c {
                        let ka = ia * ca + if ca == 1 { 0 } else { jj };
                        let kb = ib * cb + if cb == 1 { 0 } else { jj };
                        let gi = g[ii * c + jj];
                        let (da, db) = match op {
                            Binary::Add => (gi, gi),
                            Binary::Sub => (gi, -gi),
                            Binary::Mul => (gi * bv.data()[kb], gi * av.data()[ka]),
                        };
                        if let Some(ga) = &mut ga {
                            ga[ka] += da;
                        }
                        if let Some(gb) = &mut gb {
                            gb[kb] += db;
                        }
                    }
                }
                if let Some(ga) = ga {
                    self.acc(grads, *a, ga);
                }
                if let Some(gb) = gb {
                    self.acc(grads, *b, gb);
                }
            }
            Op::Scale(x, k) => self.acc(grads, *x, g.iter().map(|g| g * k).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => self.acc(grads, *x, g.to_vec()),
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.rg(*a) {
                    // dA = dC · Bᵀ
                    let bt = transposed(bv.data(), k, n);
                    let mut da = vec![0.0; m * k];
                    matmul_into(g, &bt, &mut da, m, n, k);
                    self.acc(grads, *a, da);
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let at = transposed(av.data(), m, k);
                    let mut db = vec![0.0; k * n];
                    matmul_into(&at, g, &mut db, k, m, n);
                    self.acc(grads, *b, db);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                self.acc(grads, *x, transposed(g, r, c));
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.len();
                self.acc(grads, *x, vec![g[0]; n]);
            }
            Op::Softmax(x) => {
                let (_, c) = out.dims2();
                let mut dx = vec![0.0; g.len()];
                for ((y, gr), d) in out.data().chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        d[j] = y[j] * (gr[j] - dot);
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::LogSoftmax(x) => {
                let (_, c) = out.dims2();
                let mut dx = vec![0.0; g.len()];
                for ((y, gr), d) in out.data().chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..c {
                        d[j] = gr[j] - y[j].exp() * total;
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::Concat { parts, axis } => {
                let (r, c) = out.dims2();
                if *axis == 0 {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        if self.rg(*p) {
                            self.acc(grads, *p, g[off..off + n].to_vec());
                        }
                        off += n;
                    }
                } else {
                    let mut col = 0;
                    for p in parts {
                        let (_, pc) = self.nodes[p.0].value.dims2();
                        if self.rg(*p) {
                            let mut dp = Vec::with_capacity(r * pc);
                            for ii in 0..r {
                                dp.extend_from_slice(&g[ii * c + col..ii * c + col + pc]);
                            }
                            self.acc(grads, *p, dp);
                        }
                        col += pc;
                    }
                }
            }
            Op::SliceCols { src, start } => {
                let (r, c) = self.nodes[src.0].value.dims2();
                let len = out.dims2().1;
                let mut d = vec![0.0; r * c];
                for ii in 0..r {
                    d[ii * c + start..ii * c + start + len].copy_from_slice(&g[ii * len..(ii + 1) * len]);
                }
                self.acc(grads, *src, d);
            }
            Op::SliceRows { src, start } => {
                let sv = &self.nodes[src.0].value;
                let (_, c) = sv.dims2();
                let mut d = vec![0.0; sv.len()];
                d[start * c..start * c + g.len()].copy_from_slice(g);
                self.acc(grads, *src, d);
            }
            Op::GatherRows { src, index } => {
                let sv = &self.nodes[src.0].value;
                let (_, c) = sv.dims2();
                let mut d = vec![0.0; sv.len()];
                for (k, &row) in index.iter().enumerate() {
                    for j in 0..c {
                        d[row * c + j] += g[k * c + j];
                    }
                }
                self.acc(grads, *src, d);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(a) => a.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Clears leaf gradient accumulators.
    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }
}

fn bdim(a: usize, b: usize) -> Option<usize> {
    if a == b || b == 1 {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else {
        None
    }
}

fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
    if t.data().iter().any(|v| v.is_nan()) {
        return Err(TensorError::Numeric {
            op,
            detail: "NaN input".into(),
        });
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn transposed(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

/// `out[m×n] += a[m×k] · b[k×n]`, i-k-j loop order.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}
