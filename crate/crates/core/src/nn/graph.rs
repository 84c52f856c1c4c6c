//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Build a [`Graph`] per forward pass, combine [`Var`]s with the op methods,
//! then call [`Graph::backward`] on a scalar to obtain [`Gradients`] for the
//! parameters and any input leaves that asked for them.

use std::collections::HashMap;

use super::kernels::{col2im3, gemm, im2col3, log_sum_exp, softmax_rows_in_place, View};
use super::params::{ParamId, ParamStore};
use super::rng::DropoutKey;
use super::Tensor;
use crate::error::{shape_err, validation_err, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Param(ParamId),
    Owned(Tensor<T>),
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<T>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    Bce {
        z: Var,
        target: T,
    },
    Ce {
        logits: Var,
        class: usize,
        probs: Vec<T>,
    },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    dense: HashMap<ParamId, Vec<T>>,
    /// Row gradients of gathered parameter tables: (param, row, grad).
    sparse: Vec<(ParamId, usize, Vec<T>)>,
    inputs: HashMap<Var, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of an input leaf created with `requires_grad = true`.
    pub fn input(&self, v: Var) -> Option<&[T]> {
        self.inputs.get(&v).map(Vec::as_slice)
    }

    /// Dense gradient of a parameter (sparse row contributions included).
    pub fn param(&self, id: ParamId, store: &ParamStore<T>) -> Vec<T> {
        let t = store.get(id);
        let mut g = self
            .dense
            .get(&id)
            .cloned()
            .unwrap_or_else(|| vec![T::zero(); t.len()]);
        let cols = t.cols();
        for (pid, row, rg) in &self.sparse {
            if *pid == id {
                for (d, &v) in g[row * cols..(row + 1) * cols].iter_mut().zip(rg) {
                    *d += v;
                }
            }
        }
        g
    }

    /// Add `scale ×` these gradients into the parameters' gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>, scale: T) {
        for (&id, g) in &self.dense {
            store.get_mut(id).accumulate_grad(g, scale);
        }
        for (id, row, g) in &self.sparse {
            store.get_mut(*id).accumulate_grad_row(*row, g, scale);
        }
    }
}

/// Per-pass settings that affect stochastic ops.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mode {
    pub train: bool,
    pub dropout_key: DropoutKey,
}

pub struct Graph<'p, T: Scalar> {
    store: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    mode: Mode,
}

fn dims(t: &Tensor<impl Scalar>) -> (usize, usize) {
    match t.shape() {
        [r, c] => (*r, *c),
        [n] => (1, *n),
        s => (s[0], s[1..].iter().product()),
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            mode: Mode::default(),
        }
    }

    /// A graph without parameters (inputs only).
    pub fn detached() -> Graph<'static, T> {
        Graph {
            store: None,
            nodes: Vec::new(),
            mode: Mode::default(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("parameter node without store").get(*id),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "numeric fault: non-finite value produced by graph op"
        );
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant or differentiable input leaf.
    pub fn input(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(self.store.is_some(), "graph has no parameter store");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `op(a) · op(b)` for 2-D operands, `op` being optional transposition.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        let av = View::new(self.value(a).data(), ar, ac).maybe_t(ta);
        let bv = View::new(self.value(b).data(), br, bc).maybe_t(tb);
        if av.cols != bv.rows {
            return Err(shape_err!(
                "matmul inner dimensions differ: {}x{} · {}x{}",
                av.rows,
                av.cols,
                bv.rows,
                bv.cols
            ));
        }
        let (m, n) = (av.rows, bv.cols);
        let mut out = vec![T::zero(); m * n];
        gemm(av, bv, &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, ta, tb },
            needs,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err!("add of {:?} and {:?}", x.shape(), y.shape()));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p + q)
            .collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    /// Broadcast-add a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = dims(self.value(x));
        if self.value(row).len() != c {
            return Err(shape_err!(
                "row vector of {} for {c} columns",
                self.value(row).len()
            ));
        }
        let bias = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (v, &b) in chunk.iter_mut().zip(bias) {
                *v += b;
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?;
        debug_assert_eq!(t.len(), r * c);
        let needs = self.needs(x) || self.needs(row);
        Ok(self.push(t, Op::AddRow(x, row), needs))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x).map(|v| v * s);
        let needs = self.needs(x);
        self.push(t, Op::Scale(x, s), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(T::zero()));
        let needs = self.needs(x);
        self.push(t, Op::Relu(x), needs)
    }

    /// 3×3 convolution, stride 1, zero padding 1, per-channel bias.
    ///
    /// `x` is `[c_in × h × w]`, `w` is `[c_out × c_in × 3 × 3]`, `b` is `[c_out]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
        );
        let [c_in, h, wd] = xs[..] else {
            return Err(shape_err!("conv input must be [c × h × w], got {xs:?}"));
        };
        let [c_out, wc_in, 3, 3] = ws[..] else {
            return Err(shape_err!(
                "conv kernel must be [c_out × c_in × 3 × 3], got {ws:?}"
            ));
        };
        if wc_in != c_in {
            return Err(shape_err!(
                "conv kernel expects {wc_in} input channels, got {c_in}"
            ));
        }
        if self.value(b).len() != c_out {
            return Err(shape_err!(
                "conv bias has {} entries for {c_out} channels",
                self.value(b).len()
            ));
        }
        let hw = h * wd;
        let cols = im2col3(self.value(x).data(), c_in, h, wd);
        let mut out = vec![T::zero(); c_out * hw];
        for (o, chunk) in out.chunks_mut(hw).enumerate() {
            let bias = self.value(b).data()[o];
            chunk.iter_mut().for_each(|v| *v = bias);
        }
        gemm(
            View::new(self.value(w).data(), c_out, c_in * 9),
            View::new(&cols, c_in * 9, hw),
            &mut out,
            true,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let cols = if self.needs(w) { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::new(vec![c_out, h, wd], out)?,
            Op::Conv3x3 { x, w, b, cols },
            needs,
        ))
    }

    /// 2×2 max pooling, stride 2; a trailing odd row/column is dropped.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let [c, h, w] = xs[..] else {
            return Err(shape_err!("pool input must be [c × h × w], got {xs:?}"));
        };
        if h < 2 || w < 2 {
            return Err(shape_err!("pool input {h}x{w} smaller than the 2x2 window"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * xo;
                    let mut best = base;
                    for idx in [base + 1, base + w, base + w + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![c, oh, ow], out)?,
            Op::MaxPool2 { x, argmax },
            needs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose2()?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Transpose(x), needs))
    }

    /// Softmax over the last axis of a 2-D tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, c) = self.value(x).dims2()?;
        let mut t = self.value(x).clone();
        softmax_rows_in_place(t.data_mut(), c);
        let needs = self.needs(x);
        Ok(self.push(t, Op::SoftmaxRows(x), needs))
    }

    /// Row-wise normalization (ε = 1e-5) followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(shape_err!(
                "layer norm affine parameters must have {c} entries"
            ));
        }
        let eps = T::c(1e-5);
        let n = T::from_usize_lossy(c);
        let (g, bvec) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = self.value(x).row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + bvec[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::new(vec![r, c], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Inverted dropout keyed by `site`; identity outside training or at p = 0.
    pub fn dropout(&mut self, x: Var, p: f64, site: u64) -> Var {
        if !self.mode.train || p <= 0.0 {
            return x;
        }
        let keep = T::c(1.0 / (1.0 - p));
        let key = self.mode.dropout_key;
        let mask: Vec<T> = (0..self.value(x).len() as u64)
            .map(|i| {
                if key.uniform(site, i) >= p {
                    keep
                } else {
                    T::zero()
                }
            })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(t, Op::Dropout { x, mask }, needs)
    }

    /// Column means of an `r×c` matrix as a `1×c` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if r == 0 {
            return Err(shape_err!("mean over zero rows"));
        }
        let inv = T::one() / T::from_usize_lossy(r);
        let mut out = vec![T::zero(); c];
        for row in self.value(x).data().chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(vec![1, c], out)?, Op::MeanRows(x), needs))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let shapes: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).dims2())
            .collect::<Result<_>>()?;
        let rows = shapes.first().map_or(0, |s| s.0);
        if shapes.iter().any(|s| s.0 != rows) {
            return Err(shape_err!(
                "concat of matrices with differing row counts {shapes:?}"
            ));
        }
        let total: usize = shapes.iter().map(|s| s.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            needs,
        ))
    }

    /// Rows of `table` selected by `idx`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.value(table).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(validation_err!("index {bad} outside table of {r} rows"));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(self.value(table).row(i));
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::new(vec![idx.len(), c], out)?,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Binary cross-entropy on a single logit, `max(z,0) − z·y + ln(1+e^{−|z|})`.
    pub fn bce_with_logit(&mut self, z: Var, target: bool) -> Result<Var> {
        if self.value(z).len() != 1 {
            return Err(shape_err!(
                "BCE expects a single logit, got {:?}",
                self.value(z).shape()
            ));
        }
        let zv = self.value(z).data()[0];
        let y = if target { T::one() } else { T::zero() };
        let loss = zv.max(T::zero()) - zv * y + (T::one() + (-zv.abs()).exp()).ln();
        let needs = self.needs(z);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { z, target: y }, needs))
    }

    /// Cross-entropy `−log softmax(logits)[class]`.
    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if class >= z.len() {
            return Err(validation_err!(
                "class {class} out of range for {} logits",
                z.len()
            ));
        }
        let lse = log_sum_exp(z);
        let loss = lse - z[class];
        let probs = z.iter().map(|&v| (v - lse).exp()).collect();
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Ce {
                logits,
                class,
                probs,
            },
            needs,
        ))
    }

    /// `Σ wᵢ · xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(shape_err!("weighted sum term is not a scalar"));
            }
            total += w * self.value(v).data()[0];
        }
        let needs = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum(terms.to_vec()),
            needs,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        let mut out = Gradients {
            dense: HashMap::new(),
            sparse: Vec::new(),
            inputs: HashMap::new(),
        };

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => match node.value {
                    Value::Param(id) => match out.dense.get_mut(&id) {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a += v),
                        None => {
                            out.dense.insert(id, g);
                        }
                    },
                    Value::Owned(_) => {
                        out.inputs.insert(Var(i), g);
                    }
                },
                Op::MatMul { a, b, ta, tb } => {
                    let (ar, ac) = self.value(*a).dims2()?;
                    let (br, bc) = self.value(*b).dims2()?;
                    let av = View::new(self.value(*a).data(), ar, ac);
                    let bv = View::new(self.value(*b).data(), br, bc);
                    let (m, n) = (if *ta { ac } else { ar }, if *tb { br } else { bc });
                    let gv = View::new(&g, m, n);
                    if self.needs(*a) {
                        let mut da = vec![T::zero(); ar * ac];
                        if *ta {
                            // A stored k×m: dA = op(B) · dCᵀ
                            gemm(bv.maybe_t(*tb), gv.t(), &mut da, false);
                        } else {
                            gemm(gv, bv.maybe_t(*tb).t(), &mut da, false);
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = vec![T::zero(); br * bc];
                        if *tb {
                            // B stored n×k: dB = dCᵀ · op(A)
                            gemm(gv.t(), av.maybe_t(*ta), &mut db, false);
                        } else {
                            gemm(av.maybe_t(*ta).t(), gv, &mut db, false);
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.needs(*row) {
                        let c = self.value(*row).len();
                        let mut dr = vec![T::zero(); c];
                        for chunk in g.chunks(c) {
                            dr.iter_mut().zip(chunk).for_each(|(d, &v)| *d += v);
                        }
                        accumulate(&mut grads, *row, dr);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    accumulate(&mut grads, *x, g.into_iter().map(|v| v * s).collect());
                }
                Op::Relu(x) => {
                    let src = self.value(*x).data();
                    let dx = g
                        .iter()
                        .zip(src)
                        .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Conv3x3 { x, w, b, cols } => {
                    let xs = self.value(*x).shape();
                    let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
                    let hw = h * wd;
                    let c_out = self.value(*w).shape()[0];
                    let gv = View::new(&g, c_out, hw);
                    if self.needs(*b) {
                        let db = g.chunks(hw).map(|ch| ch.iter().copied().sum()).collect();
                        accumulate(&mut grads, *b, db);
                    }
                    if self.needs(*w) {
                        let mut dw = vec![T::zero(); c_out * c_in * 9];
                        gemm(gv, View::new(cols, c_in * 9, hw).t(), &mut dw, false);
                        accumulate(&mut grads, *w, dw);
                    }
                    if self.needs(*x) {
                        let mut dcols = vec![T::zero(); c_in * 9 * hw];
                        gemm(
                            View::new(self.value(*w).data(), c_out, c_in * 9).t(),
                            gv,
                            &mut dcols,
                            false,
                        );
                        accumulate(&mut grads, *x, col2im3(&dcols, c_in, h, wd));
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    for (&src, &d) in argmax.iter().zip(&g) {
                        dx[src] += d;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, g),
                Op::Transpose(x) => {
                    let (r, c) = self.value(*x).dims2()?;
                    let t = Tensor::new(vec![c, r], g)?.transpose2()?;
                    accumulate(&mut grads, *x, t.into_data());
                }
                Op::SoftmaxRows(x) => {
                    let y = self.value(Var(i));
                    let c = y.cols();
                    let mut dx = vec![T::zero(); g.len()];
                    for ((dxr, yr), gr) in dx.chunks_mut(c).zip(y.data().chunks(c)).zip(g.chunks(c))
                    {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yv), &gv) in dxr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let c = self.value(*gain).len();
                    let gain_v = self.value(*gain).data();
                    if self.needs(*gain) || self.needs(*bias) {
                        let mut dg = vec![T::zero(); c];
                        let mut db = vec![T::zero(); c];
                        for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                            for j in 0..c {
                                dg[j] += gr[j] * hr[j];
                                db[j] += gr[j];
                            }
                        }
                        if self.needs(*gain) {
                            accumulate(&mut grads, *gain, dg);
                        }
                        if self.needs(*bias) {
                            accumulate(&mut grads, *bias, db);
                        }
                    }
                    if self.needs(*x) {
                        let n = T::from_usize_lossy(c);
                        let mut dx = vec![T::zero(); g.len()];
                        for (r, ((dxr, gr), hr)) in dx
                            .chunks_mut(c)
                            .zip(g.chunks(c))
                            .zip(xhat.chunks(c))
                            .enumerate()
                        {
                            let dh: Vec<T> = gr.iter().zip(gain_v).map(|(&a, &b)| a * b).collect();
                            let sum_dh: T = dh.iter().copied().sum();
                            let sum_dh_h: T = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum();
                            let k = inv_std[r] / n;
                            for j in 0..c {
                                dxr[j] = k * (n * dh[j] - sum_dh - hr[j] * sum_dh_h);
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Dropout { x, mask } => {
                    accumulate(
                        &mut grads,
                        *x,
                        g.iter().zip(mask).map(|(&d, &m)| d * m).collect(),
                    );
                }
                Op::MeanRows(x) => {
                    let (r, _) = self.value(*x).dims2()?;
                    let inv = T::one() / T::from_usize_lossy(r);
                    let row: Vec<T> = g.iter().map(|&v| v * inv).collect();
                    accumulate(&mut grads, *x, row.repeat(r));
                }
                Op::ConcatCols(parts) => {
                    let rows = self.value(Var(i)).rows();
                    let total = self.value(Var(i)).cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if self.needs(p) {
                            let mut dp = Vec::with_capacity(rows * c);
                            for r in 0..rows {
                                dp.extend_from_slice(
                                    &g[r * total + offset..r * total + offset + c],
                                );
                            }
                            accumulate(&mut grads, p, dp);
                        }
                        offset += c;
                    }
                }
                Op::Gather { table, idx } => {
                    let c = self.value(*table).cols();
                    match self.nodes[table.0].value {
                        Value::Param(id) if matches!(self.nodes[table.0].op, Op::Leaf) => {
                            for (k, &row) in idx.iter().enumerate() {
                                out.sparse.push((id, row, g[k * c..(k + 1) * c].to_vec()));
                            }
                        }
                        _ => {
                            let mut dt = vec![T::zero(); self.value(*table).len()];
                            for (k, &row) in idx.iter().enumerate() {
                                for j in 0..c {
                                    dt[row * c + j] += g[k * c + j];
                                }
                            }
                            accumulate(&mut grads, *table, dt);
                        }
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Bce { z, target } => {
                    let zv = self.value(*z).data()[0];
                    let sig = T::one() / (T::one() + (-zv).exp());
                    accumulate(&mut grads, *z, vec![g[0] * (sig - *target)]);
                }
                Op::Ce {
                    logits,
                    class,
                    probs,
                } => {
                    let mut d: Vec<T> = probs.iter().map(|&p| p * g[0]).collect();
                    d[*class] -= g[0];
                    accumulate(&mut grads, *logits, d);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        if self.needs(v) {
                            accumulate(&mut grads, v, vec![g[0] * w]);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
