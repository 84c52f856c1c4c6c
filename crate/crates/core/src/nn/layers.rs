//! Parameterized building blocks: linear maps, multi-head attention and the
//! post-norm transformer encoder layer.

use std::cmp::Ordering;

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{uniform, xavier_bound, ParamId, ParamStore};
use super::Tensor;
use crate::error::{config_err, shape_err, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, vec![d_in, d_out], xavier_bound(d_in, d_out)),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(vec![d_out])));
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Per-head projections `W_Q^i, W_K^i, W_V^i` (`d_model × d`) and the output
/// projection `W_O` (`H·d × d_model`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Vec<ParamId>,
    pub w_k: Vec<ParamId>,
    pub w_v: Vec<ParamId>,
    pub w_o: ParamId,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttentionParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(config_err!("{heads} heads do not divide d_model {d_model}"));
        }
        let d = d_model / heads;
        let bound = xavier_bound(d_model, d_model);
        let mut proj = |kind: &str| -> Vec<ParamId> {
            (0..heads)
                .map(|h| {
                    store.add(
                        format!("{name}.w_{kind}.{h}"),
                        uniform(rng, vec![d_model, d], bound),
                    )
                })
                .collect()
        };
        let (w_q, w_k, w_v) = (proj("q"), proj("k"), proj("v"));
        let w_o = store.add(
            format!("{name}.w_o"),
            uniform(rng, vec![heads * d, d_model], bound),
        );
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o,
            heads,
            head_dim: d,
        })
    }

    /// Register explicitly given matrices.
    pub fn from_tensors<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        w_q: Vec<Tensor<T>>,
        w_k: Vec<Tensor<T>>,
        w_v: Vec<Tensor<T>>,
        w_o: Tensor<T>,
    ) -> Result<Self> {
        let heads = w_q.len();
        if heads == 0 || w_k.len() != heads || w_v.len() != heads {
            return Err(config_err!(
                "need the same non-zero number of Q, K and V head matrices"
            ));
        }
        let (d_model, d) = w_q[0].dims2()?;
        for t in w_q.iter().chain(&w_k).chain(&w_v) {
            if t.dims2()? != (d_model, d) {
                return Err(shape_err!(
                    "head projection {:?}, expected [{d_model}, {d}]",
                    t.shape()
                ));
            }
        }
        if w_o.dims2()? != (heads * d, d_model) {
            return Err(config_err!(
                "W_O is {:?}; H·d = {} must map back to d_model {d_model}",
                w_o.shape(),
                heads * d
            ));
        }
        let mut reg = |kind: &str, ts: Vec<Tensor<T>>| -> Vec<ParamId> {
            ts.into_iter()
                .enumerate()
                .map(|(h, t)| store.add(format!("{name}.w_{kind}.{h}"), t))
                .collect()
        };
        let (w_q, w_k, w_v) = (reg("q", w_q), reg("k", w_k), reg("v", w_v));
        let w_o = store.add(format!("{name}.w_o"), w_o);
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o,
            heads,
            head_dim: d,
        })
    }

    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Key positions sorted by the contents of their key and value rows.
///
/// Attention does not depend on key order, but floating-point sums do; summing
/// in this order makes outputs bit-identical under any permutation of the
/// key/value rows.
fn canonical_key_order<T: Scalar>(k: &Tensor<T>, v: &Tensor<T>) -> Result<Vec<usize>> {
    let rows = k.dims2()?.0;
    let cmp = |a: &[T], b: &[T]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.f64().total_cmp(&y.f64()))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    };
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| cmp(k.row(a), k.row(b)).then_with(|| cmp(v.row(a), v.row(b))));
    Ok(order)
}

/// `softmax(Q·Kᵀ / √d) · V` with `d` the key width.
pub fn scaled_dot_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<Var> {
    let (_, dq) = g.value(q).dims2()?;
    let (nk, dk) = g.value(k).dims2()?;
    let (nv, _) = g.value(v).dims2()?;
    if dq != dk {
        return Err(shape_err!("query width {dq} differs from key width {dk}"));
    }
    if nk != nv {
        return Err(shape_err!("{nk} keys but {nv} values"));
    }
    let order = canonical_key_order(g.value(k), g.value(v))?;
    let (k, v) = match order.iter().enumerate().all(|(i, &j)| i == j) {
        true => (k, v),
        false => (g.gather(k, &order)?, g.gather(v, &order)?),
    };
    let scores = g.matmul_t(q, k, false, true)?;
    let scaled = g.scale(scores, T::one() / T::from_usize_lossy(dk).sqrt());
    let weights = g.softmax_rows(scaled)?;
    g.matmul(weights, v)
}

/// Queries from `f_alpha`, keys and values from `f_beta`; heads are
/// concatenated and projected by `W_O`.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    f_alpha: Var,
    f_beta: Var,
    p: &AttentionParams,
) -> Result<Var> {
    let (_, da) = g.value(f_alpha).dims2()?;
    let (_, db) = g.value(f_beta).dims2()?;
    if da != p.d_model() || db != p.d_model() {
        return Err(config_err!(
            "attention with H·d = {} applied to inputs of width {da} and {db}",
            p.d_model()
        ));
    }
    let mut heads = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (wq, wk, wv) = (g.param(p.w_q[h]), g.param(p.w_k[h]), g.param(p.w_v[h]));
        let q = g.matmul(f_alpha, wq)?;
        let k = g.matmul(f_beta, wk)?;
        let v = g.matmul(f_beta, wv)?;
        heads.push(scaled_dot_attention(g, q, k, v)?);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let wo = g.param(p.w_o);
    g.matmul(cat, wo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub attn: AttentionParams,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
    pub dropout: f64,
    /// Distinguishes this layer's dropout masks from other layers'.
    pub site: u64,
}

impl EncoderLayerParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        ffn: usize,
        dropout: f64,
        site: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let attn = AttentionParams::new(store, &format!("{name}.attn"), d_model, heads, rng)?;
        let norm1_gain = store.add(
            format!("{name}.norm1.gain"),
            Tensor::full(vec![d_model], T::one()),
        );
        let norm1_bias = store.add(format!("{name}.norm1.bias"), Tensor::zeros(vec![d_model]));
        let ff1 = Linear::new(store, &format!("{name}.ff1"), d_model, ffn, true, rng);
        let ff2 = Linear::new(store, &format!("{name}.ff2"), ffn, d_model, true, rng);
        let norm2_gain = store.add(
            format!("{name}.norm2.gain"),
            Tensor::full(vec![d_model], T::one()),
        );
        let norm2_bias = store.add(format!("{name}.norm2.bias"), Tensor::zeros(vec![d_model]));
        Ok(Self {
            attn,
            norm1_gain,
            norm1_bias,
            ff1,
            ff2,
            norm2_gain,
            norm2_bias,
            dropout,
            site,
        })
    }

    /// Post-norm layer: `x₁ = LN(x + Drop(MHA(x, x)))`, `y = LN(x₁ + Drop(FFN(x₁)))`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = multi_head_attention(g, x, x, &self.attn)?;
        let a = g.dropout(a, self.dropout, self.site * 2);
        let r1 = g.add(x, a)?;
        let (g1, b1) = (g.param(self.norm1_gain), g.param(self.norm1_bias));
        let x1 = g.layer_norm(r1, g1, b1)?;
        let h = self.ff1.forward(g, x1)?;
        let h = g.relu(h);
        let f = self.ff2.forward(g, h)?;
        let f = g.dropout(f, self.dropout, self.site * 2 + 1);
        let r2 = g.add(x1, f)?;
        let (g2, b2) = (g.param(self.norm2_gain), g.param(self.norm2_bias));
        g.layer_norm(r2, g2, b2)
    }
}

/// Sinusoidal position table: `sin(p / 10000^{2i/d})` at even columns,
/// `cos` at odd columns.
pub fn sinusoidal_positions<T: Scalar>(n: usize, d_model: usize) -> Result<Tensor<T>> {
    if !d_model.is_multiple_of(2) {
        return Err(config_err!(
            "positional encoding needs an even d_model, got {d_model}"
        ));
    }
    let mut t = Tensor::zeros(vec![n, d_model]);
    for pos in 0..n {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            t.set(pos, 2 * i, T::c(angle.sin()));
            t.set(pos, 2 * i + 1, T::c(angle.cos()));
        }
    }
    Ok(t)
}
