//! Tensor-in, tensor-out forms of the graph ops, for callers that do not
//! need gradients.

use super::graph::{Graph, Mode};
use super::layers::{self, AttentionParams, EncoderLayerParams};
use super::params::ParamStore;
use super::Tensor;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::<T>::detached();
    let (a, b) = (g.input(a.clone(), false), g.input(b.clone(), false));
    let c = g.matmul(a, b)?;
    Ok(g.value(c).clone())
}

/// 3×3, stride-1, pad-1 convolution of `[c_in × h × w]` by `[c_out × c_in × 3 × 3]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::<T>::detached();
    let (x, w, b) = (
        g.input(x.clone(), false),
        g.input(w.clone(), false),
        g.input(bias.clone(), false),
    );
    let y = g.conv3x3(x, w, b)?;
    Ok(g.value(y).clone())
}

pub fn maxpool2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::<T>::detached();
    let x = g.input(x.clone(), false);
    let y = g.maxpool2(x)?;
    Ok(g.value(y).clone())
}

/// Softmax along `axis` of an n-d tensor.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(shape_err!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let max = (0..len)
                .map(|k| data[at(k)])
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..len {
                let e = (data[at(k)] - max).exp();
                data[at(k)] = e;
                total += e;
            }
            for k in 0..len {
                data[at(k)] /= total;
            }
        }
    }
    Ok(out)
}

pub fn scaled_dot_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::<T>::detached();
    let (q, k, v) = (
        g.input(q.clone(), false),
        g.input(k.clone(), false),
        g.input(v.clone(), false),
    );
    let y = layers::scaled_dot_attention(&mut g, q, k, v)?;
    Ok(g.value(y).clone())
}

pub fn multi_head_attention<T: Scalar>(
    f_alpha: &Tensor<T>,
    f_beta: &Tensor<T>,
    store: &ParamStore<T>,
    p: &AttentionParams,
) -> Result<Tensor<T>> {
    let mut g = Graph::new(store);
    let (a, b) = (
        g.input(f_alpha.clone(), false),
        g.input(f_beta.clone(), false),
    );
    let y = layers::multi_head_attention(&mut g, a, b, p)?;
    Ok(g.value(y).clone())
}

/// Evaluation-mode (no dropout) encoder layer.
pub fn transformer_encoder_layer<T: Scalar>(
    x: &Tensor<T>,
    store: &ParamStore<T>,
    p: &EncoderLayerParams,
) -> Result<Tensor<T>> {
    let mut g = Graph::new(store).with_mode(Mode::default());
    let x = g.input(x.clone(), false);
    let y = p.forward(&mut g, x)?;
    Ok(g.value(y).clone())
}

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::<T>::detached();
    let (x, ga, b) = (
        g.input(x.clone(), false),
        g.input(gain.clone(), false),
        g.input(bias.clone(), false),
    );
    let y = g.layer_norm(x, ga, b)?;
    Ok(g.value(y).clone())
}

pub fn bce_loss<T: Scalar>(logit: T, target: bool) -> T {
    let mut g = Graph::<T>::detached();
    let z = g.input(Tensor::scalar(logit), false);
    let l = g.bce_with_logit(z, target).expect("scalar logit");
    g.value(l).data()[0]
}

pub fn ce_loss<T: Scalar>(logits: &Tensor<T>, class: usize) -> Result<T> {
    let mut g = Graph::<T>::detached();
    let z = g.input(logits.clone(), false);
    let l = g.cross_entropy(z, class)?;
    Ok(g.value(l).data()[0])
}
