use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, CONV_CHANNELS};
use super::label::{EmotionLabel, Quadrant};
use crate::error::{config_err, validation_err, Result};
use crate::nn::{
    kaiming_bound, multi_head_attention, sinusoidal_positions, uniform, AttentionParams,
    EncoderLayerParams, Graph, Linear, Mode, ParamId, ParamStore, Tensor, Var,
};
use crate::scalar::Scalar;
use crate::symbolic::{SymbolicToken, Vocabulary};

#[derive(Debug, Clone)]
struct AcousticEncoder {
    convs: Vec<(ParamId, ParamId)>,
    proj: Linear,
}

#[derive(Debug, Clone)]
struct SymbolicEncoder {
    tables: [ParamId; 5],
    proj: Linear,
    layers: Vec<EncoderLayerParams>,
}

/// Relative weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub q: f64,
    pub arousal: f64,
    pub valence: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            q: 1.0,
            arousal: 1.0,
            valence: 1.0,
        }
    }
}

impl LossWeights {
    pub fn single_loss() -> Self {
        Self {
            q: 1.0,
            arousal: 0.0,
            valence: 0.0,
        }
    }
}

/// Logits of one forward pass. A branch head that the configuration
/// removes reports a logit of zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOutput<T> {
    pub q_logits: [T; 4],
    pub arousal_logit: T,
    pub valence_logit: T,
}

/// Loss value and its weighted components (`total = q + arousal + valence`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub q: f64,
    pub arousal: f64,
    pub valence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub quadrant: Quadrant,
    pub valence: bool,
    pub arousal: bool,
    pub aux_valence: bool,
    pub aux_arousal: bool,
    pub q_probabilities: [f64; 4],
}

/// Graph nodes of a forward pass; heads absent from the configuration are `None`.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub q_logits: Var,
    pub arousal_logit: Option<Var>,
    pub valence_logit: Option<Var>,
}

/// Scalar loss nodes; `total` is what training differentiates.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub q: Var,
    pub arousal: Option<Var>,
    pub valence: Option<Var>,
}

/// Conv acoustic encoder, transformer symbolic encoder, bidirectional
/// cross-domain attention and the three classification heads.
#[derive(Debug)]
pub struct EmotionModel<T: Scalar> {
    config: ModelConfig,
    vocab: Vocabulary,
    params: ParamStore<T>,
    acoustic: Option<AcousticEncoder>,
    symbolic: Option<SymbolicEncoder>,
    cda: Option<[AttentionParams; 2]>,
    arousal_head: Option<Linear>,
    valence_head: Option<Linear>,
    hidden: Linear,
    output: Linear,
    positions: Option<Tensor<T>>,
    symbolic_calls: AtomicUsize,
}

impl<T: Scalar> Clone for EmotionModel<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            vocab: self.vocab,
            params: self.params.clone(),
            acoustic: self.acoustic.clone(),
            symbolic: self.symbolic.clone(),
            cda: self.cda.clone(),
            arousal_head: self.arousal_head.clone(),
            valence_head: self.valence_head.clone(),
            hidden: self.hidden.clone(),
            output: self.output.clone(),
            positions: self.positions.clone(),
            symbolic_calls: AtomicUsize::new(0),
        }
    }
}

impl<T: Scalar> EmotionModel<T> {
    /// Freshly initialized model: Kaiming-uniform convolutions, Xavier-uniform
    /// linear maps, zero biases.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.sizes().contains(&0) {
            return Err(config_err!("empty token vocabulary {vocab:?}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.d_model();
        let branches = config.branches;

        let acoustic = branches.acoustic().then(|| {
            let mut c_in = 1;
            let mut convs = Vec::new();
            for (i, &c_out) in CONV_CHANNELS.iter().enumerate() {
                let w = params.add(
                    format!("acoustic.conv{i}.weight"),
                    uniform(&mut rng, vec![c_out, c_in, 3, 3], kaiming_bound(c_in * 9)),
                );
                let b = params.add(format!("acoustic.conv{i}.bias"), Tensor::zeros(vec![c_out]));
                convs.push((w, b));
                c_in = c_out;
            }
            let proj = Linear::new(&mut params, "acoustic.proj", c_in, d, true, &mut rng);
            AcousticEncoder { convs, proj }
        });

        let symbolic = match branches.symbolic() {
            true => {
                let s = &config.symbolic;
                let names = ["onset", "harmonic", "velocity", "time_shift", "offset"];
                let bound = (3.0 / s.attr_embed_dim as f64).sqrt();
                let sizes = vocab.sizes();
                let tables = std::array::from_fn(|i| {
                    params.add(
                        format!("symbolic.embed.{}", names[i]),
                        uniform(&mut rng, vec![sizes[i], s.attr_embed_dim], bound),
                    )
                });
                let proj = Linear::new(
                    &mut params,
                    "symbolic.proj",
                    5 * s.attr_embed_dim,
                    d,
                    true,
                    &mut rng,
                );
                let layers = (0..s.layers)
                    .map(|l| {
                        EncoderLayerParams::new(
                            &mut params,
                            &format!("symbolic.layer{l}"),
                            d,
                            s.heads,
                            s.ffn,
                            s.dropout,
                            l as u64,
                            &mut rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(SymbolicEncoder {
                    tables,
                    proj,
                    layers,
                })
            }
            false => None,
        };

        let cda = match (&acoustic, &symbolic) {
            (Some(_), Some(_)) => Some([
                AttentionParams::new(
                    &mut params,
                    "cda.acoustic_query",
                    d,
                    config.cda.heads,
                    &mut rng,
                )?,
                AttentionParams::new(
                    &mut params,
                    "cda.symbolic_query",
                    d,
                    config.cda.heads,
                    &mut rng,
                )?,
            ]),
            _ => None,
        };
        let arousal_head = acoustic
            .is_some()
            .then(|| Linear::new(&mut params, "head.arousal", d, 1, true, &mut rng));
        let valence_head = symbolic
            .is_some()
            .then(|| Linear::new(&mut params, "head.valence", d, 1, true, &mut rng));
        let fused = if cda.is_some() { 2 * d } else { d };
        let hidden = Linear::new(&mut params, "head.q.hidden", fused, d, true, &mut rng);
        let output = Linear::new(&mut params, "head.q.out", d, 4, true, &mut rng);
        let positions = match symbolic.is_some() && config.symbolic.positional_encoding {
            true => Some(sinusoidal_positions(config.symbolic.max_len, d)?),
            false => None,
        };

        Ok(Self {
            config,
            vocab,
            params,
            acoustic,
            symbolic,
            cda,
            arousal_head,
            valence_head,
            hidden,
            output,
            positions,
            symbolic_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// How many times the symbolic encoder has run on this instance.
    pub fn symbolic_calls(&self) -> usize {
        self.symbolic_calls.load(Ordering::Relaxed)
    }

    /// Conv ladder on a `[rows × frames]` feature, returned as a sequence of
    /// `h·w` spatial positions projected to `d_model`.
    pub fn acoustic_encode(&self, g: &mut Graph<'_, T>, feat: &Tensor<T>) -> Result<Var> {
        let enc = self
            .acoustic
            .as_ref()
            .ok_or_else(|| config_err!("model has no acoustic branch"))?;
        let a = &self.config.acoustic;
        if feat.shape() != [a.input_rows, a.input_frames] {
            return Err(config_err!(
                "acoustic input {:?} does not match configured [{}, {}]",
                feat.shape(),
                a.input_rows,
                a.input_frames
            ));
        }
        let mut x = g.input(
            feat.clone()
                .reshape(vec![1, a.input_rows, a.input_frames])?,
            false,
        );
        for &(w, b) in &enc.convs {
            let (w, b) = (g.param(w), g.param(b));
            x = g.conv3x3(x, w, b)?;
            x = g.relu(x);
            x = g.maxpool2(x)?;
        }
        let channels = CONV_CHANNELS[2];
        let positions = a.sequence_len();
        let flat = g.reshape(x, vec![channels, positions])?;
        let seq = g.transpose(flat)?;
        enc.proj.forward(g, seq)
    }

    /// Transformer encoding of a token sequence; sequences longer than
    /// `max_len` keep their first `max_len` tokens.
    pub fn symbolic_encode(&self, g: &mut Graph<'_, T>, tokens: &[SymbolicToken]) -> Result<Var> {
        let enc = self
            .symbolic
            .as_ref()
            .ok_or_else(|| config_err!("model has no symbolic branch"))?;
        self.symbolic_calls.fetch_add(1, Ordering::Relaxed);
        if tokens.is_empty() {
            return Err(validation_err!("empty token sequence (clip without notes)"));
        }
        let tokens = &tokens[..tokens.len().min(self.config.symbolic.max_len)];
        for t in tokens {
            self.vocab.check(t)?;
        }
        let mut parts = Vec::with_capacity(5);
        for (attr, &table) in enc.tables.iter().enumerate() {
            let idx: Vec<usize> = tokens
                .iter()
                .map(|t| <[u32; 5]>::from(*t)[attr] as usize)
                .collect();
            let tv = g.param(table);
            parts.push(g.gather(tv, &idx)?);
        }
        let cat = g.concat_cols(&parts)?;
        let mut x = enc.proj.forward(g, cat)?;
        if let Some(pos) = &self.positions {
            let n = tokens.len();
            let d = self.config.d_model();
            let p = g.input(
                Tensor::new(vec![n, d], pos.data()[..n * d].to_vec())?,
                false,
            );
            x = g.add(x, p)?;
        }
        for layer in &enc.layers {
            x = layer.forward(g, x)?;
        }
        Ok(x)
    }

    /// Bidirectional cross-domain attention, each direction mean-pooled;
    /// returns `[1 × 2·d_model]` with the acoustic-query half first.
    pub fn cda_fuse(&self, g: &mut Graph<'_, T>, f_a: Var, f_s: Var) -> Result<Var> {
        let [ac, sy] = self
            .cda
            .as_ref()
            .ok_or_else(|| config_err!("model has no fusion stage"))?;
        let a = multi_head_attention(g, f_a, f_s, ac)?;
        let s = multi_head_attention(g, f_s, f_a, sy)?;
        let (pa, ps) = (g.mean_rows(a)?, g.mean_rows(s)?);
        g.concat_cols(&[pa, ps])
    }

    /// Full forward pass on `g`. Branches removed by the configuration are
    /// never evaluated, and their inputs are ignored.
    pub fn forward_graph(
        &self,
        g: &mut Graph<'_, T>,
        feat: &Tensor<T>,
        tokens: &[SymbolicToken],
    ) -> Result<ForwardVars> {
        let f_a = match self.acoustic {
            Some(_) => Some(self.acoustic_encode(g, feat)?),
            None => None,
        };
        let f_s = match self.symbolic {
            Some(_) => Some(self.symbolic_encode(g, tokens)?),
            None => None,
        };
        let pooled = |g: &mut Graph<'_, T>,
                      f: Option<Var>,
                      head: &Option<Linear>|
         -> Result<Option<(Var, Var)>> {
            match (f, head) {
                (Some(f), Some(h)) => {
                    let p = g.mean_rows(f)?;
                    Ok(Some((p, h.forward(g, p)?)))
                }
                _ => Ok(None),
            }
        };
        let a = pooled(g, f_a, &self.arousal_head)?;
        let v = pooled(g, f_s, &self.valence_head)?;
        let fused = match (f_a, f_s) {
            (Some(fa), Some(fs)) => self.cda_fuse(g, fa, fs)?,
            _ => a
                .or(v)
                .map(|p| p.0)
                .expect("at least one branch is configured"),
        };
        let h = self.hidden.forward(g, fused)?;
        let h = g.relu(h);
        let q_logits = self.output.forward(g, h)?;
        Ok(ForwardVars {
            q_logits,
            arousal_logit: a.map(|p| p.1),
            valence_logit: v.map(|p| p.1),
        })
    }

    /// Weighted multi-task loss; terms whose head is absent are dropped.
    pub fn loss_graph(
        &self,
        g: &mut Graph<'_, T>,
        out: &ForwardVars,
        label: EmotionLabel,
        weights: &LossWeights,
    ) -> Result<LossVars> {
        let ce = g.cross_entropy(out.q_logits, label.quadrant.index())?;
        let q = g.scale(ce, T::c(weights.q));
        let mut terms = vec![(q, T::one())];
        let mut bce =
            |g: &mut Graph<'_, T>, z: Option<Var>, bit: bool, w: f64| -> Result<Option<Var>> {
                match z {
                    Some(z) => {
                        let l = g.bce_with_logit(z, bit)?;
                        let l = g.scale(l, T::c(w));
                        terms.push((l, T::one()));
                        Ok(Some(l))
                    }
                    None => Ok(None),
                }
            };
        let arousal = bce(g, out.arousal_logit, label.arousal(), weights.arousal)?;
        let valence = bce(g, out.valence_logit, label.valence(), weights.valence)?;
        let total = g.weighted_sum(&terms)?;
        Ok(LossVars {
            total,
            q,
            arousal,
            valence,
        })
    }

    /// Eval-mode forward pass.
    pub fn forward(&self, feat: &Tensor<T>, tokens: &[SymbolicToken]) -> Result<ModelOutput<T>> {
        let mut g = Graph::new(&self.params).with_mode(Mode::default());
        let vars = self.forward_graph(&mut g, feat, tokens)?;
        Ok(read_output(&g, &vars))
    }
}

pub(crate) fn read_output<T: Scalar>(g: &Graph<'_, T>, vars: &ForwardVars) -> ModelOutput<T> {
    let q = g.value(vars.q_logits).data();
    let scalar = |v: Option<Var>| v.map_or(T::zero(), |v| g.value(v).data()[0]);
    ModelOutput {
        q_logits: [q[0], q[1], q[2], q[3]],
        arousal_logit: scalar(vars.arousal_logit),
        valence_logit: scalar(vars.valence_logit),
    }
}

fn bce(z: f64, target: bool) -> f64 {
    let y = if target { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn log_softmax(z: &[f64; 4]) -> [f64; 4] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.map(|v| v - lse)
}

/// `w_q·CE(q_logits, quadrant) + w_a·BCE(arousal) + w_v·BCE(valence)`.
pub fn total_loss<T: Scalar>(
    out: &ModelOutput<T>,
    label: EmotionLabel,
    weights: &LossWeights,
) -> LossBreakdown {
    let z = out.q_logits.map(|v| v.f64());
    let q = -weights.q * log_softmax(&z)[label.quadrant.index()];
    let arousal = weights.arousal * bce(out.arousal_logit.f64(), label.arousal());
    let valence = weights.valence * bce(out.valence_logit.f64(), label.valence());
    LossBreakdown {
        total: q + arousal + valence,
        q,
        arousal,
        valence,
    }
}

/// Argmax quadrant (lowest index on ties) with the bits it implies, plus the
/// branch heads' own thresholded bits.
pub fn predict<T: Scalar>(out: &ModelOutput<T>) -> Prediction {
    let z = out.q_logits.map(|v| v.f64());
    let mut best = 0;
    for i in 1..4 {
        if z[i] > z[best] {
            best = i;
        }
    }
    let quadrant = Quadrant::from_index(best).expect("index below 4");
    Prediction {
        quadrant,
        valence: quadrant.valence(),
        arousal: quadrant.arousal(),
        aux_valence: out.valence_logit.f64() > 0.0,
        aux_arousal: out.arousal_logit.f64() > 0.0,
        q_probabilities: log_softmax(&z).map(f64::exp),
    }
}
