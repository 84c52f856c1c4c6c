use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, TrainingConfig};
use super::data::{apply_norm, prepare_samples, Cache, InputKind, Sample};
use super::eval::evaluate_samples;
use super::manifest::ManifestEntry;
use super::split::{split_dataset, DatasetSplit};
use crate::dsp::{DspConfig, NormStats};
use crate::error::{validation_err, Error, Result};
use crate::model::{predict, save_checkpoint, EmotionModel};
use crate::nn::{adam_step, AdamState, DropoutKey, Graph, Mode, ParamStore};
use crate::scalar::Scalar;
use crate::symbolic::{QuantConfig, Vocabulary};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample total loss; equals the sum of the three components.
    pub loss: f64,
    pub loss_q: f64,
    pub loss_arousal: f64,
    pub loss_valence: f64,
    pub train_acc_4q: f64,
    pub val_acc_4q: Option<f64>,
    pub best: bool,
}

/// Everything besides the weights that inference needs, stored in the
/// checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dsp: DspConfig,
    pub quant: QuantConfig,
    pub training: TrainingConfig,
    pub input: InputKind,
    pub norm: NormStats,
    pub epoch: usize,
    pub val_acc_4q: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome<T: Scalar> {
    /// Weights of the best epoch.
    pub model: EmotionModel<T>,
    pub checkpoint: Vec<u8>,
    pub log: Vec<EpochLog>,
    pub meta: CheckpointMeta,
    pub split: DatasetSplit,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|l| serde_json::to_string(l).expect("log serializes") + "\n")
            .collect()
    }
}

#[derive(Default)]
struct EpochTotals {
    q: f64,
    arousal: f64,
    valence: f64,
    correct: usize,
    n: usize,
}

/// Split, featurize, normalize and train; returns the best-validation model.
pub fn train<T: Scalar>(
    entries: &[ManifestEntry],
    cfg: &PipelineConfig,
    cache: Option<&Cache>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let tc = &cfg.training;
    let split = split_dataset(entries, tc.split_ratio, tc.seed)?;
    let mut train_set: Vec<Sample<T>> = prepare_samples(&split.train, cfg, cache);
    if train_set.is_empty() {
        return Err(validation_err!("no usable training clips"));
    }
    let mut val_set: Vec<Sample<T>> = prepare_samples(&split.val, cfg, cache);
    let norm = NormStats::fit(train_set.iter().map(|s| &s.feature))?;
    apply_norm(&mut train_set, &norm)?;
    apply_norm(&mut val_set, &norm)?;
    if val_set.is_empty() {
        log::warn!("validation split is empty; selecting the checkpoint by training accuracy");
    }

    let mut model =
        EmotionModel::<T>::new(cfg.model_config(), Vocabulary::new(&cfg.quant), tc.seed)?;
    let weights = tc.mode.effective_weights(tc.loss_weights);
    let mut adam = AdamState::new(model.params(), tc.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x7472_6169_6e00_0000);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, ParamStore<T>)> = None;
    let mut since_best = 0;
    let mut step = 0u64;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut totals = EpochTotals::default();
        for batch in order.chunks(tc.batch_size) {
            model.params_mut().zero_grads();
            let scale = T::one() / T::from_usize_lossy(batch.len());
            for &i in batch {
                let s = &train_set[i];
                let mode = Mode {
                    train: true,
                    dropout_key: DropoutKey {
                        seed: tc.seed,
                        step,
                        sample: i as u64,
                    },
                };
                let mut g = Graph::new(model.params()).with_mode(mode);
                let vars = model.forward_graph(&mut g, &s.feature, &s.tokens)?;
                let loss = model.loss_graph(&mut g, &vars, s.label, &weights)?;
                let value = |v: Option<_>| v.map_or(0.0, |v| g.value(v).data()[0].f64());
                totals.q += value(Some(loss.q));
                totals.arousal += value(loss.arousal);
                totals.valence += value(loss.valence);
                totals.n += 1;
                let q = g.value(vars.q_logits).data();
                let out = crate::model::ModelOutput {
                    q_logits: [q[0], q[1], q[2], q[3]],
                    arousal_logit: T::zero(),
                    valence_logit: T::zero(),
                };
                if predict(&out).quadrant == s.label.quadrant {
                    totals.correct += 1;
                }
                let grads = g.backward(loss.total)?;
                drop(g);
                grads.accumulate_into(model.params_mut(), scale);
            }
            adam_step(model.params_mut(), &mut adam);
            step += 1;
        }

        let n = totals.n as f64;
        let (lq, la, lv) = (totals.q / n, totals.arousal / n, totals.valence / n);
        let train_acc = totals.correct as f64 / n;
        let val_acc = match val_set.is_empty() {
            true => None,
            false => Some(evaluate_samples(&model, &val_set)?.accuracy_4q),
        };
        let score = val_acc.unwrap_or(train_acc);
        let improved = best.as_ref().is_none_or(|b| score > b.0);
        if improved {
            best = Some((score, epoch, model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let line = EpochLog {
            epoch,
            loss: lq + la + lv,
            loss_q: lq,
            loss_arousal: la,
            loss_valence: lv,
            train_acc_4q: train_acc,
            val_acc_4q: val_acc,
            best: improved,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (q {lq:.4}, a {la:.4}, v {lv:.4}) train {train_acc:.3} val {:?}",
            line.loss,
            val_acc
        );
        log.push(line);
        if tc.patience > 0 && since_best >= tc.patience {
            log::info!(
                "no validation improvement for {} epochs, stopping",
                tc.patience
            );
            break;
        }
    }

    let (_, best_epoch, best_params) =
        best.ok_or_else(|| validation_err!("training ran for zero epochs"))?;
    model.params_mut().load_values(&best_params)?;
    let meta = CheckpointMeta {
        dsp: cfg.dsp.clone(),
        quant: cfg.quant.clone(),
        training: tc.clone(),
        input: if tc.mode.stft_input() {
            InputKind::Stft
        } else {
            InputKind::Mixed
        },
        norm,
        epoch: best_epoch,
        val_acc_4q: log[best_epoch - 1].val_acc_4q,
    };
    let checkpoint = save_checkpoint(&model, serde_json::to_value(&meta)?)?;
    Ok(TrainOutcome {
        model,
        checkpoint,
        log,
        meta,
        split,
    })
}

/// Paths written by [`train_to_dir`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Train and write `model.mdmckpt` and `train_log.jsonl` into `out_dir`,
/// caching features and tokens under `out_dir/cache`.
pub fn train_to_dir<T: Scalar>(
    entries: &[ManifestEntry],
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<(TrainOutcome<T>, TrainArtifacts)> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cache = Cache::new(out_dir.join("cache"));
    let outcome = train::<T>(entries, cfg, Some(&cache))?;
    let artifacts = TrainArtifacts {
        checkpoint: out_dir.join("model.mdmckpt"),
        log: out_dir.join("train_log.jsonl"),
    };
    fs::write(&artifacts.checkpoint, &outcome.checkpoint)
        .map_err(|e| Error::io(&artifacts.checkpoint, e))?;
    fs::write(&artifacts.log, outcome.log_jsonl()).map_err(|e| Error::io(&artifacts.log, e))?;
    Ok((outcome, artifacts))
}
