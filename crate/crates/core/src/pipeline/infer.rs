use std::path::Path;

use super::config::{ModelSection, PipelineConfig};
use super::data::{apply_norm, extract_feature, extract_tokens, prepare_samples, Sample};
use super::eval::{evaluate_samples, EvalReport};
use super::manifest::{ManifestEntry, Split};
use super::split::split_dataset;
use super::train::CheckpointMeta;
use crate::error::{validation_err, Error, Result};
use crate::model::{load_checkpoint, predict, EmotionModel, Prediction};
use crate::scalar::Scalar;

/// A checkpoint together with the feature, token and normalization settings
/// it was trained with.
#[derive(Debug)]
pub struct TrainedModel<T: Scalar> {
    pub model: EmotionModel<T>,
    pub meta: CheckpointMeta,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (model, header) = load_checkpoint::<T>(bytes)?;
        let meta: CheckpointMeta = serde_json::from_value(header.extra)?;
        let cfg = model.config();
        if cfg.acoustic.input_rows != meta.dsp.feature_rows()
            || cfg.acoustic.input_frames != meta.dsp.target_frames
        {
            return Err(validation_err!(
                "checkpoint model expects {}x{} features, its DSP settings give {}x{}",
                cfg.acoustic.input_rows,
                cfg.acoustic.input_frames,
                meta.dsp.feature_rows(),
                meta.dsp.target_frames
            ));
        }
        Ok(Self { model, meta })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let m = self.model.config();
        PipelineConfig {
            dsp: self.meta.dsp.clone(),
            quant: self.meta.quant.clone(),
            model: ModelSection {
                symbolic: m.symbolic.clone(),
                cda: m.cda.clone(),
            },
            training: self.meta.training.clone(),
        }
    }

    /// Featurize, tokenize and normalize `entries` the way training did.
    pub fn prepare(&self, entries: &[ManifestEntry]) -> Result<Vec<Sample<T>>> {
        let mut samples = prepare_samples::<T>(entries, &self.pipeline_config(), None);
        apply_norm(&mut samples, &self.meta.norm)?;
        Ok(samples)
    }

    pub fn evaluate(&self, entries: &[ManifestEntry]) -> Result<EvalReport> {
        evaluate_samples(&self.model, &self.prepare(entries)?)
    }

    /// The subset of a manifest that training assigned to `split`.
    pub fn split_entries(
        &self,
        entries: &[ManifestEntry],
        split: Split,
    ) -> Result<Vec<ManifestEntry>> {
        let t = &self.meta.training;
        Ok(split_dataset(entries, t.split_ratio, t.seed)?
            .get(split)
            .to_vec())
    }

    pub fn predict_files(&self, audio: &Path, midi: &Path) -> Result<Prediction> {
        let mut feat = extract_feature::<T>(audio, &self.meta.dsp, self.meta.input)?;
        self.meta.norm.apply(&mut feat.data)?;
        let tokens = extract_tokens(midi, &self.meta.quant)?;
        let out = self.model.forward(&feat.data, &tokens)?;
        Ok(predict(&out))
    }
}
