use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{config_hash, PipelineConfig};
use super::manifest::ManifestEntry;
use crate::audio::{decode_wav, resample, to_mono};
use crate::dsp::{
    assemble_mixed_feature, assemble_stft_feature, read_feature_file, write_feature_file,
    DspConfig, MixedFeature, NormStats,
};
use crate::error::{validation_err, Error, Result};
use crate::model::EmotionLabel;
use crate::nn::Tensor;
use crate::scalar::Scalar;
use crate::symbolic::{
    parse_midi_with, tokenize, MidiOptions, QuantConfig, SymbolicToken, TokenDocument,
};

/// Which acoustic representation feeds the conv encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Mixed,
    Stft,
}

/// Mono audio at the configured rate, then the requested feature (unnormalized).
pub fn extract_feature<T: Scalar>(
    audio_path: &Path,
    dsp: &DspConfig,
    kind: InputKind,
) -> Result<MixedFeature<T>> {
    let bytes = fs::read(audio_path).map_err(|e| Error::io(audio_path, e))?;
    let clip = decode_wav::<T>(&bytes)?;
    let clip = resample(&to_mono(&clip), dsp.sample_rate)?;
    match kind {
        InputKind::Mixed => assemble_mixed_feature(&clip, dsp, None),
        InputKind::Stft => assemble_stft_feature(&clip, dsp, None),
    }
}

pub fn extract_tokens(midi_path: &Path, quant: &QuantConfig) -> Result<Vec<SymbolicToken>> {
    let bytes = fs::read(midi_path).map_err(|e| Error::io(midi_path, e))?;
    let seq = parse_midi_with(
        &bytes,
        MidiOptions {
            apply_sustain: quant.apply_sustain,
        },
    )?;
    tokenize(&seq, quant)
}

/// On-disk cache of features and tokens keyed by clip id and config hash.
#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn path(&self, kind: &str, clip_id: &str, hash: u64, ext: &str) -> PathBuf {
        let safe: String = clip_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.root
            .join(kind)
            .join(format!("{safe}-{hash:016x}.{ext}"))
    }

    fn store(&self, path: &Path, bytes: &[u8]) {
        let result = path
            .parent()
            .map_or(Ok(()), fs::create_dir_all)
            .and_then(|_| fs::write(path, bytes));
        if let Err(e) = result {
            log::warn!("could not write cache file {}: {e}", path.display());
        }
    }

    pub fn feature<T: Scalar>(
        &self,
        entry: &ManifestEntry,
        dsp: &DspConfig,
        kind: InputKind,
    ) -> Result<MixedFeature<T>> {
        let path = self.path(
            "features",
            &entry.clip_id,
            config_hash(&(dsp, kind)),
            "mdmfeat",
        );
        if let Ok(bytes) = fs::read(&path) {
            if let Ok((header, feat)) = read_feature_file::<T>(&bytes) {
                if header.config == *dsp && header.source_id == entry.clip_id {
                    return Ok(feat);
                }
            }
        }
        let feat = extract_feature::<T>(&entry.audio_path, dsp, kind)?;
        self.store(&path, &write_feature_file(&feat, dsp, &entry.clip_id)?);
        // Reload so cached and fresh runs see the same stored precision.
        Ok(read_feature_file::<T>(&write_feature_file(&feat, dsp, &entry.clip_id)?)?.1)
    }

    pub fn tokens(&self, entry: &ManifestEntry, quant: &QuantConfig) -> Result<Vec<SymbolicToken>> {
        let path = self.path("tokens", &entry.clip_id, config_hash(quant), "json");
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(doc) = serde_json::from_str::<TokenDocument>(&text) {
                if doc.quant_config == *quant && doc.source_id == entry.clip_id {
                    return Ok(doc.tokens);
                }
            }
        }
        let tokens = extract_tokens(&entry.midi_path, quant)?;
        let doc = TokenDocument {
            source_id: entry.clip_id.clone(),
            quant_config: quant.clone(),
            tokens,
        };
        self.store(&path, &serde_json::to_vec(&doc)?);
        Ok(doc.tokens)
    }
}

/// A clip ready for the model.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub clip_id: String,
    pub label: EmotionLabel,
    pub feature: Tensor<T>,
    pub tokens: Vec<SymbolicToken>,
}

/// Features and tokens for every entry. Entries whose audio or MIDI cannot
/// be read (or that have no notes) are skipped with a warning.
pub fn prepare_samples<T: Scalar>(
    entries: &[ManifestEntry],
    cfg: &PipelineConfig,
    cache: Option<&Cache>,
) -> Vec<Sample<T>> {
    let kind = if cfg.training.mode.stft_input() {
        InputKind::Stft
    } else {
        InputKind::Mixed
    };
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let loaded = (|| -> Result<Sample<T>> {
            let (feature, tokens) = match cache {
                Some(c) => (c.feature::<T>(e, &cfg.dsp, kind)?, c.tokens(e, &cfg.quant)?),
                None => {
                    let f = extract_feature::<T>(&e.audio_path, &cfg.dsp, kind)?;
                    let f =
                        read_feature_file::<T>(&write_feature_file(&f, &cfg.dsp, &e.clip_id)?)?.1;
                    (f, extract_tokens(&e.midi_path, &cfg.quant)?)
                }
            };
            if tokens.is_empty() {
                return Err(validation_err!("MIDI has no notes"));
            }
            Ok(Sample {
                clip_id: e.clip_id.clone(),
                label: EmotionLabel::new(e.quadrant),
                feature: feature.data,
                tokens,
            })
        })();
        match loaded {
            Ok(s) => out.push(s),
            Err(err) => log::warn!("skipping clip {}: {err}", e.clip_id),
        }
    }
    out
}

pub fn apply_norm<T: Scalar>(samples: &mut [Sample<T>], stats: &NormStats) -> Result<()> {
    for s in samples {
        stats.apply(&mut s.feature)?;
    }
    Ok(())
}
