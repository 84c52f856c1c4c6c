use serde::{Deserialize, Serialize};

use super::{
    mel_filterbank, mel_spectrogram, mfcc, rmse, spectral_centroid, stft_magnitude, DspConfig,
};
use crate::audio::AudioClip;
use crate::error::{shape_err, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub blocks: Vec<Block>,
}

impl FeatureLayout {
    fn from_sizes(sizes: &[(&str, usize)]) -> Self {
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&(name, len)| {
                let b = Block {
                    name: name.to_string(),
                    start,
                    len,
                };
                start += len;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn mixed(cfg: &DspConfig) -> Self {
        Self::from_sizes(&[
            ("mel", cfg.n_mels),
            ("mfcc", cfg.n_mfcc),
            ("sc", 1),
            ("rmse", 1),
        ])
    }

    pub fn stft(cfg: &DspConfig) -> Self {
        Self::from_sizes(&[("stft", cfg.feature_rows())])
    }

    pub fn rows(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Stacked, time-aligned feature matrix `[rows × target_frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedFeature<T> {
    pub data: Tensor<T>,
    pub layout: FeatureLayout,
    /// Whether row-wise z-scoring has been applied.
    pub normalized: bool,
}

impl<T: Scalar> MixedFeature<T> {
    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn cols(&self) -> usize {
        self.data.cols()
    }

    pub fn block_rows(&self, name: &str) -> Option<Vec<&[T]>> {
        let b = self.layout.block(name)?;
        Some(
            (b.start..b.start + b.len)
                .map(|r| self.data.row(r))
                .collect(),
        )
    }

    pub fn normalize(&mut self, stats: &NormStats) -> Result<()> {
        stats.apply(&mut self.data)?;
        self.normalized = true;
        Ok(())
    }
}

/// Per-row mean and standard deviation fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit<'a, T: Scalar>(features: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for f in features {
            let (rows, cols) = f.dims2()?;
            if sum.is_empty() {
                sum = vec![0.0; rows];
                sq = vec![0.0; rows];
            } else if sum.len() != rows {
                return Err(shape_err!(
                    "feature with {rows} rows, expected {}",
                    sum.len()
                ));
            }
            for (r, (s, q)) in sum.iter_mut().zip(sq.iter_mut()).enumerate() {
                for &v in f.row(r) {
                    let v = v.f64();
                    *s += v;
                    *q += v * v;
                }
            }
            count += cols;
        }
        if count == 0 {
            return Err(shape_err!("cannot fit normalization on zero frames"));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                let sd = var.sqrt();
                if sd < 1e-8 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply<T: Scalar>(&self, data: &mut Tensor<T>) -> Result<()> {
        let (rows, _) = data.dims2()?;
        if rows != self.mean.len() {
            return Err(shape_err!(
                "normalization fitted on {} rows, feature has {rows}",
                self.mean.len()
            ));
        }
        for r in 0..rows {
            let (m, s) = (T::c(self.mean[r]), T::c(self.std[r]));
            data.row_mut(r).iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(())
    }
}

/// Linearly resize `src` to `n_out` points with endpoints aligned.
pub fn resample_linear<T: Scalar>(src: &[T], n_out: usize) -> Vec<T> {
    let n_in = src.len();
    if n_in == n_out {
        return src.to_vec();
    }
    if n_in == 1 || n_out == 1 {
        return vec![src[0]; n_out];
    }
    let scale = (n_in - 1) as f64 / (n_out - 1) as f64;
    (0..n_out)
        .map(|j| {
            let pos = j as f64 * scale;
            let i = (pos.floor() as usize).min(n_in - 2);
            let frac = T::c(pos - i as f64);
            src[i] + (src[i + 1] - src[i]) * frac
        })
        .collect()
}

fn stack_rows<T: Scalar>(rows: Vec<Vec<T>>, cols: usize) -> Result<Tensor<T>> {
    let n = rows.len();
    let data: Vec<T> = rows
        .into_iter()
        .flat_map(|r| resample_linear(&r, cols))
        .collect();
    Tensor::new(vec![n, cols], data)
}

/// Build the stacked `(mel, mfcc, sc, rmse)` feature for one canonical clip.
///
/// The mel block is stored as `ln(mel + log_floor)`. When `stats` is given
/// each row is z-scored with it.
pub fn assemble_mixed_feature<T: Scalar>(
    clip: &AudioClip<T>,
    cfg: &DspConfig,
    stats: Option<&NormStats>,
) -> Result<MixedFeature<T>> {
    let spec = stft_magnitude(clip, cfg)?;
    let fb = mel_filterbank::<T>(cfg)?;
    let mel = mel_spectrogram(&spec, &fb)?;
    let cepstra = mfcc(&mel, cfg)?;
    let centroid = spectral_centroid(&spec);
    let energy = rmse(clip, cfg)?;

    let floor = T::c(cfg.log_floor);
    let mut rows: Vec<Vec<T>> = Vec::with_capacity(cfg.feature_rows());
    rows.extend((0..mel.rows()).map(|r| mel.row(r).iter().map(|&v| (v + floor).ln()).collect()));
    rows.extend((0..cepstra.rows()).map(|r| cepstra.row(r).to_vec()));
    rows.push(centroid);
    rows.push(energy);

    let mut feat = MixedFeature {
        data: stack_rows(rows, cfg.target_frames)?,
        layout: FeatureLayout::mixed(cfg),
        normalized: false,
    };
    if let Some(stats) = stats {
        feat.normalize(stats)?;
    }
    Ok(feat)
}

/// Raw magnitude spectrogram resized to the mixed-feature shape.
///
/// Frequency is linearly interpolated down to `feature_rows()` rows, then
/// time to `target_frames` columns.
pub fn assemble_stft_feature<T: Scalar>(
    clip: &AudioClip<T>,
    cfg: &DspConfig,
    stats: Option<&NormStats>,
) -> Result<MixedFeature<T>> {
    let spec = stft_magnitude(clip, cfg)?;
    let (bins, frames) = spec.magnitudes.dims2()?;
    let rows_out = cfg.feature_rows();
    let mut resized = vec![Vec::with_capacity(frames); rows_out];
    let mut column = vec![T::zero(); bins];
    for f in 0..frames {
        for (k, c) in column.iter_mut().enumerate() {
            *c = spec.magnitudes.at(k, f);
        }
        for (r, v) in resample_linear(&column, rows_out).into_iter().enumerate() {
            resized[r].push(v);
        }
    }
    let mut feat = MixedFeature {
        data: stack_rows(resized, cfg.target_frames)?,
        layout: FeatureLayout::stft(cfg),
        normalized: false,
    };
    if let Some(stats) = stats {
        feat.normalize(stats)?;
    }
    Ok(feat)
}
