use std::f64::consts::PI;

use super::{DspConfig, Spectrogram};
use crate::error::{config_err, shape_err, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels + 2` band edges equally spaced on the mel scale.
fn band_edges(cfg: &DspConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax_hz());
    let steps = (cfg.n_mels + 1) as f64;
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / steps))
        .collect()
}

/// Peak frequency of each triangular filter.
pub fn mel_center_frequencies(cfg: &DspConfig) -> Vec<f64> {
    let edges = band_edges(cfg);
    edges[1..=cfg.n_mels].to_vec()
}

/// Triangular mel filterbank `[n_mels × n_fft/2+1]` with area normalization.
pub fn mel_filterbank<T: Scalar>(cfg: &DspConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    let edges = band_edges(cfg);
    let bins = cfg.n_bins();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = Tensor::zeros(vec![cfg.n_mels, bins]);
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if !(center > lo && hi > center) {
            return Err(config_err!(
                "mel bands {m} and {} collide; reduce n_mels",
                m + 1
            ));
        }
        let norm = 2.0 / (hi - lo);
        let mut total = 0.0;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = ((f - lo) / (center - lo))
                .min((hi - f) / (hi - center))
                .max(0.0)
                * norm;
            total += w;
            fb.set(m, k, T::c(w));
        }
        if total <= 0.0 {
            return Err(config_err!(
                "mel band {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; n_mels {} is too large",
                cfg.n_mels
            ));
        }
    }
    Ok(fb)
}

/// Filterbank applied to the power spectrogram.
pub fn mel_spectrogram<T: Scalar>(spec: &Spectrogram<T>, fb: &Tensor<T>) -> Result<Tensor<T>> {
    let (n_mels, fb_bins) = fb.dims2()?;
    let (bins, frames) = spec.magnitudes.dims2()?;
    if fb_bins != bins {
        return Err(shape_err!(
            "filterbank expects {fb_bins} bins, spectrogram has {bins}"
        ));
    }
    let power: Vec<T> = spec.magnitudes.data().iter().map(|&m| m * m).collect();
    let mut out = vec![T::zero(); n_mels * frames];
    T::gemm(
        n_mels,
        bins,
        frames,
        T::one(),
        fb.data(),
        bins as isize,
        1,
        &power,
        frames as isize,
        1,
        T::zero(),
        &mut out,
        frames as isize,
        1,
    );
    Tensor::new(vec![n_mels, frames], out)
}

/// Orthonormal DCT-II basis, `[n_out × n_in]`.
pub(crate) fn dct2_basis(n_out: usize, n_in: usize) -> Vec<f64> {
    let mut basis = vec![0.0; n_out * n_in];
    for k in 0..n_out {
        let scale = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for n in 0..n_in {
            basis[k * n_in + n] =
                scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos();
        }
    }
    basis
}

/// First `n_mfcc` orthonormal DCT-II coefficients of `log(mel + floor)`.
pub fn mfcc<T: Scalar>(mel: &Tensor<T>, cfg: &DspConfig) -> Result<Tensor<T>> {
    let (n_mels, frames) = mel.dims2()?;
    if cfg.n_mfcc > n_mels {
        return Err(config_err!(
            "n_mfcc {} exceeds {n_mels} mel bands",
            cfg.n_mfcc
        ));
    }
    let basis: Vec<T> = dct2_basis(cfg.n_mfcc, n_mels)
        .into_iter()
        .map(T::c)
        .collect();
    let floor = T::c(cfg.log_floor);
    let logmel: Vec<T> = mel.data().iter().map(|&v| (v + floor).ln()).collect();
    let mut out = vec![T::zero(); cfg.n_mfcc * frames];
    T::gemm(
        cfg.n_mfcc,
        n_mels,
        frames,
        T::one(),
        &basis,
        n_mels as isize,
        1,
        &logmel,
        frames as isize,
        1,
        T::zero(),
        &mut out,
        frames as isize,
        1,
    );
    Tensor::new(vec![cfg.n_mfcc, frames], out)
}
