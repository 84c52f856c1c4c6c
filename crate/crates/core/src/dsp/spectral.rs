use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::DspConfig;
use crate::audio::{frame_signal, AudioClip};
use crate::error::{validation_err, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Magnitude STFT, `[n_fft/2 + 1 bins × frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub magnitudes: Tensor<T>,
    pub bin_hz: f64,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn n_bins(&self) -> usize {
        self.magnitudes.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.magnitudes.cols()
    }
}

fn check_canonical<T: Scalar>(clip: &AudioClip<T>, cfg: &DspConfig) -> Result<()> {
    if clip.channels() != 1 {
        return Err(validation_err!(
            "expected a mono clip, got {} channels",
            clip.channels()
        ));
    }
    if clip.sample_rate() != cfg.sample_rate {
        return Err(validation_err!(
            "clip is at {} Hz, feature config expects {} Hz",
            clip.sample_rate(),
            cfg.sample_rate
        ));
    }
    Ok(())
}

/// Periodic Hann window.
pub(crate) fn hann<T: Scalar>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| T::c(0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

pub fn stft_magnitude<T: Scalar>(clip: &AudioClip<T>, cfg: &DspConfig) -> Result<Spectrogram<T>> {
    cfg.validate()?;
    check_canonical(clip, cfg)?;
    let frames = frame_signal(clip.samples(), cfg.n_fft, cfg.hop)?;
    let window = hann::<T>(cfg.n_fft);
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.n_fft);
    let bins = cfg.n_bins();
    let n_frames = frames.len();
    let mut mags = Tensor::zeros(vec![bins, n_frames]);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.n_fft];
    for (f, frame) in frames.iter().enumerate() {
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(s * w, T::zero());
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().take(bins).enumerate() {
            mags.set(k, f, c.norm());
        }
    }
    Ok(Spectrogram {
        magnitudes: mags,
        bin_hz: cfg.sample_rate as f64 / cfg.n_fft as f64,
    })
}

/// Magnitude-weighted mean frequency per frame; silent frames give 0.
pub fn spectral_centroid<T: Scalar>(spec: &Spectrogram<T>) -> Vec<T> {
    let m = &spec.magnitudes;
    let silent = T::c(1e-12);
    (0..spec.n_frames())
        .map(|f| {
            let mut weighted = T::zero();
            let mut total = T::zero();
            for k in 0..spec.n_bins() {
                let v = m.at(k, f);
                weighted += T::c(k as f64 * spec.bin_hz) * v;
                total += v;
            }
            if total < silent {
                T::zero()
            } else {
                weighted / total
            }
        })
        .collect()
}

/// Root-mean-square energy per frame, framed like the STFT.
pub fn rmse<T: Scalar>(clip: &AudioClip<T>, cfg: &DspConfig) -> Result<Vec<T>> {
    if clip.channels() != 1 {
        return Err(validation_err!(
            "expected a mono clip, got {} channels",
            clip.channels()
        ));
    }
    let frames = frame_signal(clip.samples(), cfg.n_fft, cfg.hop)?;
    let n = T::from_usize_lossy(cfg.n_fft);
    Ok(frames
        .iter()
        .map(|fr| (fr.iter().map(|&s| s * s).sum::<T>() / n).sqrt())
        .collect())
}
