//! Mixed acoustic feature: mel-spectrogram, MFCC, spectral centroid and
//! RMS energy, aligned to a fixed number of frames and stacked row-wise.

mod featfile;
mod mel;
mod mixed;
mod spectral;

use serde::{Deserialize, Serialize};

use crate::audio::CANONICAL_SAMPLE_RATE;
use crate::error::{config_err, Result};

pub use featfile::{read_feature_file, write_feature_file, FeatureFileHeader, FEATURE_MAGIC};
pub use mel::{
    hz_to_mel, mel_center_frequencies, mel_filterbank, mel_spectrogram, mel_to_hz, mfcc,
};
pub use mixed::{
    assemble_mixed_feature, assemble_stft_feature, resample_linear, Block, FeatureLayout,
    MixedFeature, NormStats,
};
pub use spectral::{rmse, spectral_centroid, stft_magnitude, Spectrogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub fmax: Option<f64>,
    pub target_frames: usize,
    pub log_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: CANONICAL_SAMPLE_RATE,
            n_fft: 2048,
            hop: 512,
            n_mels: 128,
            n_mfcc: 20,
            fmin: 0.0,
            fmax: None,
            target_frames: 256,
            log_floor: 1e-10,
        }
    }
}

impl DspConfig {
    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// Rows of the stacked feature: mel + mfcc + centroid + rms.
    pub fn feature_rows(&self) -> usize {
        self.n_mels + self.n_mfcc + 2
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return Err(config_err!("n_fft {} is not a power of two", self.n_fft));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(config_err!("hop {} must be in 1..=n_fft", self.hop));
        }
        if self.n_mels == 0 || self.n_mfcc == 0 {
            return Err(config_err!("n_mels and n_mfcc must be positive"));
        }
        if self.n_mfcc > self.n_mels {
            return Err(config_err!(
                "n_mfcc {} exceeds n_mels {}",
                self.n_mfcc,
                self.n_mels
            ));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax_hz() && self.fmax_hz() <= nyquist) {
            return Err(config_err!(
                "need 0 <= fmin < fmax <= {nyquist} Hz, got fmin {} fmax {}",
                self.fmin,
                self.fmax_hz()
            ));
        }
        if self.target_frames == 0 {
            return Err(config_err!("target_frames must be positive"));
        }
        if !(self.log_floor > 0.0) {
            return Err(config_err!("log_floor must be positive"));
        }
        Ok(())
    }
}
