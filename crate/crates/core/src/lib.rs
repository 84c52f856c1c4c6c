//! Multi-domain music emotion recognition.
//!
//! An acoustic branch (mixed spectral features into a three-stage conv
//! encoder) and a symbolic branch (five-attribute note tokens into a
//! transformer encoder) are fused by bidirectional cross-domain attention
//! and trained jointly on a four-quadrant label plus auxiliary arousal and
//! valence targets.
//!
//! All numeric code is generic over [`Scalar`]; the aliases below fix the
//! two instantiations used in practice.

pub mod audio;
pub mod dsp;
mod error;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod symbolic;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type AudioClip32 = audio::AudioClip<f32>;
pub type AudioClip64 = audio::AudioClip<f64>;
pub type EmotionModel32 = model::EmotionModel<f32>;
pub type EmotionModel64 = model::EmotionModel<f64>;
