use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Output channels of the three conv stages.
pub const CONV_CHANNELS: [usize; 3] = [64, 128, 256];

/// Number of symbolic encoder layers.
pub const ENCODER_LAYERS: usize = 4;

/// Acoustic input geometry; the conv ladder itself is fixed by [`CONV_CHANNELS`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcousticEncoderConfig {
    pub input_rows: usize,
    pub input_frames: usize,
}

impl AcousticEncoderConfig {
    /// Spatial size after the three 2×2 pools.
    pub fn output_grid(&self) -> (usize, usize) {
        (self.input_rows / 8, self.input_frames / 8)
    }

    pub fn sequence_len(&self) -> usize {
        let (h, w) = self.output_grid();
        h * w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymbolicEncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    /// Width of each of the five attribute embeddings before projection.
    pub attr_embed_dim: usize,
    pub dropout: f64,
    pub positional_encoding: bool,
}

impl Default for SymbolicEncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            layers: ENCODER_LAYERS,
            heads: 4,
            ffn: 1024,
            max_len: 512,
            attr_embed_dim: 64,
            dropout: 0.1,
            positional_encoding: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdaConfig {
    pub heads: usize,
}

impl Default for CdaConfig {
    fn default() -> Self {
        Self { heads: 4 }
    }
}

/// Which encoders exist in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branches {
    #[default]
    Both,
    AcousticOnly,
    SymbolicOnly,
}

impl Branches {
    pub fn acoustic(self) -> bool {
        self != Branches::SymbolicOnly
    }

    pub fn symbolic(self) -> bool {
        self != Branches::AcousticOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub acoustic: AcousticEncoderConfig,
    #[serde(default)]
    pub symbolic: SymbolicEncoderConfig,
    #[serde(default)]
    pub cda: CdaConfig,
    #[serde(default)]
    pub branches: Branches,
}

impl ModelConfig {
    pub fn new(input_rows: usize, input_frames: usize) -> Self {
        Self {
            acoustic: AcousticEncoderConfig {
                input_rows,
                input_frames,
            },
            symbolic: SymbolicEncoderConfig::default(),
            cda: CdaConfig::default(),
            branches: Branches::Both,
        }
    }

    pub fn d_model(&self) -> usize {
        self.symbolic.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.acoustic;
        if a.input_rows < 8 || a.input_frames < 8 {
            return Err(config_err!(
                "acoustic input {}x{} too small for three 2x2 pools",
                a.input_rows,
                a.input_frames
            ));
        }
        let s = &self.symbolic;
        if s.layers != ENCODER_LAYERS {
            return Err(config_err!(
                "symbolic encoder must have {ENCODER_LAYERS} layers, got {}",
                s.layers
            ));
        }
        if s.d_model == 0 || s.heads == 0 || !s.d_model.is_multiple_of(s.heads) {
            return Err(config_err!(
                "{} heads do not divide d_model {}",
                s.heads,
                s.d_model
            ));
        }
        if s.positional_encoding && !s.d_model.is_multiple_of(2) {
            return Err(config_err!("positional encoding needs an even d_model"));
        }
        if s.max_len == 0 || s.ffn == 0 || s.attr_embed_dim == 0 {
            return Err(config_err!(
                "max_len, ffn and attr_embed_dim must be positive"
            ));
        }
        if !(0.0..1.0).contains(&s.dropout) {
            return Err(config_err!("dropout {} outside [0, 1)", s.dropout));
        }
        if self.cda.heads == 0 || !s.d_model.is_multiple_of(self.cda.heads) {
            return Err(config_err!(
                "{} CDA heads do not divide d_model {}",
                self.cda.heads,
                s.d_model
            ));
        }
        Ok(())
    }
}
