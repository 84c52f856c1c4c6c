use serde::{Deserialize, Serialize};

use crate::dsp::DspConfig;
use crate::error::{config_err, Result};
use crate::model::{Branches, CdaConfig, LossWeights, ModelConfig, SymbolicEncoderConfig};
use crate::nn::AdamConfig;
use crate::symbolic::QuantConfig;

/// The full model and its four ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    #[default]
    Full,
    SymbolicOnly,
    AcousticOnly,
    StftInput,
    SingleLoss,
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::Full,
        AblationMode::SymbolicOnly,
        AblationMode::AcousticOnly,
        AblationMode::StftInput,
        AblationMode::SingleLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::SymbolicOnly => "symbolic-only",
            AblationMode::AcousticOnly => "acoustic-only",
            AblationMode::StftInput => "stft-input",
            AblationMode::SingleLoss => "single-loss",
        }
    }

    pub fn branches(self) -> Branches {
        match self {
            AblationMode::SymbolicOnly => Branches::SymbolicOnly,
            AblationMode::AcousticOnly => Branches::AcousticOnly,
            _ => Branches::Both,
        }
    }

    pub fn stft_input(self) -> bool {
        self == AblationMode::StftInput
    }

    /// Loss weights after the mode has removed heads or auxiliary terms.
    pub fn effective_weights(self, w: LossWeights) -> LossWeights {
        match self {
            AblationMode::SingleLoss => LossWeights {
                arousal: 0.0,
                valence: 0.0,
                ..w
            },
            AblationMode::SymbolicOnly => LossWeights { arousal: 0.0, ..w },
            AblationMode::AcousticOnly => LossWeights { valence: 0.0, ..w },
            _ => w,
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| config_err!("unknown mode {s:?}"))
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement; 0 disables.
    pub patience: usize,
    pub seed: u64,
    /// Train, validation and test proportions.
    pub split_ratio: [f64; 3],
    pub loss_weights: LossWeights,
    pub mode: AblationMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-4,
            epochs: 50,
            patience: 10,
            seed: 0,
            split_ratio: [7.0, 2.0, 1.0],
            loss_weights: LossWeights::default(),
            mode: AblationMode::Full,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(config_err!("learning_rate must be positive"));
        }
        if self
            .split_ratio
            .iter()
            .any(|&r| !(r > 0.0 && r.is_finite()))
        {
            return Err(config_err!(
                "split ratio components must be positive, got {:?}",
                self.split_ratio
            ));
        }
        let w = &self.loss_weights;
        if [w.q, w.arousal, w.valence]
            .iter()
            .any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return Err(config_err!("loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Model hyperparameters that are not implied by the feature shape.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub symbolic: SymbolicEncoderConfig,
    pub cda: CdaConfig,
}

/// Top-level JSON configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dsp: DspConfig,
    pub quant: QuantConfig,
    pub model: ModelSection,
    pub training: TrainingConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.quant.validate()?;
        self.training.validate()?;
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::new(self.dsp.feature_rows(), self.dsp.target_frames);
        m.symbolic = self.model.symbolic.clone();
        m.cda = self.model.cda.clone();
        m.branches = self.training.mode.branches();
        m
    }
}

/// 64-bit FNV-1a over the JSON form of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> u64 {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
