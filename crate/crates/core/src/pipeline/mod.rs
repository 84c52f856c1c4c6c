//! Dataset manifests, splits, training, evaluation, inference and the
//! synthetic dataset used for end-to-end checks.

mod config;
mod data;
mod eval;
mod infer;
mod manifest;
mod split;
mod synth;
mod train;

pub use config::{config_hash, AblationMode, ModelSection, PipelineConfig, TrainingConfig};
pub use data::{
    apply_norm, extract_feature, extract_tokens, prepare_samples, Cache, InputKind, Sample,
};
pub use eval::{evaluate_samples, EvalReport};
pub use infer::TrainedModel;
pub use manifest::{load_manifest, manifest_to_string, parse_manifest, ManifestEntry, Split};
pub use split::{split_dataset, DatasetSplit};
pub use synth::{
    generate_synthetic, render_notes, REGISTER_JITTER, SYNTH_SAMPLE_RATE, SYNTH_SECONDS,
};
pub use train::{train, train_to_dir, CheckpointMeta, EpochLog, TrainArtifacts, TrainOutcome};
