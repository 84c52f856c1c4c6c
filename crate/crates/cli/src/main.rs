use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mdmer::dsp::write_feature_file;
use mdmer::pipeline::{
    extract_feature, extract_tokens, generate_synthetic, load_manifest, train_to_dir, AblationMode,
    InputKind, PipelineConfig, Split, TrainedModel,
};
use mdmer::symbolic::TokenDocument;

#[derive(Parser)]
#[command(
    name = "mdmer",
    version,
    about = "Multi-domain music emotion recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one MDMFEAT1 feature file per manifest clip.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Emit the resized STFT magnitude instead of the mixed feature.
        #[arg(long)]
        stft: bool,
    },
    /// Write one token JSON document per manifest clip.
    Tokenize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.mdmckpt and train_log.jsonl.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<AblationMode>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Classify one audio/MIDI pair.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        midi: PathBuf,
    },
    /// Generate a labelled synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            PipelineConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Features {
            manifest,
            config,
            out,
            stft,
        } => {
            let cfg = load_config(config.as_deref())?;
            let entries = load_manifest(&manifest)?;
            fs::create_dir_all(&out)?;
            let kind = if stft {
                InputKind::Stft
            } else {
                InputKind::Mixed
            };
            let mut failed = 0;
            for e in &entries {
                match extract_feature::<f32>(&e.audio_path, &cfg.dsp, kind) {
                    Ok(feat) => {
                        let bytes = write_feature_file(&feat, &cfg.dsp, &e.clip_id)?;
                        fs::write(
                            out.join(format!("{}.mdmfeat", file_stem(&e.clip_id))),
                            bytes,
                        )?;
                    }
                    Err(err) => {
                        log::warn!("skipping clip {}: {err}", e.clip_id);
                        failed += 1;
                    }
                }
            }
            log::info!("wrote {} feature files", entries.len() - failed);
        }
        Command::Tokenize {
            manifest,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let entries = load_manifest(&manifest)?;
            fs::create_dir_all(&out)?;
            for e in &entries {
                match extract_tokens(&e.midi_path, &cfg.quant) {
                    Ok(tokens) => {
                        let doc = TokenDocument {
                            source_id: e.clip_id.clone(),
                            quant_config: cfg.quant.clone(),
                            tokens,
                        };
                        fs::write(
                            out.join(format!("{}.json", file_stem(&e.clip_id))),
                            serde_json::to_vec(&doc)?,
                        )?;
                    }
                    Err(err) => log::warn!("skipping clip {}: {err}", e.clip_id),
                }
            }
        }
        Command::Train {
            manifest,
            config,
            out,
            mode,
            seed,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = mode {
                cfg.training.mode = m;
            }
            if let Some(s) = seed {
                cfg.training.seed = s;
            }
            let entries = load_manifest(&manifest)?;
            let (outcome, paths) = train_to_dir::<f32>(&entries, &cfg, &out)?;
            log::info!(
                "best epoch {} (val 4Q {:?}); wrote {} and {}",
                outcome.meta.epoch,
                outcome.meta.val_acc_4q,
                paths.checkpoint.display(),
                paths.log.display()
            );
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
        } => {
            let trained = TrainedModel::<f32>::load(&checkpoint)?;
            let entries = trained.split_entries(&load_manifest(&manifest)?, split)?;
            let report = trained.evaluate(&entries)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Predict {
            checkpoint,
            audio,
            midi,
        } => {
            let trained = TrainedModel::<f32>::load(&checkpoint)?;
            let p = trained.predict_files(&audio, &midi)?;
            let json = serde_json::json!({
                "quadrant": p.quadrant,
                "valence": p.valence as u8,
                "arousal": p.arousal as u8,
                "q_probabilities": p.q_probabilities,
            });
            println!("{}", serde_json::to_string_pretty(&json)?);
        }
        Command::Synth { n, seed, out } => {
            if n < 8 || n % 4 != 0 {
                bail!("--n must be at least 8 and divisible by 4");
            }
            let entries = generate_synthetic(n, seed, &out)?;
            log::info!(
                "wrote {} clips and {}",
                entries.len(),
                out.join("manifest.jsonl").display()
            );
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
