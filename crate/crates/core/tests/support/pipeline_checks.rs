//! Pipeline checks: synthetic generation, manifests, splits, training
//! bookkeeping and reproducibility.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use mdmer::audio::decode_wav;
use mdmer::model::{EmotionLabel, LossWeights, Quadrant};
use mdmer::nn::{adam_step, AdamConfig, AdamState, Graph};
use mdmer::pipeline::{
    generate_synthetic, load_manifest, prepare_samples, split_dataset, train, train_to_dir,
    AblationMode, ManifestEntry, PipelineConfig, Split,
};
use mdmer::symbolic::parse_midi;
use mdmer::EmotionModel64;

/// Small enough that a few epochs on a few dozen clips take seconds.
pub fn small_config(epochs: usize, mode: AblationMode) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_json(
        r#"{
            "dsp": {"n_fft": 512, "hop": 256, "n_mels": 16, "n_mfcc": 8, "target_frames": 16},
            "quant": {"max_time": 5.0},
            "model": {"symbolic": {"d_model": 16, "heads": 2, "ffn": 32, "attr_embed_dim": 4}, "cda": {"heads": 2}},
            "training": {"batch_size": 8, "learning_rate": 0.001, "patience": 0, "seed": 3}
        }"#,
    )
    .unwrap();
    cfg.training.epochs = epochs;
    cfg.training.mode = mode;
    cfg
}

fn rms(path: &Path) -> f64 {
    let clip = decode_wav::<f64>(&fs::read(path).unwrap()).unwrap();
    let s = clip.samples();
    (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
}

pub fn synthetic_dataset_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let entries = generate_synthetic(16, 5, dir.path()).unwrap();
    let loaded = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(loaded, entries);
    for q in Quadrant::ALL {
        assert_eq!(entries.iter().filter(|e| e.quadrant == q).count(), 4);
    }
    for e in &entries {
        let clip = decode_wav::<f64>(&fs::read(&e.audio_path).unwrap()).unwrap();
        assert!(clip.duration_secs() > 3.9);
        let seq = parse_midi(&fs::read(&e.midi_path).unwrap()).unwrap();
        assert!(!seq.is_empty());
    }
    assert!(generate_synthetic(10, 5, dir.path()).is_err());
}

pub fn synthetic_arousal_is_audible() {
    let dir = tempfile::tempdir().unwrap();
    let entries = generate_synthetic(16, 6, dir.path()).unwrap();
    let mean = |q: Quadrant| {
        let v: Vec<f64> = entries
            .iter()
            .filter(|e| e.quadrant == q)
            .map(|e| rms(&e.audio_path))
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(Quadrant::Q2) > 2.0 * mean(Quadrant::Q3));
    assert!(mean(Quadrant::Q1) > 2.0 * mean(Quadrant::Q4));
}

pub fn synthetic_generation_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ea = generate_synthetic(8, 11, a.path()).unwrap();
    let eb = generate_synthetic(8, 11, b.path()).unwrap();
    for (x, y) in ea.iter().zip(&eb) {
        assert_eq!(
            fs::read(&x.audio_path).unwrap(),
            fs::read(&y.audio_path).unwrap()
        );
        assert_eq!(
            fs::read(&x.midi_path).unwrap(),
            fs::read(&y.midi_path).unwrap()
        );
    }
    let c = tempfile::tempdir().unwrap();
    let ec = generate_synthetic(8, 12, c.path()).unwrap();
    assert_ne!(
        fs::read(&ea[0].midi_path).unwrap(),
        fs::read(&ec[0].midi_path).unwrap()
    );
}

fn fake_entries(n: usize) -> Vec<ManifestEntry> {
    (0..n)
        .map(|i| ManifestEntry {
            clip_id: format!("c{i}"),
            audio_path: format!("/nonexistent/{i}.wav").into(),
            midi_path: format!("/nonexistent/{i}.mid").into(),
            quadrant: Quadrant::ALL[i % 4],
            split: None,
        })
        .collect()
}

pub fn split_is_disjoint_and_exhaustive() {
    let entries = fake_entries(100);
    let s = split_dataset(&entries, [7.0, 2.0, 1.0], 4).unwrap();
    let ids = |split: Split| {
        s.get(split)
            .iter()
            .map(|e| e.clip_id.clone())
            .collect::<HashSet<_>>()
    };
    let (tr, va, te) = (ids(Split::Train), ids(Split::Val), ids(Split::Test));
    assert_eq!(tr.len() + va.len() + te.len(), 100);
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    assert_eq!((tr.len(), va.len(), te.len()), (72, 20, 8));
    for split in [Split::Train, Split::Val, Split::Test] {
        let per_q = |q| s.get(split).iter().filter(|e| e.quadrant == q).count();
        assert!(Quadrant::ALL
            .iter()
            .all(|&q| per_q(q) == per_q(Quadrant::Q1)));
    }
    assert_eq!(split_dataset(&entries, [7.0, 2.0, 1.0], 4).unwrap(), s);
    assert_ne!(split_dataset(&entries, [7.0, 2.0, 1.0], 5).unwrap(), s);
}

pub fn empty_training_split_is_fatal() {
    let mut cfg = small_config(1, AblationMode::Full);
    cfg.training.split_ratio = [0.0, 1.0, 1.0];
    let dir = tempfile::tempdir().unwrap();
    let entries = generate_synthetic(8, 1, dir.path()).unwrap();
    assert!(train::<f32>(&entries, &cfg, None).is_err());
    assert!(train::<f32>(&[], &small_config(1, AblationMode::Full), None).is_err());
}

/// Repeated Adam steps on one fixed sample drive its loss down.
pub fn loss_decreases_on_fixed_sample() {
    let dir = tempfile::tempdir().unwrap();
    let entries = generate_synthetic(8, 2, dir.path()).unwrap();
    let cfg = small_config(1, AblationMode::Full);
    let samples = prepare_samples::<f64>(&entries[1..2], &cfg, None);
    let sample = &samples[0];
    let mut model = EmotionModel64::new(
        cfg.model_config(),
        mdmer::symbolic::Vocabulary::new(&cfg.quant),
        0,
    )
    .unwrap();
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
    );
    let label = EmotionLabel::new(sample.label.quadrant);
    let mut losses = vec![];
    for _ in 0..15 {
        let grads = {
            let mut g = Graph::new(model.params());
            let out = model
                .forward_graph(&mut g, &sample.feature, &sample.tokens)
                .unwrap();
            let l = model
                .loss_graph(&mut g, &out, label, &LossWeights::default())
                .unwrap();
            losses.push(g.value(l.total).data()[0]);
            g.backward(l.total).unwrap()
        };
        model.params_mut().zero_grads();
        grads.accumulate_into(model.params_mut(), 1.0);
        adam_step(model.params_mut(), &mut adam);
    }
    assert!(losses[14] < 0.5 * losses[0], "{losses:?}");
}

pub fn training_log_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let entries = generate_synthetic(24, 3, dir.path()).unwrap();
    let out = train::<f32>(&entries, &small_config(3, AblationMode::Full), None).unwrap();
    assert_eq!(out.log.len(), 3);
    for l in &out.log {
        assert!((l.loss - (l.loss_q + l.loss_arousal + l.loss_valence)).abs() < 1e-9);
        assert!(l.val_acc_4q.is_some());
    }
    assert!(out.log.iter().any(|l| l.best));
    let best = out.log.iter().rev().find(|l| l.best).unwrap();
    assert_eq!(best.epoch, out.meta.epoch);

    let single = train::<f32>(&entries, &small_config(2, AblationMode::SingleLoss), None).unwrap();
    assert!(single
        .log
        .iter()
        .all(|l| l.loss_arousal == 0.0 && l.loss_valence == 0.0));
}

/// Two runs with the same seed write byte-identical checkpoints and logs.
pub fn training_is_reproducible() {
    let data = tempfile::tempdir().unwrap();
    let entries = generate_synthetic(16, 4, data.path()).unwrap();
    let cfg = small_config(2, AblationMode::Full);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (_, pa) = train_to_dir::<f32>(&entries, &cfg, a.path()).unwrap();
    let (_, pb) = train_to_dir::<f32>(&entries, &cfg, b.path()).unwrap();
    assert_eq!(
        fs::read(&pa.checkpoint).unwrap(),
        fs::read(&pb.checkpoint).unwrap()
    );
    assert_eq!(fs::read(&pa.log).unwrap(), fs::read(&pb.log).unwrap());
}

pub fn run_all() {
    synthetic_dataset_parses_back();
    synthetic_arousal_is_audible();
    synthetic_generation_is_reproducible();
    split_is_disjoint_and_exhaustive();
    empty_training_split_is_fatal();
    loss_decreases_on_fixed_sample();
    training_log_is_consistent();
    training_is_reproducible();
}
