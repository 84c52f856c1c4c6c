//! Synthetic paired WAV/MIDI clips whose labels are fixed by construction.
//!
//! Arousal sets loudness (peak 0.8 vs 0.1), mean velocity (100 vs 40) and
//! note rate (8/s vs 2/s). Valence sets the triad quality (major vs minor),
//! the register (tonic centred on C5 vs C3, jittered per clip by up to
//! 24 semitones so the two registers overlap) and a velocity offset of
//! ±10 around the arousal level. Each waveform is peak-normalized, so that
//! offset survives in the MIDI but not in the audio.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{manifest_to_string, ManifestEntry};
use crate::audio::{encode_wav_pcm16, AudioClip};
use crate::error::{validation_err, Error, Result};
use crate::model::Quadrant;
use crate::symbolic::{write_midi, NoteEvent, NoteSequence};

pub const SYNTH_SAMPLE_RATE: u32 = 22_050;
pub const SYNTH_SECONDS: f64 = 4.0;
pub const REGISTER_JITTER: i32 = 24;

const PROGRESSION: [i32; 4] = [0, 5, 7, 0];

fn clip_notes(q: Quadrant, rng: &mut ChaCha8Rng) -> Result<Vec<NoteEvent>> {
    let (v, a) = (q.valence(), q.arousal());
    let rate = if a { 8.0 } else { 2.0 };
    let ioi = 1.0 / rate;
    let base_velocity: i32 = if a { 100 } else { 40 };
    let velocity = (base_velocity + if v { 10 } else { -10 }) as u8;
    let triad: [i32; 3] = if v { [0, 4, 7] } else { [0, 3, 7] };
    let center = if v { 72 } else { 48 };
    let tonic = center + rng.gen_range(-REGISTER_JITTER..=REGISTER_JITTER);
    let start = rng.gen_range(0.0..ioi / 2.0);
    let count = ((SYNTH_SECONDS - start - 0.05) / ioi).floor() as usize;
    let mut notes = Vec::with_capacity(count);
    for k in 0..count {
        let root = PROGRESSION[(k / 4) % PROGRESSION.len()];
        let pitch = (tonic + root + triad[rng.gen_range(0..3)]).clamp(21, 108) as u8;
        let onset = start + k as f64 * ioi;
        let offset = (onset + 0.9 * ioi).min(SYNTH_SECONDS);
        notes.push(NoteEvent::new(onset, offset, pitch, velocity)?);
    }
    Ok(notes)
}

/// Decaying three-partial tone per note, summed and scaled to `peak`.
pub fn render_notes(notes: &[NoteEvent], sample_rate: u32, seconds: f64, peak: f64) -> Vec<f64> {
    let sr = sample_rate as f64;
    let len = (seconds * sr).round() as usize;
    let mut out = vec![0.0; len];
    let release = 0.01;
    for n in notes {
        let freq = 440.0 * 2f64.powf((n.pitch as f64 - 69.0) / 12.0);
        let amp = n.velocity as f64 / 127.0;
        let first = (n.onset * sr).round() as usize;
        let last = (((n.offset + release) * sr).round() as usize).min(len);
        for (i, o) in out.iter_mut().enumerate().take(last).skip(first) {
            let t = i as f64 / sr - n.onset;
            let mut env = amp * (-t / 0.3).exp();
            let past = t - (n.offset - n.onset);
            if past > 0.0 {
                env *= 1.0 - past / release;
            }
            let phase = 2.0 * PI * freq * t;
            *o += env * (phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin());
        }
    }
    let max = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v *= peak / max);
    }
    out
}

/// Write `n_clips` WAV/MIDI pairs and `manifest.jsonl` into `out_dir`.
pub fn generate_synthetic(n_clips: usize, seed: u64, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    if n_clips < 8 || !n_clips.is_multiple_of(4) {
        return Err(validation_err!(
            "n_clips must be at least 8 and divisible by 4, got {n_clips}"
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let q = Quadrant::ALL[i % 4];
        let clip_id = format!("syn{i:04}_{q}");
        let notes = clip_notes(q, &mut rng)?;
        let peak = if q.arousal() { 0.8 } else { 0.1 };
        let samples = render_notes(&notes, SYNTH_SAMPLE_RATE, SYNTH_SECONDS, peak);
        let clip = AudioClip::mono(samples, SYNTH_SAMPLE_RATE)?;
        let seq = NoteSequence::new(notes, clip_id.clone())?;
        let audio_path = out_dir.join(format!("{clip_id}.wav"));
        let midi_path = out_dir.join(format!("{clip_id}.mid"));
        fs::write(&audio_path, encode_wav_pcm16(&clip)).map_err(|e| Error::io(&audio_path, e))?;
        fs::write(&midi_path, write_midi(&seq, 480, 500_000))
            .map_err(|e| Error::io(&midi_path, e))?;
        entries.push(ManifestEntry {
            clip_id,
            audio_path,
            midi_path,
            quadrant: q,
            split: None,
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    fs::write(&manifest, manifest_to_string(&entries, out_dir)?)
        .map_err(|e| Error::io(&manifest, e))?;
    Ok(entries)
}
