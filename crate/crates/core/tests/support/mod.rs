//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod dsp_checks;
pub mod nn_checks;
pub mod pipeline_checks;

use std::f64::consts::PI;

use mdmer::symbolic::{NoteEvent, NoteSequence};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Orthonormal DCT-II by the textbook double loop.
pub fn brute_dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let mut acc = 0.0;
            for (i, &v) in x.iter().enumerate() {
                acc += v * (PI / n * (i as f64 + 0.5) * k as f64).cos();
            }
            let norm = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            acc * norm
        })
        .collect()
}

/// |X_k| for k = 0..=n/2 by direct summation.
pub fn direct_dft_magnitude(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * i % n) as f64 / n as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

pub fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (PI * i as f64 / n as f64).sin().powi(2))
        .collect()
}

pub fn sine(freq: f64, sample_rate: u32, len: usize, amp: f64) -> Vec<f64> {
    (0..len)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / sample_rate as f64).sin())
        .collect()
}

/// For every note, how many notes (itself included) sound at its onset.
pub fn brute_harmonic(notes: &[NoteEvent]) -> Vec<u32> {
    notes
        .iter()
        .map(|a| {
            notes
                .iter()
                .filter(|b| b.onset <= a.onset && a.onset < b.offset)
                .count() as u32
        })
        .collect()
}

/// Random piano-like sequence with chords, overlaps and repeated onsets.
pub fn random_notes(rng: &mut ChaCha8Rng, n: usize, span: f64) -> NoteSequence {
    let mut notes = Vec::with_capacity(n);
    let mut last_onset = 0.0;
    for _ in 0..n {
        let onset = if rng.gen_bool(0.3) {
            last_onset
        } else {
            (rng.gen_range(0.0f64..span) * 1000.0).round() / 1000.0
        };
        last_onset = onset;
        let dur = (rng.gen_range(0.01f64..2.0) * 1000.0).round() / 1000.0;
        notes.push(
            NoteEvent::new(
                onset,
                onset + dur,
                rng.gen_range(21..109),
                rng.gen_range(1..128),
            )
            .unwrap(),
        );
    }
    NoteSequence::new(notes, "random").unwrap()
}

/// RIFF/WAVE PCM16 writer written from the format description, not the crate.
pub fn wav_pcm16(samples: &[i16], sample_rate: u32, channels: u16) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&channels.to_le_bytes());
    b.extend_from_slice(&sample_rate.to_le_bytes());
    b.extend_from_slice(&(sample_rate * channels as u32 * 2).to_le_bytes());
    b.extend_from_slice(&(channels * 2).to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    b
}

fn chunk(tag: &[u8; 4], body: &[u8]) -> Vec<u8> {
    let mut c = tag.to_vec();
    c.extend_from_slice(&(body.len() as u32).to_be_bytes());
    c.extend_from_slice(body);
    c
}

/// Format-0 SMF: tempo 500000 µs/quarter, 480 TPQN, note 60 vel 80 from
/// tick 0 to tick 480.
pub fn half_second_note_smf() -> Vec<u8> {
    let mut header = Vec::new();
    header.extend_from_slice(&0u16.to_be_bytes());
    header.extend_from_slice(&1u16.to_be_bytes());
    header.extend_from_slice(&480u16.to_be_bytes());
    let track = [
        0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20, // tempo 500000
        0x00, 0x90, 60, 80, // note on
        0x83, 0x60, 0x80, 60, 0, // delta 480, note off
        0x00, 0xFF, 0x2F, 0x00,
    ];
    let mut out = chunk(b"MThd", &header);
    out.extend(chunk(b"MTrk", &track));
    out
}
