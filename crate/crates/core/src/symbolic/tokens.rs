use serde::{Deserialize, Serialize};

use super::{NoteEvent, NoteSequence, QuantConfig};
use crate::error::{validation_err, Result};

/// Per-note record: `[onset_bin, harmonic, velocity_bin, time_shift_bin, offset_bin]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 5]", into = "[u32; 5]")]
pub struct SymbolicToken {
    pub onset_bin: u32,
    pub harmonic: u32,
    pub velocity_bin: u32,
    pub time_shift_bin: u32,
    pub offset_bin: u32,
}

impl From<[u32; 5]> for SymbolicToken {
    fn from(a: [u32; 5]) -> Self {
        Self {
            onset_bin: a[0],
            harmonic: a[1],
            velocity_bin: a[2],
            time_shift_bin: a[3],
            offset_bin: a[4],
        }
    }
}

impl From<SymbolicToken> for [u32; 5] {
    fn from(t: SymbolicToken) -> Self {
        [
            t.onset_bin,
            t.harmonic,
            t.velocity_bin,
            t.time_shift_bin,
            t.offset_bin,
        ]
    }
}

/// Embedding table sizes for each token attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub onset: usize,
    pub harmonic: usize,
    pub velocity: usize,
    pub time_shift: usize,
    pub offset: usize,
}

impl Vocabulary {
    pub fn new(q: &QuantConfig) -> Self {
        let time = q.time_bins() as usize + 2;
        Self {
            onset: time,
            harmonic: q.max_harmonic as usize + 1,
            velocity: q.velocity_bins as usize,
            time_shift: q.shift_bins() as usize + 1,
            offset: time,
        }
    }

    pub fn sizes(&self) -> [usize; 5] {
        [
            self.onset,
            self.harmonic,
            self.velocity,
            self.time_shift,
            self.offset,
        ]
    }

    pub fn check(&self, t: &SymbolicToken) -> Result<()> {
        let vals: [u32; 5] = (*t).into();
        for (i, (&v, &size)) in vals.iter().zip(self.sizes().iter()).enumerate() {
            if v as usize >= size {
                return Err(validation_err!(
                    "token attribute {i} value {v} outside vocabulary of {size}"
                ));
            }
        }
        if t.harmonic == 0 {
            return Err(validation_err!("harmonic must be at least 1"));
        }
        if t.offset_bin <= t.onset_bin {
            return Err(validation_err!(
                "offset bin {} not after onset bin {}",
                t.offset_bin,
                t.onset_bin
            ));
        }
        Ok(())
    }
}

/// JSON document emitted by the `tokenize` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDocument {
    pub source_id: String,
    pub quant_config: QuantConfig,
    pub tokens: Vec<SymbolicToken>,
}

/// Count of intervals `[start, end)` containing each query point, queries
/// being the starts themselves.
fn sounding_at_starts<K: PartialOrd + Copy>(intervals: &[(K, K)]) -> Vec<u32> {
    let sorted = |mut v: Vec<K>| {
        v.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
        v
    };
    let starts = sorted(intervals.iter().map(|i| i.0).collect());
    let ends = sorted(intervals.iter().map(|i| i.1).collect());
    intervals
        .iter()
        .map(|&(t, _)| {
            let begun = starts.partition_point(|&s| s <= t);
            let ended = ends.partition_point(|&e| e <= t);
            (begun - ended) as u32
        })
        .collect()
}

/// Number of notes sounding at each note's onset, the note itself included.
pub fn harmonic_counts(seq: &NoteSequence) -> Vec<u32> {
    let intervals: Vec<(f64, f64)> = seq.notes().iter().map(|n| (n.onset, n.offset)).collect();
    sounding_at_starts(&intervals)
}

fn velocity_bin(vel: u8, bins: u32) -> u32 {
    (u32::from(vel) * bins / 128).min(bins - 1)
}

/// One token per note, in sequence order.
///
/// Times are rounded to the nearest bin. Harmonic counts and time shifts are
/// computed on the quantized grid so re-tokenizing a detokenized sequence is
/// a fixpoint.
pub fn tokenize(seq: &NoteSequence, q: &QuantConfig) -> Result<Vec<SymbolicToken>> {
    q.validate()?;
    let last = q.time_bins();
    let bin = q.time_shift_bin;
    let grid: Vec<(u32, u32)> = seq
        .notes()
        .iter()
        .map(|n| {
            let on = ((n.onset / bin).round() as u64).min(last as u64) as u32;
            let off = ((n.offset / bin).round() as u64).min(last as u64 + 1) as u32;
            (on, off.max(on + 1))
        })
        .collect();
    let harmonic = sounding_at_starts(&grid);
    let max_shift = q.shift_bins();
    let mut prev = None;
    Ok(seq
        .notes()
        .iter()
        .zip(&grid)
        .zip(harmonic)
        .map(|((n, &(on, off)), h)| {
            let shift = prev.map_or(0, |p: u32| (on - p).min(max_shift));
            prev = Some(on);
            SymbolicToken {
                onset_bin: on,
                harmonic: h.min(q.max_harmonic),
                velocity_bin: velocity_bin(n.velocity, q.velocity_bins),
                time_shift_bin: shift,
                offset_bin: off,
            }
        })
        .collect())
}

/// Pitch assigned to reconstructed notes; tokens carry no pitch.
pub const DETOKENIZED_PITCH: u8 = 60;

/// Rebuild notes at bin-center times and velocities.
pub fn detokenize(tokens: &[SymbolicToken], q: &QuantConfig) -> Result<NoteSequence> {
    q.validate()?;
    let vocab = Vocabulary::new(q);
    let width = 128.0 / q.velocity_bins as f64;
    let notes = tokens
        .iter()
        .map(|t| {
            vocab.check(t)?;
            let velocity = ((t.velocity_bin as f64 + 0.5) * width)
                .round()
                .clamp(1.0, 127.0) as u8;
            NoteEvent::new(
                t.onset_bin as f64 * q.time_shift_bin,
                t.offset_bin as f64 * q.time_shift_bin,
                DETOKENIZED_PITCH,
                velocity,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    NoteSequence::new(notes, "")
}
