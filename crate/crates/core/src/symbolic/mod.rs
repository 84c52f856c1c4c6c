//! Note-level symbolic representation: SMF ingestion and the five-attribute
//! token (onset, harmonic, velocity, time shift, offset).

mod midi;
mod tokens;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, validation_err, Result};

pub use midi::{parse_midi, parse_midi_with, write_midi, MidiOptions};
pub use tokens::{detokenize, harmonic_counts, tokenize, SymbolicToken, TokenDocument, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    /// Seconds.
    pub onset: f64,
    /// Seconds, strictly after `onset`.
    pub offset: f64,
    pub pitch: u8,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn new(onset: f64, offset: f64, pitch: u8, velocity: u8) -> Result<Self> {
        let n = Self {
            onset,
            offset,
            pitch,
            velocity,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset.is_finite() && self.offset.is_finite()) || self.onset < 0.0 {
            return Err(validation_err!(
                "note onset {} must be finite and non-negative",
                self.onset
            ));
        }
        if self.offset <= self.onset {
            return Err(validation_err!(
                "note offset {} not after onset {}",
                self.offset,
                self.onset
            ));
        }
        if self.pitch > 127 {
            return Err(validation_err!("pitch {} out of range", self.pitch));
        }
        if !(1..=127).contains(&self.velocity) {
            return Err(validation_err!(
                "velocity {} out of range 1..=127",
                self.velocity
            ));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

fn note_order(a: &NoteEvent, b: &NoteEvent) -> Ordering {
    a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch))
}

/// Notes sorted by `(onset, pitch)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NoteSequence {
    notes: Vec<NoteEvent>,
    pub source_id: String,
}

impl NoteSequence {
    /// Validates every note and sorts (stable) into canonical order.
    pub fn new(mut notes: Vec<NoteEvent>, source_id: impl Into<String>) -> Result<Self> {
        for n in &notes {
            n.validate()?;
        }
        notes.sort_by(note_order);
        Ok(Self {
            notes,
            source_id: source_id.into(),
        })
    }

    pub fn notes(&self) -> &[NoteEvent] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    /// Width of one time bin in seconds; shared by onset, offset and shift.
    pub time_shift_bin: f64,
    pub max_time_shift: f64,
    /// Cap for absolute onset/offset times.
    pub max_time: f64,
    pub velocity_bins: u32,
    /// Harmonic counts above this are clipped.
    pub max_harmonic: u32,
    /// Hold note-offs while the sustain pedal (CC64) is down.
    pub apply_sustain: bool,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            time_shift_bin: 0.01,
            max_time_shift: 1.0,
            max_time: 600.0,
            velocity_bins: 32,
            max_harmonic: 32,
            apply_sustain: false,
        }
    }
}

fn whole_bins(span: f64, bin: f64) -> Option<u32> {
    let r = span / bin;
    ((r - r.round()).abs() < 1e-6 && r >= 1.0).then(|| r.round() as u32)
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_shift_bin > 0.0) {
            return Err(config_err!("time_shift_bin must be positive"));
        }
        if whole_bins(self.max_time_shift, self.time_shift_bin).is_none() {
            return Err(config_err!(
                "max_time_shift {} is not a positive multiple of time_shift_bin {}",
                self.max_time_shift,
                self.time_shift_bin
            ));
        }
        if whole_bins(self.max_time, self.time_shift_bin).is_none() {
            return Err(config_err!(
                "max_time {} is not a positive multiple of the time bin",
                self.max_time
            ));
        }
        if !(1..=128).contains(&self.velocity_bins) {
            return Err(config_err!(
                "velocity_bins {} not in 1..=128",
                self.velocity_bins
            ));
        }
        if self.max_harmonic == 0 {
            return Err(config_err!("max_harmonic must be at least 1"));
        }
        Ok(())
    }

    /// Index of the last absolute-time bin.
    pub fn time_bins(&self) -> u32 {
        (self.max_time / self.time_shift_bin).round() as u32
    }

    pub fn shift_bins(&self) -> u32 {
        (self.max_time_shift / self.time_shift_bin).round() as u32
    }
}
