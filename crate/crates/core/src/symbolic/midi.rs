//! Standard MIDI File (format 0/1) reader and a minimal format-0 writer.

use std::collections::{BTreeMap, HashMap, VecDeque};

use log::warn;

use super::{NoteEvent, NoteSequence};
use crate::error::{format_err, Result};

const DEFAULT_TEMPO_US: u32 = 500_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MidiOptions {
    /// Extend note-offs while CC64 is held.
    pub apply_sustain: bool,
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    NoteOn { ch: u8, pitch: u8, vel: u8 },
    NoteOff { ch: u8, pitch: u8 },
    Sustain { ch: u8, down: bool },
    Tempo(u32),
    EndOfTrack,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    tick: u64,
    track: usize,
    seq: usize,
    kind: Kind,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.at)
            .ok_or_else(|| format_err!("truncated track data"))?;
        self.at += 1;
        Ok(b)
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.at).copied()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err!("truncated track data"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn vlq(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..4 {
            let b = self.byte()?;
            v = (v << 7) | u64::from(b & 0x7F);
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(format_err!("variable-length quantity longer than 4 bytes"))
    }

    fn done(&self) -> bool {
        self.at >= self.bytes.len()
    }
}

fn parse_track(data: &[u8], track: usize, out: &mut Vec<Event>) -> Result<()> {
    let mut r = Reader { bytes: data, at: 0 };
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut seq = 0usize;
    let mut push = |tick: u64, kind: Kind, out: &mut Vec<Event>| {
        out.push(Event {
            tick,
            track,
            seq,
            kind,
        });
        seq += 1;
    };
    let mut saw_end = false;
    while !r.done() {
        tick += r.vlq()?;
        let status = match r.peek() {
            Some(b) if b & 0x80 != 0 => {
                r.at += 1;
                b
            }
            Some(_) => running.ok_or_else(|| format_err!("data byte without running status"))?,
            None => return Err(format_err!("truncated event")),
        };
        match status {
            0xFF => {
                let kind = r.byte()?;
                let len = r.vlq()? as usize;
                let body = r.take(len)?;
                match kind {
                    0x51 if len == 3 => {
                        let us =
                            u32::from(body[0]) << 16 | u32::from(body[1]) << 8 | u32::from(body[2]);
                        push(tick, Kind::Tempo(us), out);
                    }
                    0x2F => {
                        push(tick, Kind::EndOfTrack, out);
                        saw_end = true;
                        break;
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                let len = r.vlq()? as usize;
                r.take(len)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let ch = status & 0x0F;
                match status & 0xF0 {
                    0x80 => {
                        let (pitch, _) = (r.byte()?, r.byte()?);
                        push(tick, Kind::NoteOff { ch, pitch }, out);
                    }
                    0x90 => {
                        let (pitch, vel) = (r.byte()?, r.byte()?);
                        let kind = if vel == 0 {
                            Kind::NoteOff { ch, pitch }
                        } else {
                            Kind::NoteOn { ch, pitch, vel }
                        };
                        push(tick, kind, out);
                    }
                    0xB0 => {
                        let (ctl, val) = (r.byte()?, r.byte()?);
                        if ctl == 64 {
                            push(
                                tick,
                                Kind::Sustain {
                                    ch,
                                    down: val >= 64,
                                },
                                out,
                            );
                        }
                    }
                    0xA0 | 0xE0 => {
                        r.take(2)?;
                    }
                    _ => {
                        r.take(1)?;
                    }
                }
            }
            other => return Err(format_err!("unexpected status byte {other:#04x}")),
        }
    }
    if !saw_end {
        push(tick, Kind::EndOfTrack, out);
    }
    Ok(())
}

/// Piecewise-constant tempo map converting ticks to seconds.
struct TempoMap {
    /// (start tick, seconds at start, seconds per tick)
    segments: Vec<(u64, f64, f64)>,
}

impl TempoMap {
    fn metrical(tpq: u16, mut changes: Vec<(u64, u32)>) -> Self {
        changes.sort_by_key(|c| c.0);
        let per_tick = |us: u32| us as f64 * 1e-6 / tpq as f64;
        let mut segments = vec![(0u64, 0.0f64, per_tick(DEFAULT_TEMPO_US))];
        for (tick, us) in changes {
            let &(start, secs, spt) = segments.last().expect("non-empty");
            let at = secs + (tick - start) as f64 * spt;
            if tick == start {
                segments.pop();
            }
            segments.push((tick, at, per_tick(us)));
        }
        Self { segments }
    }

    fn fixed(seconds_per_tick: f64) -> Self {
        Self {
            segments: vec![(0, 0.0, seconds_per_tick)],
        }
    }

    fn seconds(&self, tick: u64) -> f64 {
        let i = self.segments.partition_point(|s| s.0 <= tick) - 1;
        let (start, secs, spt) = self.segments[i];
        secs + (tick - start) as f64 * spt
    }
}

pub fn parse_midi(bytes: &[u8]) -> Result<NoteSequence> {
    parse_midi_with(bytes, MidiOptions::default())
}

/// Parse an SMF, merging all tracks and channels into one note list.
pub fn parse_midi_with(bytes: &[u8], opts: MidiOptions) -> Result<NoteSequence> {
    if bytes.len() < 14 || &bytes[..4] != b"MThd" {
        return Err(format_err!("missing MThd header chunk"));
    }
    let hlen = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if hlen < 6 || bytes.len() < 8 + hlen {
        return Err(format_err!("header chunk too short"));
    }
    let format = u16::from_be_bytes([bytes[8], bytes[9]]);
    let division = u16::from_be_bytes([bytes[12], bytes[13]]);
    if format > 1 {
        return Err(format_err!("SMF format {format} is not supported"));
    }
    if division == 0 {
        return Err(format_err!("division is zero"));
    }

    let mut events = Vec::new();
    let mut at = 8 + hlen;
    let mut track = 0;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let len = u32::from_be_bytes(bytes[at + 4..at + 8].try_into().expect("4 bytes")) as usize;
        let end = (at + 8).checked_add(len).filter(|&e| e <= bytes.len());
        let end = end.ok_or_else(|| format_err!("track chunk overruns file"))?;
        if id == b"MTrk" {
            parse_track(&bytes[at + 8..end], track, &mut events)?;
            track += 1;
        }
        at = end;
    }

    let tempo = if division & 0x8000 != 0 {
        let fps = -((division >> 8) as u8 as i8) as f64;
        let tpf = (division & 0xFF) as f64;
        if fps <= 0.0 || tpf <= 0.0 {
            return Err(format_err!("invalid SMPTE division {division:#06x}"));
        }
        TempoMap::fixed(1.0 / (fps * tpf))
    } else {
        let changes = events
            .iter()
            .filter_map(|e| match e.kind {
                Kind::Tempo(us) if us > 0 => Some((e.tick, us)),
                _ => None,
            })
            .collect();
        TempoMap::metrical(division, changes)
    };

    events.sort_by_key(|e| (e.tick, e.track, e.seq));

    type Key = (usize, u8, u8);
    let mut active: HashMap<Key, VecDeque<(u64, u8)>> = HashMap::new();
    let mut pedal: HashMap<(usize, u8), bool> = HashMap::new();
    let mut held: BTreeMap<Key, Vec<(u64, u8)>> = BTreeMap::new();
    let mut closed: Vec<(u64, u64, u8, u8)> = Vec::new();

    fn release(
        held: &mut BTreeMap<Key, Vec<(u64, u8)>>,
        pred: impl Fn(&Key) -> bool,
        tick: u64,
        closed: &mut Vec<(u64, u64, u8, u8)>,
    ) {
        let keys: Vec<Key> = held.keys().filter(|k| pred(k)).copied().collect();
        for k in keys {
            for (on, vel) in held.remove(&k).unwrap_or_default() {
                closed.push((on, tick, k.2, vel));
            }
        }
    }

    for e in &events {
        match e.kind {
            Kind::NoteOn { ch, pitch, vel } => {
                let key = (e.track, ch, pitch);
                // re-striking a pedal-held pitch ends the held note
                release(&mut held, |k| *k == key, e.tick, &mut closed);
                active.entry(key).or_default().push_back((e.tick, vel));
            }
            Kind::NoteOff { ch, pitch } => {
                let key = (e.track, ch, pitch);
                match active.get_mut(&key).and_then(VecDeque::pop_front) {
                    Some((on, vel)) => {
                        if opts.apply_sustain && pedal.get(&(e.track, ch)).copied().unwrap_or(false) {
                            held.entry(key).or_default().push((on, vel));
                        } else {
                            closed.push((on, e.tick, pitch, vel));
                        }
                    }
                    None => warn!("note-off for pitch {pitch} on channel {ch} at tick {} without note-on; dropped", e.tick),
                }
            }
            Kind::Sustain { ch, down } => {
                pedal.insert((e.track, ch), down);
                if !down {
                    release(
                        &mut held,
                        |k| k.0 == e.track && k.1 == ch,
                        e.tick,
                        &mut closed,
                    );
                }
            }
            Kind::Tempo(_) => {}
            Kind::EndOfTrack => {
                release(&mut held, |k| k.0 == e.track, e.tick, &mut closed);
                let keys: Vec<Key> = active.keys().filter(|k| k.0 == e.track).copied().collect();
                for k in keys {
                    for (on, vel) in active.remove(&k).unwrap_or_default() {
                        closed.push((on, e.tick, k.2, vel));
                    }
                }
            }
        }
    }

    let mut notes = Vec::with_capacity(closed.len());
    for (on, off, pitch, vel) in closed {
        if off <= on {
            warn!("zero-length note (pitch {pitch}, tick {on}) dropped");
            continue;
        }
        notes.push(NoteEvent {
            onset: tempo.seconds(on),
            offset: tempo.seconds(off),
            pitch,
            velocity: vel,
        });
    }
    NoteSequence::new(notes, "")
}

fn put_vlq(out: &mut Vec<u8>, mut v: u64) {
    let mut stack = [0u8; 5];
    let mut n = 0;
    loop {
        stack[n] = (v & 0x7F) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(stack[i] | if i > 0 { 0x80 } else { 0 });
    }
}

/// Write a single-track (format 0) SMF at a constant tempo on channel 0.
pub fn write_midi(seq: &NoteSequence, ticks_per_quarter: u16, tempo_us: u32) -> Vec<u8> {
    let ticks_per_sec = ticks_per_quarter as f64 * 1e6 / tempo_us as f64;
    let to_tick = |s: f64| (s * ticks_per_sec).round() as u64;
    // (tick, is_on, pitch, vel); offs sort before ons at the same tick
    let mut evs: Vec<(u64, bool, u8, u8)> = Vec::with_capacity(seq.len() * 2);
    for n in seq.notes() {
        let on = to_tick(n.onset);
        let off = to_tick(n.offset).max(on + 1);
        evs.push((on, true, n.pitch, n.velocity));
        evs.push((off, false, n.pitch, 0));
    }
    evs.sort_by_key(|e| (e.0, e.1, e.2));

    let mut trk = Vec::new();
    put_vlq(&mut trk, 0);
    trk.extend_from_slice(&[0xFF, 0x51, 0x03]);
    trk.extend_from_slice(&tempo_us.to_be_bytes()[1..]);
    let mut last = 0u64;
    for (tick, on, pitch, vel) in evs {
        put_vlq(&mut trk, tick - last);
        last = tick;
        if on {
            trk.extend_from_slice(&[0x90, pitch, vel]);
        } else {
            trk.extend_from_slice(&[0x80, pitch, 0x40]);
        }
    }
    put_vlq(&mut trk, 0);
    trk.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(22 + trk.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(trk.len() as u32).to_be_bytes());
    out.extend_from_slice(&trk);
    out
}
