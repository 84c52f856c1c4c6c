//! RIFF/WAVE ingestion and the canonical mono signal used by the DSP stage.

use std::sync::Arc;

use crate::error::{format_err, validation_err, Error, Result};
use crate::scalar::Scalar;

/// Sample rate every clip is brought to before feature extraction.
pub const CANONICAL_SAMPLE_RATE: u32 = 22_050;

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Interleaved sample buffer with its rate and channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip<T> {
    samples: Arc<[T]>,
    sample_rate: u32,
    channels: u16,
    source_id: String,
}

impl<T: Scalar> AudioClip<T> {
    pub fn new(
        samples: Vec<T>,
        sample_rate: u32,
        channels: u16,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(validation_err!("audio clip has no samples"));
        }
        if sample_rate == 0 {
            return Err(validation_err!("sample rate must be positive"));
        }
        if !(1..=2).contains(&channels) {
            return Err(validation_err!(
                "{channels} channels; only mono and stereo are supported"
            ));
        }
        if !samples.len().is_multiple_of(channels as usize) {
            return Err(validation_err!(
                "sample count {} is not a multiple of channel count {channels}",
                samples.len()
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(validation_err!("non-finite amplitude at sample {i}"));
        }
        Ok(Self {
            samples: samples.into(),
            sample_rate,
            channels,
            source_id: source_id.into(),
        })
    }

    pub fn mono(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        Self::new(samples, sample_rate, 1, "")
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> u16 {
        self.channels
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    /// Number of frames (samples per channel).
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels as usize
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    /// Multiply every sample by `gain`.
    pub fn scaled(&self, gain: T) -> Self {
        let samples: Vec<T> = self.samples.iter().map(|&s| s * gain).collect();
        Self {
            samples: samples.into(),
            ..self.clone()
        }
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decode a RIFF/WAVE byte stream (PCM16 or float32, one or two channels).
///
/// Channels are kept interleaved; use [`to_mono`] to mix down.
pub fn decode_wav<T: Scalar>(bytes: &[u8]) -> Result<AudioClip<T>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(format_err!("missing RIFF/WAVE header"));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let len = u32_at(bytes, at + 4) as usize;
        let body_start = at + 8;
        let body_end = body_start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_err!("chunk {:?} overruns file", String::from_utf8_lossy(id)))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(format_err!("fmt chunk too short ({} bytes)", body.len()));
                }
                let mut tag = u16_at(body, 0);
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(format_err!("extensible fmt chunk too short"));
                    }
                    // first two bytes of the subformat GUID carry the real tag
                    tag = u16_at(body, 24);
                }
                fmt = Some((tag, u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        at = body_end + (len & 1);
    }
    let (tag, channels, sample_rate, bits) = fmt.ok_or_else(|| format_err!("missing fmt chunk"))?;
    let data = data.ok_or_else(|| format_err!("missing data chunk"))?;
    if channels == 0 || channels > 2 {
        return Err(format_err!("{channels} channels; expected 1 or 2"));
    }
    if sample_rate == 0 {
        return Err(format_err!("sample rate is zero"));
    }
    let samples: Vec<T> = match (tag, bits) {
        (WAVE_FORMAT_PCM, 16) => {
            let scale = T::c(1.0 / 32768.0);
            data.chunks_exact(2)
                .map(|c| T::c(i16::from_le_bytes([c[0], c[1]]) as f64) * scale)
                .collect()
        }
        (WAVE_FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| {
                T::c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .max(-T::one())
                    .min(T::one())
            })
            .collect(),
        (WAVE_FORMAT_PCM, b) | (WAVE_FORMAT_IEEE_FLOAT, b) => {
            return Err(format_err!(
                "unsupported bit depth {b} for format tag {tag:#06x}"
            ))
        }
        (other, _) => return Err(Error::UnsupportedCodec { tag: other }),
    };
    if samples.is_empty() {
        return Err(format_err!("data chunk holds no samples"));
    }
    let usable = samples.len() - samples.len() % channels as usize;
    let mut samples = samples;
    samples.truncate(usable);
    AudioClip::new(samples, sample_rate, channels, "").map_err(|e| format_err!("{e}"))
}

/// Encode a clip as 16-bit PCM WAVE. Amplitudes are clamped to [-1, 1).
pub fn encode_wav_pcm16<T: Scalar>(clip: &AudioClip<T>) -> Vec<u8> {
    let n = clip.samples().len();
    let data_len = (n * 2) as u32;
    let channels = clip.channels();
    let block_align = channels * 2;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in clip.samples() {
        let q = (s.f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Average stereo frames to mono; mono input is returned unchanged.
pub fn to_mono<T: Scalar>(clip: &AudioClip<T>) -> AudioClip<T> {
    if clip.channels() == 1 {
        return clip.clone();
    }
    let half = T::c(0.5);
    let samples: Vec<T> = clip
        .samples()
        .chunks_exact(2)
        .map(|f| (f[0] + f[1]) * half)
        .collect();
    AudioClip {
        samples: samples.into(),
        sample_rate: clip.sample_rate,
        channels: 1,
        source_id: clip.source_id.clone(),
    }
}

/// Linear-interpolation resampler.
///
/// Output length is `round(frames * target / rate)`; output sample `i`
/// reads the input at fractional position `i * rate / target`.
pub fn resample<T: Scalar>(clip: &AudioClip<T>, target_sr: u32) -> Result<AudioClip<T>> {
    if target_sr == 0 {
        return Err(validation_err!("target sample rate must be positive"));
    }
    if target_sr == clip.sample_rate() {
        return Ok(clip.clone());
    }
    let ch = clip.channels() as usize;
    let frames = clip.frames();
    let out_frames =
        ((frames as f64 * target_sr as f64 / clip.sample_rate() as f64).round() as usize).max(1);
    let ratio = clip.sample_rate() as f64 / target_sr as f64;
    let src = clip.samples();
    let mut out = Vec::with_capacity(out_frames * ch);
    for i in 0..out_frames {
        let pos = i as f64 * ratio;
        let left = (pos.floor() as usize).min(frames - 1);
        let right = (left + 1).min(frames - 1);
        let frac = T::c(pos - left as f64);
        for c in 0..ch {
            let a = src[left * ch + c];
            let b = src[right * ch + c];
            out.push(a + (b - a) * frac);
        }
    }
    Ok(AudioClip {
        samples: out.into(),
        sample_rate: target_sr,
        channels: clip.channels,
        source_id: clip.source_id.clone(),
    })
}

/// Mono + canonical rate, the form every DSP routine expects.
pub fn canonicalize<T: Scalar>(clip: &AudioClip<T>) -> Result<AudioClip<T>> {
    resample(&to_mono(clip), CANONICAL_SAMPLE_RATE)
}

/// Number of frames [`frame_signal`] produces.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len {
        1
    } else {
        1 + (len - frame_len) / hop
    }
}

/// Split `samples` into overlapping frames of `frame_len` every `hop`.
///
/// Only full frames are emitted when the signal is at least one frame long.
/// A signal shorter than one frame yields a single zero-padded frame.
pub fn frame_signal<T: Scalar>(samples: &[T], frame_len: usize, hop: usize) -> Result<Vec<Vec<T>>> {
    if frame_len == 0 || hop == 0 {
        return Err(validation_err!("frame length and hop must be positive"));
    }
    let count = frame_count(samples.len(), frame_len, hop);
    let frames = (0..count)
        .map(|f| {
            let start = f * hop;
            let mut frame = vec![T::zero(); frame_len];
            let end = (start + frame_len).min(samples.len());
            if start < end {
                frame[..end - start].copy_from_slice(&samples[start..end]);
            }
            frame
        })
        .collect();
    Ok(frames)
}
