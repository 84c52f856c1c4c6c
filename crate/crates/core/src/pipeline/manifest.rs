use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{validation_err, Error, Result};
use crate::model::Quadrant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(validation_err!("unknown split {other:?}")),
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub audio_path: PathBuf,
    pub midi_path: PathBuf,
    pub quadrant: Quadrant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Deserialize)]
struct RawEntry {
    clip_id: String,
    audio_path: PathBuf,
    midi_path: PathBuf,
    quadrant: String,
    #[serde(default)]
    split: Option<String>,
}

/// Parse JSON-lines manifest text. Relative paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(line)
            .map_err(|e| validation_err!("manifest line {line_no}: {e}"))?;
        let quadrant = raw.quadrant.parse::<Quadrant>().map_err(|_| {
            validation_err!(
                "manifest line {line_no}: unknown quadrant {:?}",
                raw.quadrant
            )
        })?;
        let split = match raw.split {
            Some(s) => Some(
                s.parse::<Split>()
                    .map_err(|e| validation_err!("manifest line {line_no}: {e}"))?,
            ),
            None => None,
        };
        entries.push(ManifestEntry {
            clip_id: raw.clip_id,
            audio_path: base.join(raw.audio_path),
            midi_path: base.join(raw.midi_path),
            quadrant,
            split,
        });
    }
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &entries {
        *seen.entry(&e.clip_id).or_default() += 1;
    }
    let dups: Vec<&str> = seen
        .into_iter()
        .filter(|&(_, n)| n > 1)
        .map(|(id, _)| id)
        .collect();
    if !dups.is_empty() {
        return Err(validation_err!("duplicate clip ids: {}", dups.join(", ")));
    }
    for e in &entries {
        for p in [&e.audio_path, &e.midi_path] {
            if !p.exists() {
                log::warn!("clip {}: {} is missing", e.clip_id, p.display());
            }
        }
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

/// JSON-lines text with paths written relative to `base` where possible.
pub fn manifest_to_string(entries: &[ManifestEntry], base: &Path) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).to_path_buf();
        let e = ManifestEntry {
            audio_path: rel(&e.audio_path),
            midi_path: rel(&e.midi_path),
            ..e.clone()
        };
        out.push_str(&serde_json::to_string(&e)?);
        out.push('\n');
    }
    Ok(out)
}
