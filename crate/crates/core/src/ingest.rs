//! Frame-sequence ingestion from a JSON manifest.
//!
//! Each manifest entry describes one camera trigger. All frames of an entry
//! are assumed to show the same individual, which is what lets the rest of
//! the pipeline treat a sequence as an unlabeled identity unit.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::image_dimensions;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("manifest parse error in {path}: {reason}")]
    ManifestParse { path: String, reason: String },
    #[error("duplicate sequence id {0:?}")]
    DuplicateSequenceId(String),
    #[error("sequence {sequence_id:?} has no readable frames in {dir}")]
    MissingFrames { sequence_id: String, dir: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub sequence_id: String,
    pub frame_index: u32,
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSequence {
    pub sequence_id: String,
    pub camera_location_id: String,
    pub site_id: String,
    pub captured_at: Option<DateTime<Utc>>,
    pub frames: Vec<FrameRef>,
}

/// One manifest entry as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sequence_id: String,
    pub camera_location_id: String,
    pub site_id: String,
    #[serde(default)]
    pub captured_at: Option<String>,
    pub frames_dir: PathBuf,
    pub frame_glob: String,
}

/// Compares file names so that embedded numbers sort numerically
/// (`f2.png` < `f10.png`).
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut ai, mut bi) = (a.char_indices().peekable(), b.char_indices().peekable());
    loop {
        match (ai.peek().copied(), bi.peek().copied()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some((_, ca)), Some((_, cb))) => {
                if ca.is_ascii_digit() && cb.is_ascii_digit() {
                    let da = take_digits(&mut ai);
                    let db = take_digits(&mut bi);
                    let ta = da.trim_start_matches('0');
                    let tb = db.trim_start_matches('0');
                    let ord = ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb));
                    if ord != Ordering::Equal {
                        return ord;
                    }
                } else {
                    if ca != cb {
                        return ca.cmp(&cb);
                    }
                    ai.next();
                    bi.next();
                }
            }
        }
    }
}

fn take_digits(it: &mut std::iter::Peekable<std::str::CharIndices<'_>>) -> String {
    let mut s = String::new();
    while let Some(&(_, c)) = it.peek() {
        if !c.is_ascii_digit() {
            break;
        }
        s.push(c);
        it.next();
    }
    s
}

/// Reads the manifest and resolves every entry's frames.
///
/// Relative `frames_dir` values are resolved against the manifest's
/// directory. Frames are indexed by their position in natural filename
/// order, starting at 0.
pub fn load_manifest(manifest_path: &Path) -> Result<Vec<VideoSequence>, IngestError> {
    let parse_err = |reason: String| IngestError::ManifestParse {
        path: manifest_path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(manifest_path).map_err(|e| parse_err(e.to_string()))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut seen = HashSet::new();
    for e in &entries {
        if e.sequence_id.is_empty() {
            return Err(parse_err("empty sequence_id".into()));
        }
        if !seen.insert(e.sequence_id.as_str()) {
            return Err(IngestError::DuplicateSequenceId(e.sequence_id.clone()));
        }
    }

    entries
        .iter()
        .map(|e| resolve_entry(e, base).map_err(|r| r.unwrap_or_else(|reason| parse_err(reason))))
        .collect()
}

// Outer error: a typed ingest error; inner Err(String): manifest content problem.
fn resolve_entry(
    e: &ManifestEntry,
    base: &Path,
) -> Result<VideoSequence, Result<IngestError, String>> {
    let captured_at = match &e.captured_at {
        None => None,
        Some(s) => Some(
            DateTime::parse_from_rfc3339(s)
                .map_err(|err| Err(format!("bad captured_at {s:?}: {err}")))?
                .with_timezone(&Utc),
        ),
    };
    let pattern = glob::Pattern::new(&e.frame_glob)
        .map_err(|err| Err(format!("bad frame_glob {:?}: {err}", e.frame_glob)))?;
    let dir = if e.frames_dir.is_absolute() {
        e.frames_dir.clone()
    } else {
        base.join(&e.frames_dir)
    };
    let missing = || {
        Ok(IngestError::MissingFrames {
            sequence_id: e.sequence_id.clone(),
            dir: dir.display().to_string(),
        })
    };

    let mut names: Vec<String> = match fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|ent| ent.ok())
            .filter(|ent| ent.file_type().map(|t| t.is_file()).unwrap_or(false))
            .filter_map(|ent| ent.file_name().into_string().ok())
            .filter(|name| pattern.matches(name))
            .collect(),
        Err(_) => return Err(missing()),
    };
    names.sort_by(|a, b| natural_cmp(a, b));

    let mut frames = Vec::with_capacity(names.len());
    for name in names {
        let path = dir.join(&name);
        let Ok((w, h)) = image_dimensions(&path) else {
            log::warn!("skipping unreadable frame {}", path.display());
            continue;
        };
        frames.push(FrameRef {
            sequence_id: e.sequence_id.clone(),
            frame_index: frames.len() as u32,
            image_path: path,
            width: w as u32,
            height: h as u32,
        });
    }
    if frames.is_empty() {
        return Err(missing());
    }
    Ok(VideoSequence {
        sequence_id: e.sequence_id.clone(),
        camera_location_id: e.camera_location_id.clone(),
        site_id: e.site_id.clone(),
        captured_at,
        frames,
    })
}

/// Every `stride`-th frame from the start, at most `max_frames` of them.
pub fn sample_frames(seq: &VideoSequence, stride: usize, max_frames: usize) -> Vec<FrameRef> {
    assert!(stride >= 1 && max_frames >= 1, "stride and max_frames must be positive");
    seq.frames
        .iter()
        .step_by(stride)
        .take(max_frames)
        .cloned()
        .collect()
}

/// Stride that yields about `target` frames for an `n`-frame sequence.
pub fn auto_stride(n: usize, target: usize) -> usize {
    n.div_ceil(target.max(1)).max(1)
}
