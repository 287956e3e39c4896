//! Animal localization: external detector import and a fixed-camera
//! temporal-median motion detector.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GrayImage;
use crate::ingest::{FrameRef, VideoSequence};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("detection file parse error in {path}: {reason}")]
    DetectionParse { path: String, reason: String },
    #[error("no imported detection entry matched a known frame")]
    NoFramesMatched,
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("background model needs at least 3 frames, got {0}")]
    InsufficientFrames(usize),
}

/// Axis-aligned pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = (x1 - x0) as f64 * (y1 - y0) as f64;
        inter / (self.area() as f64 + other.area() as f64 - inter)
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSource {
    Imported,
    Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: FrameRef,
    pub bbox: BBox,
    pub confidence: f64,
    pub source: DetectionSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    pub camera_location_id: String,
    pub median_image: GrayImage,
    pub n_source_frames: usize,
}

#[derive(Debug, Deserialize)]
struct ImportEntry {
    image_id: String,
    #[serde(default)]
    detections: Vec<ImportDetection>,
}

#[derive(Debug, Deserialize)]
struct ImportDetection {
    category: serde_json::Value,
    conf: f64,
    bbox: [f64; 4],
}

/// Counters for entries dropped during import.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportStats {
    pub unknown_frames: usize,
    pub below_confidence: usize,
    pub other_category: usize,
}

/// Converts a normalized `[x, y, w, h]` box to pixels, clamped to the frame.
pub fn denormalize_bbox(b: [f64; 4], width: u32, height: u32) -> BBox {
    let to_px = |v: f64, full: u32| (v.clamp(0.0, 1.0) * full as f64).round() as u32;
    let x = to_px(b[0], width).min(width - 1);
    let y = to_px(b[1], height).min(height - 1);
    let w = to_px(b[2], width).clamp(1, width - x);
    let h = to_px(b[3], height).clamp(1, height - y);
    BBox { x, y, w, h }
}

/// Imports detector output keyed by `"<sequence_id>/<frame_index>"`.
pub fn import_detections(
    detections_path: &Path,
    sequences: &[VideoSequence],
    min_confidence: f64,
    categories: &[String],
) -> Result<(Vec<Detection>, ImportStats), DetectError> {
    let parse_err = |reason: String| DetectError::DetectionParse {
        path: detections_path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(detections_path).map_err(|e| parse_err(e.to_string()))?;
    let entries: Vec<ImportEntry> =
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;

    let frames: HashMap<(&str, u32), &FrameRef> = sequences
        .iter()
        .flat_map(|s| s.frames.iter())
        .map(|f| ((f.sequence_id.as_str(), f.frame_index), f))
        .collect();

    let mut stats = ImportStats::default();
    let mut matched = 0usize;
    let mut out = Vec::new();
    for entry in &entries {
        let frame = entry
            .image_id
            .rsplit_once('/')
            .and_then(|(seq, idx)| Some((seq, idx.parse::<u32>().ok()?)))
            .and_then(|key| frames.get(&key));
        let Some(frame) = frame else {
            stats.unknown_frames += 1;
            continue;
        };
        matched += 1;
        for d in &entry.detections {
            let category = match &d.category {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            if !categories.contains(&category) {
                stats.other_category += 1;
                continue;
            }
            if !(0.0..=1.0).contains(&d.conf) {
                return Err(parse_err(format!("confidence {} outside [0,1]", d.conf)));
            }
            if d.conf < min_confidence {
                stats.below_confidence += 1;
                continue;
            }
            out.push(Detection {
                frame: (*frame).clone(),
                bbox: denormalize_bbox(d.bbox, frame.width, frame.height),
                confidence: d.conf,
                source: DetectionSource::Imported,
            });
        }
    }
    if matched == 0 {
        return Err(DetectError::NoFramesMatched);
    }
    if stats.unknown_frames > 0 {
        log::warn!(
            "{} imported entries referenced unknown frames",
            stats.unknown_frames
        );
    }
    sort_detections(&mut out);
    Ok((out, stats))
}

pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        (&a.frame.sequence_id, a.frame.frame_index, a.bbox.y, a.bbox.x)
            .cmp(&(&b.frame.sequence_id, b.frame.frame_index, b.bbox.y, b.bbox.x))
    });
}

/// Per-pixel median over a stack of same-sized frames.
///
/// For an even count the lower median is used so the result is always one
/// of the observed values.
pub fn build_background(
    frames: &[GrayImage],
    camera_location_id: &str,
) -> Result<BackgroundModel, DetectError> {
    if frames.len() < 3 {
        return Err(DetectError::InsufficientFrames(frames.len()));
    }
    let dims = frames[0].dimensions();
    if let Some(bad) = frames.iter().find(|f| f.dimensions() != dims) {
        return Err(DetectError::DimensionMismatch {
            expected: dims,
            got: bad.dimensions(),
        });
    }
    let n = frames.len();
    let mid = (n - 1) / 2;
    let mut column = vec![0f32; n];
    let pixels = (0..dims.0 * dims.1)
        .map(|i| {
            for (slot, f) in column.iter_mut().zip(frames) {
                *slot = f.pixels()[i];
            }
            *column
                .select_nth_unstable_by(mid, |a, b| a.total_cmp(b))
                .1
        })
        .collect();
    Ok(BackgroundModel {
        camera_location_id: camera_location_id.to_string(),
        median_image: GrayImage::from_vec(dims.0, dims.1, pixels),
        n_source_frames: n,
    })
}

/// Indices of at most `cap` evenly spaced items out of `n`.
pub fn evenly_spaced(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    (0..cap).map(|i| i * n / cap).collect()
}

/// Background subtraction followed by 8-connected component extraction.
pub fn detect_motion(
    frame: &GrayImage,
    frame_ref: &FrameRef,
    bg: &BackgroundModel,
    diff_threshold: f32,
    min_area: usize,
) -> Result<Vec<Detection>, DetectError> {
    let dims = frame.dimensions();
    if bg.median_image.dimensions() != dims {
        return Err(DetectError::DimensionMismatch {
            expected: bg.median_image.dimensions(),
            got: dims,
        });
    }
    let (w, h) = dims;
    let diff: Vec<f32> = frame
        .pixels()
        .iter()
        .zip(bg.median_image.pixels())
        .map(|(a, b)| (a - b).abs())
        .collect();
    let mut label = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if label[start] || diff[start] <= diff_threshold {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        let mut area = 0usize;
        let mut sum = 0f64;
        while let Some(p) = stack.pop() {
            let (px, py) = (p % w, p / w);
            area += 1;
            sum += diff[p] as f64;
            x0 = x0.min(px);
            x1 = x1.max(px);
            y0 = y0.min(py);
            y1 = y1.max(py);
            for ny in py.saturating_sub(1)..=(py + 1).min(h - 1) {
                for nx in px.saturating_sub(1)..=(px + 1).min(w - 1) {
                    let q = ny * w + nx;
                    if !label[q] && diff[q] > diff_threshold {
                        label[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if area < min_area {
            continue;
        }
        out.push(Detection {
            frame: frame_ref.clone(),
            bbox: BBox {
                x: x0 as u32,
                y: y0 as u32,
                w: (x1 - x0 + 1) as u32,
                h: (y1 - y0 + 1) as u32,
            },
            confidence: (sum / area as f64).clamp(0.0, 1.0),
            source: DetectionSource::Motion,
        });
    }
    sort_detections(&mut out);
    Ok(out)
}

/// Drops sequences without any detection and trims kept sequences to their
/// detected frames.
pub fn filter_empty(
    sequences: &[VideoSequence],
    detections: &[Detection],
) -> (Vec<VideoSequence>, Vec<String>) {
    let detected: BTreeSet<(&str, u32)> = detections
        .iter()
        .map(|d| (d.frame.sequence_id.as_str(), d.frame.frame_index))
        .collect();
    let mut kept = Vec::new();
    let mut empty = Vec::new();
    for s in sequences {
        let frames: Vec<FrameRef> = s
            .frames
            .iter()
            .filter(|f| detected.contains(&(s.sequence_id.as_str(), f.frame_index)))
            .cloned()
            .collect();
        if frames.is_empty() {
            empty.push(s.sequence_id.clone());
        } else {
            kept.push(VideoSequence {
                frames,
                ..s.clone()
            });
        }
    }
    (kept, empty)
}

/// Frames carrying more than one detection, which violates the
/// one-animal-per-sequence assumption and is surfaced in the report.
pub fn multi_detection_frames(detections: &[Detection]) -> Vec<(String, u32)> {
    let mut counts: BTreeMap<(&str, u32), usize> = BTreeMap::new();
    for d in detections {
        *counts
            .entry((d.frame.sequence_id.as_str(), d.frame.frame_index))
            .or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|(_, c)| *c > 1)
        .map(|((s, f), _)| (s.to_string(), f))
        .collect()
}
