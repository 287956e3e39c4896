//! Descriptor matching and frame/video similarity scores.
//!
//! Frames are compared with a mutual (cross-checked) nearest-neighbour ratio
//! test; each surviving match contributes `1 / (1 + d²)` to the frame score,
//! and a video pair scores the maximum over all its frame pairs.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sift::Descriptor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub query: usize,
    pub reference: usize,
    pub distance: f32,
}

/// Scored, canonically ordered (`video_a < video_b`) video pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub video_a: String,
    pub video_b: String,
    pub score: f64,
    pub best_frame_pair: (u32, u32),
    pub n_contributing_matches: u32,
    pub same_camera_location: bool,
}

impl SimilarityRecord {
    pub fn key(&self) -> (&str, &str) {
        (&self.video_a, &self.video_b)
    }
}

/// Descriptors of one detection in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub frame_index: u32,
    pub detection_index: u32,
    pub descriptors: Vec<Descriptor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub sequence_id: String,
    pub camera_location_id: String,
    /// Sorted by `(frame_index, detection_index)`.
    pub frames: Vec<FrameFeatures>,
}

impl VideoFeatures {
    pub fn n_descriptors(&self) -> usize {
        self.frames.iter().map(|f| f.descriptors.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub ratio: f64,
    /// Skip video pairs recorded at the same camera location.
    pub skip_same_location: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            ratio: 0.8,
            skip_same_location: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TwoNearest {
    best: usize,
    d1: f32,
    d2: f32,
}

/// Two nearest neighbours per row of a row-major `rows × cols` distance
/// matrix; ties resolve to the lowest index.
fn two_nearest_rows(dist: &[f32], rows: usize, cols: usize) -> Vec<Option<TwoNearest>> {
    (0..rows)
        .map(|r| nearest_in(dist[r * cols..(r + 1) * cols].iter().copied()))
        .collect()
}

fn two_nearest_cols(dist: &[f32], rows: usize, cols: usize) -> Vec<Option<TwoNearest>> {
    (0..cols)
        .map(|c| nearest_in((0..rows).map(|r| dist[r * cols + c])))
        .collect()
}

fn nearest_in(values: impl Iterator<Item = f32>) -> Option<TwoNearest> {
    let mut out: Option<TwoNearest> = None;
    for (i, d) in values.enumerate() {
        out = Some(match out {
            None => TwoNearest {
                best: i,
                d1: d,
                d2: f32::INFINITY,
            },
            Some(t) if d < t.d1 => TwoNearest {
                best: i,
                d1: d,
                d2: t.d1,
            },
            Some(t) if d < t.d2 => TwoNearest { d2: d, ..t },
            Some(t) => t,
        });
    }
    out
}

/// Ratio test on Euclidean distances. A zero second distance only passes
/// when the first is zero too; a lone neighbour always passes.
pub fn passes_ratio(d1: f32, d2: f32, ratio: f64) -> bool {
    if d2 == 0.0 {
        return d1 == 0.0;
    }
    (d1 as f64) < ratio * d2 as f64
}

/// Mutual nearest-neighbour matches that pass the ratio test in both
/// directions, ordered by query index.
pub fn ratio_match(query: &[Descriptor], reference: &[Descriptor], ratio: f64) -> Vec<MatchPair> {
    let (nq, nr) = (query.len(), reference.len());
    if nq == 0 || nr == 0 {
        return Vec::new();
    }
    let mut dist = vec![0f32; nq * nr];
    for (q, row) in query.iter().zip(dist.chunks_exact_mut(nr)) {
        for (r, slot) in reference.iter().zip(row.iter_mut()) {
            *slot = q.distance(r);
        }
    }
    let forward = two_nearest_rows(&dist, nq, nr);
    let backward = two_nearest_cols(&dist, nq, nr);
    forward
        .iter()
        .enumerate()
        .filter_map(|(q, f)| {
            let f = (*f)?;
            if !passes_ratio(f.d1, f.d2, ratio) {
                return None;
            }
            let b = backward[f.best]?;
            (b.best == q && passes_ratio(b.d1, b.d2, ratio)).then_some(MatchPair {
                query: q,
                reference: f.best,
                distance: f.d1,
            })
        })
        .collect()
}

/// `Σ 1 / (1 + d²)` over the matches, summed in ascending order of the
/// terms so the value does not depend on match order.
pub fn frame_score(matches: &[MatchPair]) -> f64 {
    let mut terms: Vec<f64> = matches
        .iter()
        .map(|m| {
            let d = m.distance as f64;
            1.0 / (1.0 + d * d)
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchError {
    /// One side has no descriptors; the zero-score record is still usable.
    #[error("video pair {}/{} has a side without descriptors", .record.video_a, .record.video_b)]
    NoFeatures { record: SimilarityRecord },
}

/// Best frame-pair score between two videos.
pub fn video_score(
    a: &VideoFeatures,
    b: &VideoFeatures,
    ratio: f64,
) -> Result<SimilarityRecord, MatchError> {
    let (a, b) = if a.sequence_id <= b.sequence_id {
        (a, b)
    } else {
        (b, a)
    };
    let first = |v: &VideoFeatures| v.frames.first().map(|f| f.frame_index).unwrap_or(0);
    let mut record = SimilarityRecord {
        video_a: a.sequence_id.clone(),
        video_b: b.sequence_id.clone(),
        score: 0.0,
        best_frame_pair: (first(a), first(b)),
        n_contributing_matches: 0,
        same_camera_location: a.camera_location_id == b.camera_location_id,
    };
    if a.n_descriptors() == 0 || b.n_descriptors() == 0 {
        return Err(MatchError::NoFeatures { record });
    }
    let mut best: Option<(f64, (u32, u32), u32)> = None;
    for fa in &a.frames {
        for fb in &b.frames {
            let m = ratio_match(&fa.descriptors, &fb.descriptors, ratio);
            let s = frame_score(&m);
            let better = match best {
                None => true,
                Some((bs, pair, _)) => match s.total_cmp(&bs) {
                    Ordering::Greater => true,
                    Ordering::Equal => (fa.frame_index, fb.frame_index) < pair,
                    Ordering::Less => false,
                },
            };
            if better {
                best = Some((s, (fa.frame_index, fb.frame_index), m.len() as u32));
            }
        }
    }
    let (score, pair, n) = best.expect("both videos have frames");
    record.score = score;
    record.best_frame_pair = pair;
    record.n_contributing_matches = n;
    Ok(record)
}

/// Scores every unordered video pair in parallel; output sorted by
/// `(video_a, video_b)`.
pub fn score_all(videos: &[VideoFeatures], cfg: &MatchConfig) -> Vec<SimilarityRecord> {
    let pairs: Vec<(usize, usize)> = (0..videos.len())
        .flat_map(|i| (i + 1..videos.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| {
            !(cfg.skip_same_location
                && videos[i].camera_location_id == videos[j].camera_location_id)
        })
        .collect();
    let mut out: Vec<SimilarityRecord> = pairs
        .par_iter()
        .map(|&(i, j)| match video_score(&videos[i], &videos[j], cfg.ratio) {
            Ok(r) => r,
            Err(MatchError::NoFeatures { record }) => {
                log::warn!(
                    "no descriptors for pair {}/{}; scored 0",
                    record.video_a,
                    record.video_b
                );
                record
            }
        })
        .collect();
    out.sort_by(|x, y| x.key().cmp(&y.key()));
    out
}
