//! Evaluation against ground-truth individual labels, threshold sweeps, and
//! a synthetic patterned-animal dataset generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{build_clusters, components, ClusterGraph};
use crate::detect::BBox;
use crate::image::GrayImage;
use crate::matching::SimilarityRecord;
use crate::sift::pyramid::gaussian_blur;

/// sequence_id → individual_id.
pub type GroundTruthLabels = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no match has both endpoints labeled; success rate is undefined")]
    NoVerifiableMatches { report: Box<EvaluationReport> },
    #[error("labels file {path}: line {line}: {reason}")]
    LabelParse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("sweep thresholds must be at least two values in ascending order")]
    InvalidThresholds,
    #[error("invalid synthetic dataset parameters: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn parse_labels(text: &str, path: &Path) -> Result<GroundTruthLabels, BenchError> {
    let err = |line: usize, reason: String| BenchError::LabelParse {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.iter().map(str::trim).ne(["sequence_id", "individual_id"]) {
        return Err(err(1, "expected header sequence_id,individual_id".into()));
    }
    let mut out = GroundTruthLabels::new();
    for row in rdr.records() {
        let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let (seq, ind) = (row[0].trim(), row[1].trim());
        if seq.is_empty() || ind.is_empty() {
            return Err(err(line, "empty field".into()));
        }
        if out.insert(seq.to_string(), ind.to_string()).is_some() {
            return Err(err(line, format!("sequence {seq} labeled twice")));
        }
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<GroundTruthLabels, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_labels(&text, path)
}

pub fn labels_to_csv(labels: &GroundTruthLabels) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sequence_id", "individual_id"]).expect("in-memory write");
    for (s, i) in labels {
        w.write_record([s, i]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPurity {
    pub cluster_id: String,
    pub size: usize,
    pub n_labeled: usize,
    /// Share of labeled members carrying the majority label.
    pub purity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub threshold: f64,
    /// Kept edges with both endpoints labeled.
    pub n_matches: usize,
    pub n_correct: usize,
    /// Kept edges with at least one unlabeled endpoint.
    pub n_unverifiable: usize,
    pub success_rate: Option<f64>,
    pub n_clusters: usize,
    pub clusters: Vec<ClusterPurity>,
    /// Share of labeled videos whose cluster is matched to their individual
    /// under a greedy one-to-one cluster/individual assignment.
    pub partition_agreement: Option<f64>,
    /// Share of same-individual video pairs that end up in one cluster.
    /// Not part of the match success rate.
    pub pair_recall: Option<f64>,
}

/// Scores every retained edge; never fails.
pub fn evaluation_report(graph: &ClusterGraph, labels: &GroundTruthLabels) -> EvaluationReport {
    let (mut n_matches, mut n_correct, mut n_unverifiable) = (0, 0, 0);
    for (a, b) in graph.edges.keys() {
        match (labels.get(a), labels.get(b)) {
            (Some(x), Some(y)) => {
                n_matches += 1;
                n_correct += usize::from(x == y);
            }
            _ => n_unverifiable += 1,
        }
    }
    let comps = components(graph);
    let clusters = comps
        .iter()
        .map(|c| {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for m in &c.members {
                if let Some(l) = labels.get(m) {
                    *counts.entry(l).or_default() += 1;
                }
            }
            let n_labeled: usize = counts.values().sum();
            let top = counts.values().copied().max().unwrap_or(0);
            ClusterPurity {
                cluster_id: c.cluster_id.clone(),
                size: c.members.len(),
                n_labeled,
                purity: (n_labeled > 0).then(|| top as f64 / n_labeled as f64),
            }
        })
        .collect();

    let mut overlap: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut n_labeled_videos = 0usize;
    for c in &comps {
        for m in &c.members {
            if let Some(l) = labels.get(m) {
                *overlap.entry((c.cluster_id.as_str(), l.as_str())).or_default() += 1;
                n_labeled_videos += 1;
            }
        }
    }
    let mut cells: Vec<((&str, &str), usize)> = overlap.into_iter().collect();
    cells.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    let (mut used_c, mut used_i) = (BTreeSet::new(), BTreeSet::new());
    let mut agreed = 0usize;
    for ((c, i), n) in cells {
        if !used_c.contains(c) && !used_i.contains(i) {
            used_c.insert(c);
            used_i.insert(i);
            agreed += n;
        }
    }

    let cluster_of = graph.assignment();
    let labeled: Vec<(&String, &String)> = graph
        .nodes
        .iter()
        .filter_map(|n| labels.get(n).map(|l| (n, l)))
        .collect();
    let (mut true_pairs, mut recalled) = (0usize, 0usize);
    for (i, (na, la)) in labeled.iter().enumerate() {
        for (nb, lb) in &labeled[i + 1..] {
            if la == lb {
                true_pairs += 1;
                recalled += usize::from(cluster_of[*na] == cluster_of[*nb]);
            }
        }
    }

    EvaluationReport {
        threshold: graph.threshold,
        n_matches,
        n_correct,
        n_unverifiable,
        success_rate: (n_matches > 0).then(|| n_correct as f64 / n_matches as f64),
        n_clusters: comps.len(),
        clusters,
        partition_agreement: (n_labeled_videos > 0).then(|| agreed as f64 / n_labeled_videos as f64),
        pair_recall: (true_pairs > 0).then(|| recalled as f64 / true_pairs as f64),
    }
}

/// Match success rate of a clustered graph. Fails when no retained edge
/// has both endpoints labeled; the error still carries the report.
pub fn evaluate(
    graph: &ClusterGraph,
    labels: &GroundTruthLabels,
) -> Result<EvaluationReport, BenchError> {
    let report = evaluation_report(graph, labels);
    if report.n_matches == 0 {
        return Err(BenchError::NoVerifiableMatches {
            report: Box::new(report),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub n_matches: usize,
    pub n_correct: usize,
    pub success_rate: Option<f64>,
    pub pair_recall: Option<f64>,
    pub n_clusters: usize,
}

pub fn threshold_sweep(
    records: &[SimilarityRecord],
    labels: &GroundTruthLabels,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>, BenchError> {
    if thresholds.len() < 2 || thresholds.windows(2).any(|w| !(w[0] <= w[1])) || thresholds[0] <= 0.0 {
        return Err(BenchError::InvalidThresholds);
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let r = evaluation_report(&build_clusters(records, t), labels);
            SweepRow {
                threshold: t,
                n_matches: r.n_matches,
                n_correct: r.n_correct,
                success_rate: r.success_rate,
                pair_recall: r.pair_recall,
                n_clusters: r.n_clusters,
            }
        })
        .collect())
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "n_matches", "n_correct", "success_rate", "pair_recall", "n_clusters"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            crate::store::format_significant(r.threshold, 9),
            r.n_matches.to_string(),
            r.n_correct.to_string(),
            opt(r.success_rate),
            opt(r.pair_recall),
            r.n_clusters.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl FromStr for Difficulty {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            _ => Err(format!("unknown difficulty {s:?} (easy, medium, hard)")),
        }
    }
}

/// Per-difficulty appearance ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyParams {
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    pub noise_sigma: f64,
    pub gain_range: (f64, f64),
}

impl Difficulty {
    pub fn params(self) -> DifficultyParams {
        match self {
            Difficulty::Easy => DifficultyParams {
                max_rotation_deg: 10.0,
                scale_range: (0.85, 1.2),
                noise_sigma: 0.01,
                gain_range: (0.95, 1.05),
            },
            Difficulty::Medium => DifficultyParams {
                max_rotation_deg: 25.0,
                scale_range: (0.7, 1.4),
                noise_sigma: 0.03,
                gain_range: (0.88, 1.12),
            },
            Difficulty::Hard => DifficultyParams {
                max_rotation_deg: 25.0,
                scale_range: (0.7, 1.4),
                noise_sigma: 0.06,
                gain_range: (0.85, 1.2),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_individuals: usize,
    pub videos_per_individual: usize,
    pub frames_per_video: usize,
    pub difficulty: Difficulty,
    /// `None` uses `min(3, n_individuals)` but at least one.
    pub n_locations: Option<usize>,
    pub width: usize,
    pub height: usize,
}

impl SynthSpec {
    pub fn new(
        seed: u64,
        n_individuals: usize,
        videos_per_individual: usize,
        frames_per_video: usize,
        difficulty: Difficulty,
    ) -> Self {
        SynthSpec {
            seed,
            n_individuals,
            videos_per_individual,
            frames_per_video,
            difficulty,
            n_locations: None,
            width: 320,
            height: 240,
        }
    }

    pub fn locations(&self) -> usize {
        self.n_locations.unwrap_or(self.n_individuals.min(3)).max(1)
    }
}

/// `sha256(seed ‖ parts…)` truncated to a ChaCha seed.
pub fn derived_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub const BODY_SEMI_AXES: (f64, f64) = (56.0, 34.0);
const BODY_TONE: f32 = 0.85;
const SPOT_TONE: f32 = 0.1;
const ROSETTE_CENTER_TONE: f32 = 0.45;
const BACKGROUND_RANGE: (f32, f32) = (0.3, 0.55);

/// Spot texture of one individual: a light elliptical body covered with
/// dark disks and rosettes, centred in a `2a+8 × 2b+8` image.
pub fn spot_texture(seed: u64, individual: usize) -> GrayImage {
    let mut rng = derived_rng(seed, &[b"individual", &(individual as u64).to_le_bytes()]);
    let (a, b) = BODY_SEMI_AXES;
    let (w, h) = ((2.0 * a) as usize + 8, (2.0 * b) as usize + 8);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let shade: f64 = rng.gen_range(-0.04..0.04);
    let mut img = GrayImage::from_fn(w, h, |x, _| {
        BODY_TONE + (shade * (x as f64 - cx) / a) as f32
    });
    let n_spots = rng.gen_range(40..56);
    for _ in 0..n_spots {
        // rejection-sample a centre inside the ellipse
        let (sx, sy) = loop {
            let u: f64 = rng.gen_range(-1.0..1.0);
            let v: f64 = rng.gen_range(-1.0..1.0);
            if u * u + v * v <= 0.95 {
                break (cx + u * a, cy + v * b);
            }
        };
        let r: f64 = rng.gen_range(2.5..5.5);
        let rosette = rng.gen_bool(0.45);
        let inner = r * 0.5;
        let x0 = (sx - r - 1.0).floor().max(0.0) as usize;
        let y0 = (sy - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((sx + r + 1.0).ceil() as usize).min(w - 1);
        let y1 = ((sy + r + 1.0).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = (x as f64 - sx).hypot(y as f64 - sy);
                // one pixel of linear falloff at each edge
                let cover = (r + 0.5 - d).clamp(0.0, 1.0) as f32;
                if cover <= 0.0 {
                    continue;
                }
                let tone = if rosette {
                    let t = (d - inner + 0.5).clamp(0.0, 1.0) as f32;
                    ROSETTE_CENTER_TONE * (1.0 - t) + SPOT_TONE * t
                } else {
                    SPOT_TONE
                };
                let old = img.get(x, y);
                img.set(x, y, old * (1.0 - cover) + tone.min(old) * cover);
            }
        }
    }
    gaussian_blur(&img, 0.7)
}

/// Static scene of one camera location: layered value noise plus rocks and
/// trunks, confined to a mid-grey range.
pub fn background_scene(seed: u64, location: usize, width: usize, height: usize) -> GrayImage {
    let mut rng = derived_rng(seed, &[b"location", &(location as u64).to_le_bytes()]);
    let mut acc = vec![0f32; width * height];
    for (cell, amp) in [(40usize, 0.5f32), (16, 0.3), (7, 0.2)] {
        let gw = width / cell + 2;
        let gh = height / cell + 2;
        let grid: Vec<f32> = (0..gw * gh).map(|_| rng.gen()).collect();
        let g = GrayImage::from_vec(gw, gh, grid);
        for y in 0..height {
            for x in 0..width {
                acc[y * width + x] +=
                    amp * g.sample_bilinear(x as f32 / cell as f32, y as f32 / cell as f32);
            }
        }
    }
    let mut img = GrayImage::from_vec(width, height, acc);
    let n_rocks = rng.gen_range(14..22);
    for _ in 0..n_rocks {
        let (rx, ry) = (rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64));
        let (ra, rb) = (rng.gen_range(4.0..22.0), rng.gen_range(3.0..14.0));
        let tone: f32 = rng.gen_range(0.0..1.0);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 - rx, y as f64 - ry);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                if (u / ra).powi(2) + (v / rb).powi(2) <= 1.0 {
                    img.set(x, y, tone);
                }
            }
        }
    }
    for _ in 0..rng.gen_range(1..4) {
        let tx = rng.gen_range(0..width);
        let tw = rng.gen_range(4..12);
        let tone: f32 = rng.gen_range(0.0..1.0);
        for y in 0..height {
            for x in tx..(tx + tw).min(width) {
                img.set(x, y, 0.5 * (img.get(x, y) + tone));
            }
        }
    }
    let (lo, hi) = img
        .pixels()
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1e-6);
    let (blo, bhi) = BACKGROUND_RANGE;
    for v in img.pixels_mut() {
        *v = blo + (bhi - blo) * (*v - lo) / span;
    }
    gaussian_blur(&img, 0.8)
}

/// Appearance of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPlan {
    pub sequence_id: String,
    pub individual: usize,
    pub location: usize,
    pub rotation: f64,
    pub scale: f64,
    pub gain: f64,
    pub start: (f64, f64),
    pub velocity: (f64, f64),
}

fn body_half_extents(rotation: f64, scale: f64) -> (f64, f64) {
    let (a, b) = (BODY_SEMI_AXES.0 * scale, BODY_SEMI_AXES.1 * scale);
    let (s, c) = rotation.sin_cos();
    ((a * c).hypot(b * s), (a * s).hypot(b * c))
}

pub fn plan_videos(spec: &SynthSpec) -> Vec<VideoPlan> {
    let p = spec.difficulty.params();
    let n_loc = spec.locations();
    let n_videos = spec.n_individuals * spec.videos_per_individual;
    // shuffled id assignment so ids carry no identity information
    let mut ids: Vec<usize> = (0..n_videos).collect();
    let mut rng = derived_rng(spec.seed, &[b"ids"]);
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.gen_range(0..=i));
    }
    let steps = spec.frames_per_video.saturating_sub(1).max(1) as f64;
    let mut plans = Vec::with_capacity(n_videos);
    for ind in 0..spec.n_individuals {
        for k in 0..spec.videos_per_individual {
            let seq = format!("v{:03}", ids[ind * spec.videos_per_individual + k]);
            let mut rng = derived_rng(spec.seed, &[b"video", seq.as_bytes()]);
            let rotation = rng.gen_range(-p.max_rotation_deg..=p.max_rotation_deg).to_radians();
            let scale = rng.gen_range(p.scale_range.0..=p.scale_range.1);
            let gain = rng.gen_range(p.gain_range.0..=p.gain_range.1);
            let (hx, hy) = body_half_extents(rotation, scale);
            let margin = 3.0;
            let (xmin, xmax) = (hx + margin, spec.width as f64 - hx - margin);
            let (ymin, ymax) = (hy + margin, spec.height as f64 - hy - margin);
            assert!(xmin < xmax && ymin < ymax, "frame too small for the animal");
            let speed = rng.gen_range(10.0..18.0f64).min((xmax - xmin) / steps);
            let vx = if rng.gen_bool(0.5) { speed } else { -speed };
            let vy = rng.gen_range(-2.0..2.0f64).clamp(-(ymax - ymin) / steps, (ymax - ymin) / steps);
            let span_x = (xmax - xmin - vx.abs() * steps).max(0.0);
            let span_y = (ymax - ymin - vy.abs() * steps).max(0.0);
            let x0 = xmin + rng.gen::<f64>() * span_x + if vx < 0.0 { vx.abs() * steps } else { 0.0 };
            let y0 = ymin + rng.gen::<f64>() * span_y + if vy < 0.0 { vy.abs() * steps } else { 0.0 };
            plans.push(VideoPlan {
                sequence_id: seq,
                individual: ind,
                location: (ind + k) % n_loc,
                rotation,
                scale,
                gain,
                start: (x0, y0),
                velocity: (vx, vy),
            });
        }
    }
    plans.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
    plans
}

/// Composites one frame; returns it with the animal's true bounding box.
pub fn render_frame(
    spec: &SynthSpec,
    plan: &VideoPlan,
    texture: &GrayImage,
    background: &GrayImage,
    frame_index: usize,
) -> (GrayImage, BBox) {
    let p = spec.difficulty.params();
    let t = frame_index as f64;
    let (cx, cy) = (plan.start.0 + plan.velocity.0 * t, plan.start.1 + plan.velocity.1 * t);
    let (a, b) = BODY_SEMI_AXES;
    let (tcx, tcy) = (texture.width() as f64 / 2.0, texture.height() as f64 / 2.0);
    let (s, c) = plan.rotation.sin_cos();
    let (hx, hy) = body_half_extents(plan.rotation, plan.scale);
    let mut frame = background.clone();
    let x0 = (cx - hx - 2.0).floor().max(0.0) as usize;
    let y0 = (cy - hy - 2.0).floor().max(0.0) as usize;
    let x1 = ((cx + hx + 2.0).ceil() as usize).min(spec.width - 1);
    let y1 = ((cy + hy + 2.0).ceil() as usize).min(spec.height - 1);
    let (mut bx0, mut by0, mut bx1, mut by1) = (usize::MAX, usize::MAX, 0, 0);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // inverse similarity transform into texture coordinates
            let u = (c * dx + s * dy) / plan.scale;
            let v = (-s * dx + c * dy) / plan.scale;
            let q = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
            let edge = (1.0 - q) * b * plan.scale;
            let alpha = (edge + 0.5).clamp(0.0, 1.0) as f32;
            if alpha <= 0.0 {
                continue;
            }
            if alpha >= 0.5 {
                bx0 = bx0.min(x);
                by0 = by0.min(y);
                bx1 = bx1.max(x);
                by1 = by1.max(y);
            }
            let tex = texture.sample_bilinear((u + tcx) as f32, (v + tcy) as f32);
            let val = (tex * plan.gain as f32).clamp(0.0, 1.0);
            let bg = frame.get(x, y);
            frame.set(x, y, bg * (1.0 - alpha) + val * alpha);
        }
    }
    let mut rng = derived_rng(
        spec.seed,
        &[b"frame", plan.sequence_id.as_bytes(), &(frame_index as u64).to_le_bytes()],
    );
    let normal = Normal::new(0.0f32, p.noise_sigma as f32).expect("valid sigma");
    for v in frame.pixels_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
    let bbox = BBox {
        x: bx0 as u32,
        y: by0 as u32,
        w: (bx1 - bx0 + 1) as u32,
        h: (by1 - by0 + 1) as u32,
    };
    (frame, bbox)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub labels_path: PathBuf,
    /// Ground-truth boxes in the detection-import format.
    pub detections_path: PathBuf,
    pub labels: GroundTruthLabels,
    pub plans: Vec<VideoPlan>,
}

impl SyntheticDataset {
    pub fn locations(&self) -> BTreeMap<String, String> {
        self.plans
            .iter()
            .map(|p| (p.sequence_id.clone(), format!("loc{}", p.location)))
            .collect()
    }
}

/// Writes `frames/<seq>/frame_NNN.pgm`, `manifest.json`, `labels.csv` and
/// `detections.json` under `out_dir`.
pub fn generate_synthetic_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<SyntheticDataset, BenchError> {
    if spec.n_individuals == 0 || spec.videos_per_individual == 0 || spec.frames_per_video == 0 {
        return Err(BenchError::InvalidSpec("all counts must be at least 1".into()));
    }
    if spec.width < 200 || spec.height < 150 {
        return Err(BenchError::InvalidSpec("frames must be at least 200x150".into()));
    }
    let plans = plan_videos(spec);
    let textures: Vec<GrayImage> = (0..spec.n_individuals)
        .into_par_iter()
        .map(|i| spot_texture(spec.seed, i))
        .collect();
    let backgrounds: Vec<GrayImage> = (0..spec.locations())
        .into_par_iter()
        .map(|l| background_scene(spec.seed, l, spec.width, spec.height))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|v| (0..spec.frames_per_video).map(move |f| (v, f)))
        .collect();
    for p in &plans {
        let dir = out_dir.join("frames").join(&p.sequence_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let boxes: Vec<BBox> = jobs
        .par_iter()
        .map(|&(v, f)| {
            let plan = &plans[v];
            let (img, bbox) = render_frame(spec, plan, &textures[plan.individual], &backgrounds[plan.location], f);
            let path = out_dir
                .join("frames")
                .join(&plan.sequence_id)
                .join(format!("frame_{f:03}.pgm"));
            fs::write(&path, img.encode_pgm()).map_err(io_err(&path))?;
            Ok(bbox)
        })
        .collect::<Result<_, BenchError>>()?;

    let manifest: Vec<serde_json::Value> = plans
        .iter()
        .enumerate()
        .map(|(i, p)| {
            serde_json::json!({
                "sequence_id": p.sequence_id,
                "camera_location_id": format!("loc{}", p.location),
                "site_id": "synthetic",
                "captured_at": format!("2024-01-{:02}T{:02}:00:00Z", 1 + i / 24, i % 24),
                "frames_dir": format!("frames/{}", p.sequence_id),
                "frame_glob": "*.pgm",
            })
        })
        .collect();
    let (w, h) = (spec.width as f64, spec.height as f64);
    let detections: Vec<serde_json::Value> = jobs
        .iter()
        .zip(&boxes)
        .map(|(&(v, f), b)| {
            serde_json::json!({
                "image_id": format!("{}/{}", plans[v].sequence_id, f),
                "detections": [{
                    "category": "animal",
                    "conf": 0.95,
                    "bbox": [b.x as f64 / w, b.y as f64 / h, b.w as f64 / w, b.h as f64 / h],
                }],
            })
        })
        .collect();
    let labels: GroundTruthLabels = plans
        .iter()
        .map(|p| (p.sequence_id.clone(), format!("ind{:02}", p.individual)))
        .collect();

    let write = |name: &str, bytes: Vec<u8>| -> Result<PathBuf, BenchError> {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        Ok(path)
    };
    let manifest_path = write("manifest.json", serde_json::to_vec_pretty(&manifest).expect("json"))?;
    let detections_path = write("detections.json", serde_json::to_vec_pretty(&detections).expect("json"))?;
    let labels_path = write("labels.csv", labels_to_csv(&labels).into_bytes())?;
    Ok(SyntheticDataset {
        root: out_dir.to_path_buf(),
        manifest: manifest_path,
        labels_path,
        detections_path,
        labels,
        plans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Edge;
    use proptest::prelude::*;
    use rand::Rng;

    fn graph(edges: &[(&str, &str, f64)], nodes: &[&str]) -> ClusterGraph {
        let mut g = ClusterGraph::new(0.5);
        for n in nodes {
            g.add_node(n);
        }
        for (a, b, s) in edges {
            let e = Edge::new(a, b, *s);
            g.add_node(&e.a);
            g.add_node(&e.b);
            g.edges.insert((e.a, e.b), e.score);
        }
        g
    }

    #[test]
    fn paper_headline_rate() {
        // 116 kept edges, 97 joining same-label videos
        let mut g = ClusterGraph::new(0.5);
        let mut labels = GroundTruthLabels::new();
        for i in 0..116 {
            let (a, b) = (format!("a{i:03}"), format!("b{i:03}"));
            labels.insert(a.clone(), format!("ind{i}"));
            let other = if i < 97 { format!("ind{i}") } else { format!("other{i}") };
            labels.insert(b.clone(), other);
            g.sequential_insert(&Edge::new(&a, &b, 0.9));
        }
        let r = evaluate(&g, &labels).unwrap();
        assert_eq!((r.n_matches, r.n_correct), (116, 97));
        assert!((r.success_rate.unwrap() - 0.8362).abs() < 1e-4);
    }

    #[test]
    fn all_correct_and_empty() {
        let g = graph(&[("a", "b", 0.9), ("b", "c", 0.8)], &[]);
        let labels: GroundTruthLabels =
            [("a", "x"), ("b", "x"), ("c", "x")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        assert_eq!(evaluate(&g, &labels).unwrap().success_rate, Some(1.0));
        let empty = graph(&[], &["a", "b"]);
        match evaluate(&empty, &labels) {
            Err(BenchError::NoVerifiableMatches { report }) => assert_eq!(report.success_rate, None),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unlabeled_endpoints_are_unverifiable() {
        let g = graph(&[("a", "b", 0.9), ("b", "z", 0.8)], &[]);
        let labels: GroundTruthLabels =
            [("a", "x"), ("b", "y")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let r = evaluate(&g, &labels).unwrap();
        assert_eq!((r.n_matches, r.n_correct, r.n_unverifiable), (1, 0, 1));
    }

    #[test]
    fn purity_agreement_recall() {
        // clusters {a,b,c} and {d}; truth {a,b}, {c,d}
        let g = graph(&[("a", "b", 0.9), ("b", "c", 0.8)], &["d"]);
        let labels: GroundTruthLabels = [("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let r = evaluate(&g, &labels).unwrap();
        assert_eq!(r.clusters[0].purity, Some(2.0 / 3.0));
        assert_eq!(r.clusters[1].purity, Some(1.0));
        assert_eq!(r.partition_agreement, Some(0.75));
        assert_eq!(r.pair_recall, Some(0.5));
    }

    proptest! {
        #[test]
        fn relabeling_invariance(n_edges in 1usize..20, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nodes: Vec<String> = (0..12).map(|i| format!("n{i:02}")).collect();
            let mut g = ClusterGraph::new(0.1);
            for n in &nodes { g.add_node(n); }
            for _ in 0..n_edges {
                let (i, j) = (rng.gen_range(0..12), rng.gen_range(0..12));
                if i != j {
                    let e = Edge::new(&nodes[i], &nodes[j], 0.5);
                    g.edges.insert((e.a, e.b), 0.5);
                }
            }
            let labels: GroundTruthLabels = nodes.iter().map(|n| (n.clone(), format!("L{}", rng.gen_range(0..4)))).collect();
            let renamed: GroundTruthLabels = labels.iter().map(|(k, v)| (k.clone(), format!("zz-{v}-renamed"))).collect();
            let a = evaluation_report(&g, &labels);
            let b = evaluation_report(&g, &renamed);
            prop_assert_eq!(a.success_rate, b.success_rate);
            prop_assert_eq!(a.partition_agreement, b.partition_agreement);
            prop_assert_eq!(a.pair_recall, b.pair_recall);
            if let Some(r) = a.success_rate {
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }
    }

    fn rec(a: &str, b: &str, score: f64) -> SimilarityRecord {
        let e = Edge::new(a, b, score);
        SimilarityRecord {
            video_a: e.a,
            video_b: e.b,
            score,
            best_frame_pair: (0, 0),
            n_contributing_matches: 0,
            same_camera_location: false,
        }
    }

    #[test]
    fn sweep_rows() {
        let recs = vec![rec("a", "b", 5.0), rec("c", "d", 3.0), rec("a", "c", 1.0)];
        let labels: GroundTruthLabels = [("a", "x"), ("b", "x"), ("c", "y"), ("d", "z")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let rows = threshold_sweep(&recs, &labels, &[2.0, 2.0]).unwrap();
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[0].n_matches, 2);
        assert_eq!(rows[0].success_rate, Some(0.5));
        let rows = threshold_sweep(&recs, &labels, &[0.5, 4.0, 10.0]).unwrap();
        assert_eq!(rows.iter().map(|r| r.n_matches).collect::<Vec<_>>(), vec![2, 1, 0]);
        assert_eq!(rows[2].success_rate, None);
        assert!(matches!(threshold_sweep(&recs, &labels, &[3.0]), Err(BenchError::InvalidThresholds)));
        assert!(matches!(threshold_sweep(&recs, &labels, &[3.0, 1.0]), Err(BenchError::InvalidThresholds)));
        let csv = sweep_to_csv(&rows);
        assert!(csv.lines().nth(3).unwrap().starts_with("10,0,0,,"));
    }

    #[test]
    fn labels_roundtrip_and_errors() {
        let labels: GroundTruthLabels = [("v1", "a"), ("v2", "b")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let p = Path::new("labels.csv");
        assert_eq!(parse_labels(&labels_to_csv(&labels), p).unwrap(), labels);
        assert!(parse_labels("seq,ind\n", p).is_err());
        match parse_labels("sequence_id,individual_id\nv1,a\nv1,b\n", p) {
            Err(BenchError::LabelParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::new(11, 2, 2, 3, Difficulty::Medium);
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let a = generate_synthetic_dataset(&spec, d1.path()).unwrap();
        let b = generate_synthetic_dataset(&spec, d2.path()).unwrap();
        assert_eq!(a.labels, b.labels);
        for p in &a.plans {
            for f in 0..3 {
                let rel = PathBuf::from("frames").join(&p.sequence_id).join(format!("frame_{f:03}.pgm"));
                assert_eq!(fs::read(d1.path().join(&rel)).unwrap(), fs::read(d2.path().join(&rel)).unwrap());
            }
        }
        assert_eq!(fs::read(&a.manifest).unwrap(), fs::read(&b.manifest).unwrap());
        let seqs = crate::ingest::load_manifest(&a.manifest).unwrap();
        assert_eq!(seqs.len(), 4);
        assert!(seqs.iter().all(|s| s.frames.len() == 3));
    }

    #[test]
    fn one_individual_two_videos_share_label() {
        let spec = SynthSpec::new(3, 1, 2, 2, Difficulty::Easy);
        let d = tempfile::tempdir().unwrap();
        let ds = generate_synthetic_dataset(&spec, d.path()).unwrap();
        let labels: Vec<&String> = ds.labels.values().collect();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(load_labels(&ds.labels_path).unwrap(), ds.labels);
    }

    #[test]
    fn animal_stays_in_frame_with_tight_box() {
        for diff in [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard] {
            let spec = SynthSpec::new(5, 4, 3, 10, diff);
            for plan in plan_videos(&spec) {
                let tex = spot_texture(spec.seed, plan.individual);
                let bg = background_scene(spec.seed, plan.location, spec.width, spec.height);
                for f in [0, 9] {
                    let (img, b) = render_frame(&spec, &plan, &tex, &bg, f);
                    assert!(b.fits(img.width() as u32, img.height() as u32));
                    let (hx, hy) = body_half_extents(plan.rotation, plan.scale);
                    assert!((b.w as f64 - 2.0 * hx).abs() <= 3.0, "{b:?} {hx}");
                    assert!((b.h as f64 - 2.0 * hy).abs() <= 3.0, "{b:?} {hy}");
                    assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
        }
    }

    #[test]
    fn same_individual_never_shares_location_when_locations_suffice() {
        let spec = SynthSpec::new(9, 5, 3, 10, Difficulty::Easy);
        let plans = plan_videos(&spec);
        for i in 0..5 {
            let locs: BTreeSet<usize> = plans.iter().filter(|p| p.individual == i).map(|p| p.location).collect();
            assert_eq!(locs.len(), 3);
        }
    }
}
