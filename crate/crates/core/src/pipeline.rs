//! Stage orchestration over a run directory.
//!
//! Each stage reads its upstream files from the run directory and writes its
//! own outputs atomically, so a failing stage never leaves partial files
//! behind. A full [`run`] records a content hash of every stage's inputs in
//! `stages.json` and skips stages whose inputs and outputs are unchanged.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{self, EvaluationReport, SweepRow};
use crate::cluster::{build_clusters, components, ClusterGraph};
use crate::config::{DetectMode, RunConfig};
use crate::detect::{self, BBox, Detection, DetectionSource, ImportStats};
use crate::image::{decode_image, GrayImage};
use crate::ingest::{auto_stride, load_manifest, sample_frames, FrameRef, VideoSequence};
use crate::matching::{score_all, FrameFeatures, SimilarityRecord, VideoFeatures};
use crate::report::{self, ReportMetadata};
use crate::sift::{self, SiftError};
use crate::species::SpeciesFilter;
use crate::store::{self, FeatureKey, FeatureStore, FeatureStoreEntry};

pub const SEQUENCES_FILE: &str = "sequences.json";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const STAGES_FILE: &str = "stages.json";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Detect,
    Extract,
    Match,
    Cluster,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Detect,
        Stage::Extract,
        Stage::Match,
        Stage::Cluster,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Detect => "detect",
            Stage::Extract => "extract",
            Stage::Match => "match",
            Stage::Cluster => "cluster",
            Stage::Report => "report",
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[SEQUENCES_FILE],
            Stage::Detect => &[DETECTIONS_FILE],
            Stage::Extract => &[store::FEATURES_FILE],
            Stage::Match => &[store::SIMILARITIES_FILE],
            Stage::Cluster => &[store::CLUSTERS_FILE],
            Stage::Report => &[report::REPORT_FILE, report::MEMBERSHIP_FILE, report::PAIRS_FILE],
        }
    }

    /// Run-directory files the stage reads.
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[],
            Stage::Detect => &[SEQUENCES_FILE],
            Stage::Extract => &[SEQUENCES_FILE, DETECTIONS_FILE],
            Stage::Match => &[SEQUENCES_FILE, DETECTIONS_FILE, store::FEATURES_FILE],
            Stage::Cluster => &[DETECTIONS_FILE, store::SIMILARITIES_FILE],
            Stage::Report => &[
                SEQUENCES_FILE,
                DETECTIONS_FILE,
                store::SIMILARITIES_FILE,
                store::CLUSTERS_FILE,
            ],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, PipelineError> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::new(ErrorKind::UnknownStage, None, format!("unknown stage {s:?}")))
    }
}

/// Error classes; each maps to its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    UnknownStage,
    Config,
    Ingest,
    Detect,
    Extract,
    StaleInputs,
    Store,
    Evaluate,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::UnknownStage => 2,
            ErrorKind::Config => 3,
            ErrorKind::Ingest => 4,
            ErrorKind::Detect => 5,
            ErrorKind::Extract => 6,
            ErrorKind::StaleInputs => 7,
            ErrorKind::Store => 8,
            ErrorKind::Evaluate => 9,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::UnknownStage => "unknown_stage",
            ErrorKind::Config => "config",
            ErrorKind::Ingest => "ingest",
            ErrorKind::Detect => "detect",
            ErrorKind::Extract => "extract",
            ErrorKind::StaleInputs => "stale_inputs",
            ErrorKind::Store => "store",
            ErrorKind::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub stage: Option<Stage>,
    pub message: String,
}

impl PipelineError {
    pub fn new(kind: ErrorKind, stage: Option<Stage>, message: impl Into<String>) -> Self {
        PipelineError {
            kind,
            stage,
            message: message.into(),
        }
    }

    fn at(stage: Stage, kind: ErrorKind) -> impl Fn(&dyn fmt::Display) -> Self + Copy {
        move |e| PipelineError::new(kind, Some(stage), e.to_string())
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(s) => write!(f, "[{}] stage {s}: {}", self.kind.code(), self.message),
            None => write!(f, "[{}] {}", self.kind.code(), self.message),
        }
    }
}

impl std::error::Error for PipelineError {}

fn store_err(stage: Stage) -> impl Fn(store::StoreError) -> PipelineError {
    move |e| PipelineError::new(ErrorKind::Store, Some(stage), e.to_string())
}

fn require(run_dir: &Path, stage: Stage) -> Result<(), PipelineError> {
    for name in stage.inputs() {
        if !run_dir.join(name).is_file() {
            return Err(PipelineError::new(
                ErrorKind::StaleInputs,
                Some(stage),
                format!("missing upstream file {name} in {}", run_dir.display()),
            ));
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, stage: Stage) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    store::write_atomic(path, &bytes).map_err(store_err(stage))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: Stage) -> Result<T, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::at(stage, ErrorKind::Store)(&format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::at(stage, ErrorKind::Store)(&format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencesDoc {
    /// Content hash of every sampled frame, in order.
    pub frames_sha256: String,
    pub sequences: Vec<VideoSequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsDoc {
    pub source: DetectionSource,
    pub import_stats: Option<ImportStats>,
    pub kept_sequences: Vec<String>,
    pub empty_sequences: Vec<String>,
    pub multi_detection_frames: Vec<(String, u32)>,
    pub detections: Vec<Detection>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::new(ErrorKind::Config, None, format!("worker pool: {e}")))
}

/// Loads the manifest and samples frames. Returns the document and its
/// input digest (manifest, config and frame contents).
fn ingest_doc(cfg: &RunConfig) -> Result<SequencesDoc, PipelineError> {
    let err = PipelineError::at(Stage::Ingest, ErrorKind::Ingest);
    let Some(manifest) = &cfg.input_manifest else {
        return Err(PipelineError::new(ErrorKind::Config, Some(Stage::Ingest), "no input manifest configured"));
    };
    let seqs = load_manifest(manifest).map_err(|e| err(&e))?;
    let sampled: Vec<VideoSequence> = seqs
        .into_iter()
        .map(|s| {
            let stride = cfg
                .ingest
                .stride
                .unwrap_or_else(|| auto_stride(s.frames.len(), cfg.ingest.target_frames));
            let frames = sample_frames(&s, stride, cfg.ingest.max_frames);
            VideoSequence { frames, ..s }
        })
        .collect();
    let paths: Vec<&PathBuf> = sampled.iter().flat_map(|s| s.frames.iter().map(|f| &f.image_path)).collect();
    let digests: Vec<String> = paths
        .par_iter()
        .map(|p| fs::read(p).map(|b| sha256_hex(&b)).map_err(|e| format!("{}: {e}", p.display())))
        .collect::<Result<_, _>>()
        .map_err(|e| PipelineError::at(Stage::Ingest, ErrorKind::Ingest)(&e))?;
    Ok(SequencesDoc {
        frames_sha256: sha256_hex(digests.join("\n").as_bytes()),
        sequences: sampled,
    })
}

pub fn run_ingest(cfg: &RunConfig, run_dir: &Path) -> Result<SequencesDoc, PipelineError> {
    let doc = ingest_doc(cfg)?;
    write_json(&run_dir.join(SEQUENCES_FILE), &doc, Stage::Ingest)?;
    Ok(doc)
}

fn decode(frame: &FrameRef, stage: Stage) -> Result<GrayImage, PipelineError> {
    let img = decode_image(&frame.image_path).map_err(|e| PipelineError::at(stage, stage_kind(stage))(&e))?;
    if img.dimensions() != (frame.width as usize, frame.height as usize) {
        return Err(PipelineError::new(
            stage_kind(stage),
            Some(stage),
            format!("{} changed size since ingest", frame.image_path.display()),
        ));
    }
    Ok(img)
}

fn stage_kind(stage: Stage) -> ErrorKind {
    match stage {
        Stage::Ingest => ErrorKind::Ingest,
        Stage::Detect => ErrorKind::Detect,
        Stage::Extract => ErrorKind::Extract,
        _ => ErrorKind::Store,
    }
}

fn motion_detections(cfg: &RunConfig, seqs: &[VideoSequence]) -> Result<Vec<Detection>, PipelineError> {
    let err = PipelineError::at(Stage::Detect, ErrorKind::Detect);
    let mut by_location: BTreeMap<&str, Vec<&FrameRef>> = BTreeMap::new();
    for s in seqs {
        by_location
            .entry(s.camera_location_id.as_str())
            .or_default()
            .extend(s.frames.iter());
    }
    let mut out = Vec::new();
    for (loc, frames) in by_location {
        let picks = detect::evenly_spaced(frames.len(), cfg.detect.background_frames);
        let stack: Vec<GrayImage> = picks
            .par_iter()
            .map(|&i| decode(frames[i], Stage::Detect))
            .collect::<Result<_, _>>()?;
        let bg = detect::build_background(&stack, loc)
            .map_err(|e| err(&format!("camera location {loc}: {e}; import detections instead")))?;
        drop(stack);
        let per_frame: Vec<Vec<Detection>> = frames
            .par_iter()
            .map(|f| {
                let img = decode(f, Stage::Detect)?;
                detect::detect_motion(&img, f, &bg, cfg.detect.diff_threshold as f32, cfg.detect.min_area)
                    .map_err(|e| PipelineError::at(Stage::Detect, ErrorKind::Detect)(&e))
            })
            .collect::<Result<_, _>>()?;
        out.extend(per_frame.into_iter().flatten());
    }
    detect::sort_detections(&mut out);
    Ok(out)
}

pub fn run_detect(cfg: &RunConfig, run_dir: &Path) -> Result<DetectionsDoc, PipelineError> {
    require(run_dir, Stage::Detect)?;
    let err = PipelineError::at(Stage::Detect, ErrorKind::Detect);
    let seqs: SequencesDoc = read_json(&run_dir.join(SEQUENCES_FILE), Stage::Detect)?;
    let seqs = seqs.sequences;
    let import = match cfg.detect.mode {
        DetectMode::Import => true,
        DetectMode::Motion => false,
        DetectMode::Auto => cfg.detect.detections.is_some(),
    };
    let (detections, source, stats) = if import {
        let path = cfg.detect.detections.as_ref().ok_or_else(|| {
            PipelineError::new(ErrorKind::Config, Some(Stage::Detect), "detection import needs a detections file")
        })?;
        let (d, stats) = detect::import_detections(path, &seqs, cfg.detect.min_confidence, &cfg.detect.categories)
            .map_err(|e| err(&e))?;
        (d, DetectionSource::Imported, Some(stats))
    } else {
        (motion_detections(cfg, &seqs)?, DetectionSource::Motion, None)
    };
    let filter = match &cfg.species.label_file {
        None => SpeciesFilter::PassThrough,
        Some(p) => SpeciesFilter::from_label_file(p, &cfg.species.accept)
            .map_err(|e| PipelineError::new(ErrorKind::Config, Some(Stage::Detect), e.to_string()))?,
    };
    let detections = filter.filter(detections);
    let (kept, empty) = detect::filter_empty(&seqs, &detections);
    if !empty.is_empty() {
        log::info!("{} sequences without detections", empty.len());
    }
    let doc = DetectionsDoc {
        source,
        import_stats: stats,
        kept_sequences: kept.iter().map(|s| s.sequence_id.clone()).collect(),
        empty_sequences: empty,
        multi_detection_frames: detect::multi_detection_frames(&detections),
        detections,
    };
    write_json(&run_dir.join(DETECTIONS_FILE), &doc, Stage::Detect)?;
    Ok(doc)
}

/// Work items for extraction: one per detection, or one per detected frame
/// (whole frame) when cropping is disabled.
fn extraction_jobs(cfg: &RunConfig, dets: &DetectionsDoc) -> Vec<(FeatureKey, FrameRef, Option<BBox>)> {
    let mut jobs = Vec::new();
    let mut per_frame: BTreeMap<(&str, u32), u32> = BTreeMap::new();
    for d in &dets.detections {
        let slot = per_frame
            .entry((d.frame.sequence_id.as_str(), d.frame.frame_index))
            .or_default();
        let idx = *slot;
        *slot += 1;
        if !cfg.detect.crop_to_detection && idx > 0 {
            continue;
        }
        let key = FeatureKey {
            sequence_id: d.frame.sequence_id.clone(),
            frame_index: d.frame.frame_index,
            detection_index: idx,
        };
        let region = cfg.detect.crop_to_detection.then_some(d.bbox);
        jobs.push((key, d.frame.clone(), region));
    }
    jobs
}

pub fn run_extract(cfg: &RunConfig, run_dir: &Path) -> Result<FeatureStore, PipelineError> {
    require(run_dir, Stage::Extract)?;
    let dets: DetectionsDoc = read_json(&run_dir.join(DETECTIONS_FILE), Stage::Extract)?;
    let jobs = extraction_jobs(cfg, &dets);
    let entries: Vec<FeatureStoreEntry> = jobs
        .par_iter()
        .map(|(key, frame, region)| {
            let img = decode(frame, Stage::Extract)?;
            let result = match region {
                Some(b) => sift::extract(&img, b, &cfg.sift),
                None => sift::extract_image(&img, &cfg.sift),
            };
            let feats = match result {
                Ok(f) => f,
                Err(e @ (SiftError::ImageTooSmall { .. } | SiftError::InvalidRegion)) => {
                    log::warn!("{key}: {e}; no features");
                    Vec::new()
                }
                Err(e) => return Err(PipelineError::at(Stage::Extract, ErrorKind::Extract)(&format!("{key}: {e}"))),
            };
            let (keypoints, descriptors) = feats.into_iter().unzip();
            Ok(FeatureStoreEntry {
                key: key.clone(),
                keypoints,
                descriptors,
            })
        })
        .collect::<Result<_, _>>()?;
    let mut fs_store = FeatureStore::new();
    for e in entries {
        fs_store.put(e).map_err(store_err(Stage::Extract))?;
    }
    fs_store
        .save(&run_dir.join(store::FEATURES_FILE))
        .map_err(store_err(Stage::Extract))?;
    Ok(fs_store)
}

pub fn video_features(seqs: &[VideoSequence], kept: &[String], features: &FeatureStore) -> Vec<VideoFeatures> {
    let location: BTreeMap<&str, &str> = seqs
        .iter()
        .map(|s| (s.sequence_id.as_str(), s.camera_location_id.as_str()))
        .collect();
    let mut videos: BTreeMap<&str, VideoFeatures> = kept
        .iter()
        .map(|id| {
            (
                id.as_str(),
                VideoFeatures {
                    sequence_id: id.clone(),
                    camera_location_id: location.get(id.as_str()).copied().unwrap_or("").to_string(),
                    frames: Vec::new(),
                },
            )
        })
        .collect();
    for e in features.iter() {
        if let Some(v) = videos.get_mut(e.key.sequence_id.as_str()) {
            v.frames.push(FrameFeatures {
                frame_index: e.key.frame_index,
                detection_index: e.key.detection_index,
                descriptors: e.descriptors.clone(),
            });
        }
    }
    videos.into_values().collect()
}

pub fn run_match(cfg: &RunConfig, run_dir: &Path) -> Result<Vec<SimilarityRecord>, PipelineError> {
    require(run_dir, Stage::Match)?;
    let seqs: SequencesDoc = read_json(&run_dir.join(SEQUENCES_FILE), Stage::Match)?;
    let dets: DetectionsDoc = read_json(&run_dir.join(DETECTIONS_FILE), Stage::Match)?;
    let features = FeatureStore::open(&run_dir.join(store::FEATURES_FILE)).map_err(store_err(Stage::Match))?;
    let videos = video_features(&seqs.sequences, &dets.kept_sequences, &features);
    let records = score_all(&videos, &cfg.matching);
    store::save_similarities(&run_dir.join(store::SIMILARITIES_FILE), &records).map_err(store_err(Stage::Match))?;
    Ok(records)
}

fn cluster_graph(run_dir: &Path, threshold: f64, stage: Stage) -> Result<(ClusterGraph, Vec<SimilarityRecord>), PipelineError> {
    let records =
        store::load_similarities(&run_dir.join(store::SIMILARITIES_FILE)).map_err(store_err(stage))?;
    let mut graph = build_clusters(&records, threshold);
    let dets: DetectionsDoc = read_json(&run_dir.join(DETECTIONS_FILE), stage)?;
    for id in &dets.kept_sequences {
        graph.add_node(id);
    }
    Ok((graph, records))
}

pub fn run_cluster(cfg: &RunConfig, run_dir: &Path) -> Result<ClusterGraph, PipelineError> {
    require(run_dir, Stage::Cluster)?;
    let (graph, _) = cluster_graph(run_dir, cfg.cluster.threshold, Stage::Cluster)?;
    store::save_clusters(&run_dir.join(store::CLUSTERS_FILE), &graph).map_err(store_err(Stage::Cluster))?;
    Ok(graph)
}

/// One crop per video: the detection on the frame used by its strongest
/// pair, or its first detection.
fn thumbnails(
    graph: &ClusterGraph,
    records: &[SimilarityRecord],
    dets: &DetectionsDoc,
) -> Result<BTreeMap<String, GrayImage>, PipelineError> {
    let mut best: BTreeMap<&str, (f64, u32)> = BTreeMap::new();
    for r in records {
        for (v, f) in [(&r.video_a, r.best_frame_pair.0), (&r.video_b, r.best_frame_pair.1)] {
            let e = best.entry(v.as_str()).or_insert((r.score, f));
            if r.score > e.0 {
                *e = (r.score, f);
            }
        }
    }
    let picks: Vec<&Detection> = graph
        .nodes
        .iter()
        .filter_map(|id| {
            let want = best.get(id.as_str()).map(|b| b.1);
            let mine = dets.detections.iter().filter(|d| d.frame.sequence_id == *id);
            let mut mine2 = mine.clone();
            want.and_then(|f| mine2.find(|d| d.frame.frame_index == f))
                .or_else(|| mine.clone().next())
        })
        .collect();
    picks
        .par_iter()
        .map(|d| {
            let img = decode(&d.frame, Stage::Report)?;
            let b = d.bbox;
            Ok((d.frame.sequence_id.clone(), img.crop(b.x as usize, b.y as usize, b.w as usize, b.h as usize)))
        })
        .collect()
}

pub fn run_report(cfg: &RunConfig, run_dir: &Path) -> Result<(), PipelineError> {
    require(run_dir, Stage::Report)?;
    let graph = store::load_clusters(&run_dir.join(store::CLUSTERS_FILE)).map_err(store_err(Stage::Report))?;
    let records =
        store::load_similarities(&run_dir.join(store::SIMILARITIES_FILE)).map_err(store_err(Stage::Report))?;
    let seqs: SequencesDoc = read_json(&run_dir.join(SEQUENCES_FILE), Stage::Report)?;
    let dets: DetectionsDoc = read_json(&run_dir.join(DETECTIONS_FILE), Stage::Report)?;
    let mut meta = ReportMetadata {
        title: cfg.report.title.clone(),
        locations: seqs
            .sequences
            .iter()
            .map(|s| (s.sequence_id.clone(), s.camera_location_id.clone()))
            .collect(),
        notes: Vec::new(),
    };
    meta.notes.push(("videos".into(), seqs.sequences.len().to_string()));
    meta.notes.push((
        "videos without detections".into(),
        if dets.empty_sequences.is_empty() { "none".into() } else { dets.empty_sequences.join(", ") },
    ));
    let multi: Vec<String> = dets
        .multi_detection_frames
        .iter()
        .map(|(s, f)| format!("{s}/{f}"))
        .collect();
    meta.notes.push((
        "frames with more than one detection".into(),
        if multi.is_empty() { "none".into() } else { multi.join(", ") },
    ));
    let same_loc = graph
        .edge_list()
        .iter()
        .filter(|e| meta.locations.get(&e.a) == meta.locations.get(&e.b))
        .count();
    meta.notes.push(("same-location matches".into(), same_loc.to_string()));

    let thumbs = if cfg.report.thumbnails {
        Some(thumbnails(&graph, &records, &dets)?)
    } else {
        None
    };
    let layout = report::layout_graph(&graph, cfg.report.layout_seed);
    let html = report::render_html(&graph, &layout, &meta, thumbs.as_ref());
    let (membership, pairs) = report::export_tables(&graph, &records, &meta);
    let w = |name: &str, s: &str| store::write_atomic(&run_dir.join(name), s.as_bytes()).map_err(store_err(Stage::Report));
    w(report::REPORT_FILE, &html)?;
    w(report::MEMBERSHIP_FILE, &membership)?;
    w(report::PAIRS_FILE, &pairs)?;
    Ok(())
}

/// Runs a single stage inside a worker pool.
pub fn run_stage(stage: Stage, cfg: &RunConfig, run_dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(run_dir)
        .map_err(|e| PipelineError::new(ErrorKind::Store, Some(stage), format!("{}: {e}", run_dir.display())))?;
    let pool = worker_pool(cfg.workers)?;
    pool.install(|| match stage {
        Stage::Ingest => run_ingest(cfg, run_dir).map(drop),
        Stage::Detect => run_detect(cfg, run_dir).map(drop),
        Stage::Extract => run_extract(cfg, run_dir).map(drop),
        Stage::Match => run_match(cfg, run_dir).map(drop),
        Stage::Cluster => run_cluster(cfg, run_dir).map(drop),
        Stage::Report => run_report(cfg, run_dir),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Cached,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    input: String,
    outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub stages: Vec<(Stage, StageStatus)>,
    pub n_videos: usize,
    pub n_empty: usize,
    pub n_records: usize,
    pub n_clusters: usize,
    pub n_matches: usize,
}

fn file_hash(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| sha256_hex(&b))
}

fn external_hash(path: &Option<PathBuf>, stage: Stage) -> Result<String, PipelineError> {
    match path {
        None => Ok(String::new()),
        Some(p) => file_hash(p).ok_or_else(|| {
            PipelineError::new(ErrorKind::Config, Some(stage), format!("cannot read {}", p.display()))
        }),
    }
}

/// Digest of everything a stage depends on: its config section, external
/// files it reads, and the contents of its upstream run files.
fn stage_input_hash(stage: Stage, cfg: &RunConfig, run_dir: &Path) -> Result<String, PipelineError> {
    let section = match stage {
        Stage::Ingest => serde_json::to_string(&cfg.ingest),
        Stage::Detect => serde_json::to_string(&(&cfg.detect, &cfg.species)),
        Stage::Extract => serde_json::to_string(&(&cfg.sift, cfg.detect.crop_to_detection)),
        Stage::Match => serde_json::to_string(&cfg.matching),
        Stage::Cluster => serde_json::to_string(&cfg.cluster),
        Stage::Report => serde_json::to_string(&cfg.report),
    }
    .expect("serializable");
    let mut h = Sha256::new();
    h.update(stage.name());
    h.update([0]);
    h.update(section);
    if stage == Stage::Detect {
        h.update(external_hash(&cfg.detect.detections, stage)?);
        h.update(external_hash(&cfg.species.label_file, stage)?);
    }
    for name in stage.inputs() {
        h.update(name);
        h.update(file_hash(&run_dir.join(name)).unwrap_or_default());
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Full pipeline with stage caching.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate()
        .map_err(|e| PipelineError::new(ErrorKind::Config, None, e))?;
    let run_dir = cfg.out_dir.clone();
    fs::create_dir_all(&run_dir)
        .map_err(|e| PipelineError::new(ErrorKind::Store, None, format!("{}: {e}", run_dir.display())))?;
    store::write_atomic(&run_dir.join(store::RUN_CONFIG_FILE), cfg.to_json().as_bytes())
        .map_err(|e| PipelineError::new(ErrorKind::Store, None, e.to_string()))?;
    let stages_path = run_dir.join(STAGES_FILE);
    let mut records: BTreeMap<Stage, StageRecord> = fs::read(&stages_path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default();

    let pool = worker_pool(cfg.workers)?;
    let mut statuses = Vec::new();
    let mut ingested = None;
    pool.install(|| -> Result<(), PipelineError> {
        for stage in Stage::ALL {
            // ingest's true inputs are the manifest and frame files, so its
            // digest is taken over the freshly built document
            let input = if stage == Stage::Ingest {
                let doc = ingest_doc(cfg)?;
                let mut bytes = serde_json::to_vec_pretty(&doc).expect("serializable");
                bytes.push(b'\n');
                let hash = sha256_hex(&[stage_input_hash(stage, cfg, &run_dir)?.as_bytes(), &bytes].concat());
                ingested = Some(doc);
                hash
            } else {
                stage_input_hash(stage, cfg, &run_dir)?
            };
            let cached = records.get(&stage).is_some_and(|r| {
                r.input == input
                    && stage
                        .outputs()
                        .iter()
                        .all(|o| r.outputs.contains_key(*o) && file_hash(&run_dir.join(o)).as_ref() == r.outputs.get(*o))
            });
            if cached {
                log::info!("stage {stage}: cached");
                statuses.push((stage, StageStatus::Cached));
                continue;
            }
            log::info!("stage {stage}: running");
            match stage {
                Stage::Ingest => {
                    let doc = ingested.take().expect("built above");
                    write_json(&run_dir.join(SEQUENCES_FILE), &doc, Stage::Ingest)
                }
                Stage::Detect => run_detect(cfg, &run_dir).map(drop),
                Stage::Extract => run_extract(cfg, &run_dir).map(drop),
                Stage::Match => run_match(cfg, &run_dir).map(drop),
                Stage::Cluster => run_cluster(cfg, &run_dir).map(drop),
                Stage::Report => run_report(cfg, &run_dir),
            }?;
            let outputs = stage
                .outputs()
                .iter()
                .map(|o| (o.to_string(), file_hash(&run_dir.join(o)).unwrap_or_default()))
                .collect();
            records.insert(stage, StageRecord { input, outputs });
            write_json(&stages_path, &records, stage)?;
            statuses.push((stage, StageStatus::Ran));
        }
        Ok(())
    })?;

    let dets: DetectionsDoc = read_json(&run_dir.join(DETECTIONS_FILE), Stage::Report)?;
    let graph = store::load_clusters(&run_dir.join(store::CLUSTERS_FILE)).map_err(store_err(Stage::Report))?;
    let n_records = store::load_similarities(&run_dir.join(store::SIMILARITIES_FILE))
        .map_err(store_err(Stage::Report))?
        .len();
    Ok(RunSummary {
        run_dir,
        stages: statuses,
        n_videos: dets.kept_sequences.len() + dets.empty_sequences.len(),
        n_empty: dets.empty_sequences.len(),
        n_records,
        n_clusters: components(&graph).len(),
        n_matches: graph.n_matches(),
    })
}

/// Evaluates the run's clusters against a labels file.
pub fn evaluate_run(run_dir: &Path, labels_path: &Path) -> Result<EvaluationReport, PipelineError> {
    let clusters = run_dir.join(store::CLUSTERS_FILE);
    if !clusters.is_file() {
        return Err(PipelineError::new(ErrorKind::StaleInputs, None, format!("missing {}", clusters.display())));
    }
    let graph = store::load_clusters(&clusters).map_err(|e| PipelineError::new(ErrorKind::Store, None, e.to_string()))?;
    let labels = bench::load_labels(labels_path).map_err(|e| PipelineError::new(ErrorKind::Evaluate, None, e.to_string()))?;
    let unknown: Vec<&String> = labels.keys().filter(|k| !graph.nodes.contains(*k)).collect();
    if !unknown.is_empty() {
        log::warn!("{} labeled sequences are not in the graph", unknown.len());
    }
    bench::evaluate(&graph, &labels).map_err(|e| PipelineError::new(ErrorKind::Evaluate, None, e.to_string()))
}

/// Re-clusters the run's similarities at each threshold and writes
/// `sweep.csv`.
pub fn sweep_run(run_dir: &Path, labels_path: &Path, thresholds: &[f64]) -> Result<Vec<SweepRow>, PipelineError> {
    let sims = run_dir.join(store::SIMILARITIES_FILE);
    if !sims.is_file() {
        return Err(PipelineError::new(ErrorKind::StaleInputs, None, format!("missing {}", sims.display())));
    }
    let records = store::load_similarities(&sims).map_err(|e| PipelineError::new(ErrorKind::Store, None, e.to_string()))?;
    let labels = bench::load_labels(labels_path).map_err(|e| PipelineError::new(ErrorKind::Evaluate, None, e.to_string()))?;
    let rows = bench::threshold_sweep(&records, &labels, thresholds)
        .map_err(|e| PipelineError::new(ErrorKind::Evaluate, None, e.to_string()))?;
    store::write_atomic(&run_dir.join(SWEEP_FILE), bench::sweep_to_csv(&rows).as_bytes())
        .map_err(|e| PipelineError::new(ErrorKind::Store, None, e.to_string()))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let kinds = [
            ErrorKind::UnknownStage,
            ErrorKind::Config,
            ErrorKind::Ingest,
            ErrorKind::Detect,
            ErrorKind::Extract,
            ErrorKind::StaleInputs,
            ErrorKind::Store,
            ErrorKind::Evaluate,
        ];
        let codes: std::collections::BTreeSet<i32> = kinds.iter().map(|k| k.exit_code()).collect();
        assert_eq!(codes.len(), kinds.len());
        assert!(!codes.contains(&0) && !codes.contains(&1));
    }

    #[test]
    fn stage_names_roundtrip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert_eq!("bogus".parse::<Stage>().unwrap_err().kind, ErrorKind::UnknownStage);
    }

    #[test]
    fn report_without_clusters_is_stale() {
        let dir = tempfile::tempdir().unwrap();
        let e = run_stage(Stage::Report, &RunConfig::default(), dir.path()).unwrap_err();
        assert_eq!(e.kind, ErrorKind::StaleInputs);
        assert_eq!(e.stage, Some(Stage::Report));
    }

    #[test]
    fn empty_input_directory_is_missing_frames() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("empty")).unwrap();
        let manifest = dir.path().join("manifest.json");
        fs::write(
            &manifest,
            r#"[{"sequence_id":"a","camera_location_id":"c","site_id":"s","captured_at":null,"frames_dir":"empty","frame_glob":"*.png"}]"#,
        )
        .unwrap();
        let cfg = RunConfig {
            input_manifest: Some(manifest),
            out_dir: dir.path().join("run"),
            ..Default::default()
        };
        let e = run(&cfg).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Ingest);
        assert!(e.message.contains("no readable frames"));
    }
}
