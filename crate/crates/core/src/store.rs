//! Run-directory artifacts: binary feature store, similarity CSV, cluster
//! JSON. Every write goes to a temporary sibling first and is renamed into
//! place.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{components, ClusterGraph, Edge};
use crate::matching::SimilarityRecord;
use crate::sift::{Descriptor, Keypoint, DESCRIPTOR_LEN};

pub const FEATURES_FILE: &str = "features.bin";
pub const SIMILARITIES_FILE: &str = "similarities.csv";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

const MAGIC: &[u8; 4] = b"SPM1";
pub const FEATURE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate feature key {0}")]
    DuplicateKey(FeatureKey),
    #[error("no features stored for {0}")]
    NotFound(FeatureKey),
    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: {reason}")]
    InvariantViolation { path: PathBuf, reason: String },
    #[error("{path}: format version {found} is newer than supported {supported}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a temporary file next to `path`, syncs it and renames
/// it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub sequence_id: String,
    pub frame_index: u32,
    pub detection_index: u32,
}

impl std::fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.sequence_id, self.frame_index, self.detection_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStoreEntry {
    pub key: FeatureKey,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

/// In-memory feature store, iterated in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureStore {
    entries: BTreeMap<FeatureKey, FeatureStoreEntry>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, entry: FeatureStoreEntry) -> Result<(), StoreError> {
        assert_eq!(
            entry.keypoints.len(),
            entry.descriptors.len(),
            "keypoints and descriptors must pair up"
        );
        if self.entries.contains_key(&entry.key) {
            return Err(StoreError::DuplicateKey(entry.key));
        }
        self.entries.insert(entry.key.clone(), entry);
        Ok(())
    }

    pub fn get(&self, key: &FeatureKey) -> Result<&FeatureStoreEntry, StoreError> {
        self.entries
            .get(key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureStoreEntry> {
        self.entries.values()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n_kp: usize = self.entries.values().map(|e| e.keypoints.len()).sum();
        let mut out = Vec::with_capacity(16 + n_kp * (56 + 4 * DESCRIPTOR_LEN));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FEATURE_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in self.entries.values() {
            let id = e.key.sequence_id.as_bytes();
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id);
            out.extend_from_slice(&e.key.frame_index.to_le_bytes());
            out.extend_from_slice(&e.key.detection_index.to_le_bytes());
            out.extend_from_slice(&(e.keypoints.len() as u32).to_le_bytes());
            for kp in &e.keypoints {
                for v in [kp.x, kp.y, kp.scale, kp.orientation, kp.response, kp.interval] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&kp.octave.to_le_bytes());
                out.extend_from_slice(&kp.level.to_le_bytes());
            }
            for d in &e.descriptors {
                for v in d.0 {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, StoreError> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.bad("bad magic bytes"));
        }
        let version = r.u32()?;
        if version > FEATURE_FORMAT_VERSION {
            return Err(StoreError::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
                supported: FEATURE_FORMAT_VERSION,
            });
        }
        let count = r.u64()?;
        let mut store = FeatureStore::new();
        for _ in 0..count {
            let id_len = r.u32()? as usize;
            let sequence_id = String::from_utf8(r.take(id_len)?.to_vec())
                .map_err(|_| r.bad("sequence id is not UTF-8"))?;
            let key = FeatureKey {
                sequence_id,
                frame_index: r.u32()?,
                detection_index: r.u32()?,
            };
            let n = r.u32()? as usize;
            let mut keypoints = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let mut f = [0f64; 6];
                for v in &mut f {
                    *v = r.f64()?;
                }
                keypoints.push(Keypoint {
                    x: f[0],
                    y: f[1],
                    scale: f[2],
                    orientation: f[3],
                    response: f[4],
                    interval: f[5],
                    octave: r.i32()?,
                    level: r.i32()?,
                });
            }
            let mut descriptors = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let mut d = [0f32; DESCRIPTOR_LEN];
                for v in &mut d {
                    *v = f32::from_le_bytes(r.array()?);
                }
                descriptors.push(Descriptor(d));
            }
            store.put(FeatureStoreEntry {
                key,
                keypoints,
                descriptors,
            })
            .map_err(|e| StoreError::InvariantViolation {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        }
        if r.pos != bytes.len() {
            return Err(r.bad("trailing bytes after last entry"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: &str) -> StoreError {
        StoreError::Parse {
            path: self.path.to_path_buf(),
            line: 0,
            reason: format!("byte {}: {reason}", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.bad("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], StoreError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32, StoreError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, StoreError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

/// Decimal rendering with `digits` significant digits.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub const SIMILARITY_COLUMNS: [&str; 7] = [
    "video_a",
    "video_b",
    "score",
    "best_frame_a",
    "best_frame_b",
    "n_contributing_matches",
    "same_camera_location",
];

fn sorted_records(records: &[SimilarityRecord]) -> Vec<&SimilarityRecord> {
    let mut v: Vec<&SimilarityRecord> = records.iter().collect();
    v.sort_by(|a, b| (&a.video_a, &a.video_b).cmp(&(&b.video_a, &b.video_b)));
    v
}

pub fn similarities_to_csv(records: &[SimilarityRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SIMILARITY_COLUMNS).expect("in-memory write");
    for r in sorted_records(records) {
        debug_assert!(r.video_a < r.video_b);
        w.write_record([
            r.video_a.as_str(),
            r.video_b.as_str(),
            &format_significant(r.score, 9),
            &r.best_frame_pair.0.to_string(),
            &r.best_frame_pair.1.to_string(),
            &r.n_contributing_matches.to_string(),
            &r.same_camera_location.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn save_similarities(path: &Path, records: &[SimilarityRecord]) -> Result<(), StoreError> {
    write_atomic(path, &similarities_to_csv(records))
}

pub fn parse_similarities(data: &[u8], path: &Path) -> Result<Vec<SimilarityRecord>, StoreError> {
    let parse_err = |line: usize, reason: String| StoreError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(data);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().ne(SIMILARITY_COLUMNS) {
        return Err(parse_err(1, format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or_default();
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
            s.trim().parse().map_err(|_| format!("{name} {s:?} is not a valid number"))
        }
        let rec = (|| -> Result<SimilarityRecord, String> {
            let score: f64 = num(field(2), "score")?;
            if !score.is_finite() {
                return Err(format!("score {:?} is not finite", field(2)));
            }
            let same = match field(6).trim() {
                "true" => true,
                "false" => false,
                other => return Err(format!("same_camera_location {other:?} is not a boolean")),
            };
            let (a, b) = (field(0).to_string(), field(1).to_string());
            if a >= b {
                return Err(format!("pair ({a}, {b}) is not canonical"));
            }
            Ok(SimilarityRecord {
                video_a: a,
                video_b: b,
                score,
                best_frame_pair: (num(field(3), "best_frame_a")?, num(field(4), "best_frame_b")?),
                n_contributing_matches: num(field(5), "n_contributing_matches")?,
                same_camera_location: same,
            })
        })()
        .map_err(|reason| parse_err(line, reason))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_similarities(path: &Path) -> Result<Vec<SimilarityRecord>, StoreError> {
    let data = fs::read(path).map_err(io_err(path))?;
    parse_similarities(&data, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDoc {
    pub cluster_id: String,
    pub members: Vec<String>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersDoc {
    pub threshold: f64,
    pub clusters: Vec<ClusterDoc>,
    pub conflicts: Vec<Edge>,
}

impl From<&ClusterGraph> for ClustersDoc {
    fn from(g: &ClusterGraph) -> Self {
        ClustersDoc {
            threshold: g.threshold,
            clusters: components(g)
                .into_iter()
                .map(|c| ClusterDoc {
                    cluster_id: c.cluster_id,
                    members: c.members,
                    edges: c.edges,
                })
                .collect(),
            conflicts: g.conflicts.clone(),
        }
    }
}

pub fn clusters_to_json(graph: &ClusterGraph) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&ClustersDoc::from(graph)).expect("serializable");
    out.push(b'\n');
    out
}

pub fn save_clusters(path: &Path, graph: &ClusterGraph) -> Result<(), StoreError> {
    write_atomic(path, &clusters_to_json(graph))
}

/// Rebuilds the graph and checks that the stored clusters are exactly its
/// connected components.
pub fn clusters_from_doc(doc: &ClustersDoc, path: &Path) -> Result<ClusterGraph, StoreError> {
    let violation = |reason: String| StoreError::InvariantViolation {
        path: path.to_path_buf(),
        reason,
    };
    let mut g = ClusterGraph::new(doc.threshold);
    for c in &doc.clusters {
        for m in &c.members {
            if g.nodes.contains(m) {
                return Err(violation(format!("node {m} appears in more than one cluster")));
            }
            g.add_node(m);
        }
    }
    for c in &doc.clusters {
        for e in &c.edges {
            if e.a >= e.b {
                return Err(violation(format!("edge ({}, {}) is not canonical", e.a, e.b)));
            }
            if !(e.score >= doc.threshold) {
                return Err(violation(format!(
                    "edge ({}, {}) score {} is below threshold {}",
                    e.a, e.b, e.score, doc.threshold
                )));
            }
            if !c.members.contains(&e.a) || !c.members.contains(&e.b) {
                return Err(violation(format!(
                    "edge ({}, {}) leaves cluster {}",
                    e.a, e.b, c.cluster_id
                )));
            }
            g.edges.insert((e.a.clone(), e.b.clone()), e.score);
        }
    }
    g.conflicts = doc.conflicts.clone();
    let stored: BTreeSet<Vec<String>> = doc
        .clusters
        .iter()
        .map(|c| {
            let mut m = c.members.clone();
            m.sort();
            m
        })
        .collect();
    if stored != g.partition() {
        return Err(violation("clusters are not the connected components of their edges".into()));
    }
    for c in &doc.clusters {
        let lowest = c.members.iter().min();
        if lowest != Some(&c.cluster_id) {
            return Err(violation(format!(
                "cluster id {} is not its lowest member",
                c.cluster_id
            )));
        }
    }
    Ok(g)
}

pub fn parse_clusters(data: &[u8], path: &Path) -> Result<ClusterGraph, StoreError> {
    let doc: ClustersDoc = serde_json::from_slice(data).map_err(|e| StoreError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    clusters_from_doc(&doc, path)
}

pub fn load_clusters(path: &Path) -> Result<ClusterGraph, StoreError> {
    let data = fs::read(path).map_err(io_err(path))?;
    parse_clusters(&data, path)
}
