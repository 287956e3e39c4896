//! Species filter between detection and feature extraction.
//!
//! The default accepts everything. To plug in a classifier, run it offline
//! and hand its per-frame output to [`SpeciesFilter::from_label_file`]: a CSV
//! with columns `sequence_id,frame_index,species`. Detections on frames whose
//! label is not in the accepted set are dropped; frames absent from the file
//! are kept.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::detect::Detection;

#[derive(Debug, Error)]
pub enum SpeciesError {
    #[error("species label file {path}: line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum SpeciesFilter {
    #[default]
    PassThrough,
    Labels {
        labels: BTreeMap<(String, u32), String>,
        accept: BTreeSet<String>,
    },
}

impl SpeciesFilter {
    pub fn from_label_file(path: &Path, accept: &[String]) -> Result<Self, SpeciesError> {
        let err = |line: usize, reason: String| SpeciesError::Parse {
            path: path.display().to_string(),
            line,
            reason,
        };
        let mut rdr = csv::Reader::from_path(path).map_err(|e| err(0, e.to_string()))?;
        let mut labels = BTreeMap::new();
        for row in rdr.records() {
            let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            if row.len() != 3 {
                return Err(err(line, format!("expected 3 columns, got {}", row.len())));
            }
            let idx: u32 = row[1]
                .trim()
                .parse()
                .map_err(|_| err(line, format!("bad frame_index {:?}", &row[1])))?;
            labels.insert((row[0].to_string(), idx), row[2].trim().to_string());
        }
        Ok(SpeciesFilter::Labels {
            labels,
            accept: accept.iter().cloned().collect(),
        })
    }

    pub fn accepts(&self, sequence_id: &str, frame_index: u32) -> bool {
        match self {
            SpeciesFilter::PassThrough => true,
            SpeciesFilter::Labels { labels, accept } => labels
                .get(&(sequence_id.to_string(), frame_index))
                .is_none_or(|s| accept.contains(s)),
        }
    }

    pub fn filter(&self, detections: Vec<Detection>) -> Vec<Detection> {
        detections
            .into_iter()
            .filter(|d| self.accepts(&d.frame.sequence_id, d.frame.frame_index))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{BBox, DetectionSource};
    use crate::ingest::FrameRef;

    fn det(seq: &str, idx: u32) -> Detection {
        Detection {
            frame: FrameRef {
                sequence_id: seq.into(),
                frame_index: idx,
                image_path: "x.png".into(),
                width: 10,
                height: 10,
            },
            bbox: BBox { x: 0, y: 0, w: 5, h: 5 },
            confidence: 0.9,
            source: DetectionSource::Imported,
        }
    }

    #[test]
    fn pass_through_keeps_all() {
        let d = vec![det("a", 0), det("b", 3)];
        assert_eq!(SpeciesFilter::PassThrough.filter(d.clone()), d);
    }

    #[test]
    fn label_file_filters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("species.csv");
        std::fs::write(&path, "sequence_id,frame_index,species\na,0,leopard\na,1,duiker\n").unwrap();
        let f = SpeciesFilter::from_label_file(&path, &["leopard".to_string()]).unwrap();
        let kept = f.filter(vec![det("a", 0), det("a", 1), det("b", 0)]);
        let keys: Vec<_> = kept.iter().map(|d| (d.frame.sequence_id.as_str(), d.frame.frame_index)).collect();
        assert_eq!(keys, vec![("a", 0), ("b", 0)]);
    }

    #[test]
    fn bad_index_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("species.csv");
        std::fs::write(&path, "sequence_id,frame_index,species\na,0,leopard\na,x,duiker\n").unwrap();
        match SpeciesFilter::from_label_file(&path, &[]) {
            Err(SpeciesError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
