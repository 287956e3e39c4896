//! Label-free re-identification of individually patterned animals in
//! camera-trap footage.
//!
//! Stages, in pipeline order:
//!
//! 1. [`ingest`] – frame sequences and metadata from a manifest.
//! 2. [`detect`] – animal boxes, imported or from background subtraction.
//! 3. [`species`] – optional per-frame species filter (pass-through by default).
//! 4. [`sift`] – scale-space keypoints and descriptors per detection crop.
//! 5. [`matching`] – mutual ratio-test matching and video-pair scores.
//! 6. [`cluster`] – threshold graph of videos; components are individuals.
//! 7. [`store`] and [`report`] – run artifacts, HTML graph, CSV tables.
//!
//! [`bench`] evaluates against labels and generates synthetic datasets;
//! [`pipeline`] orchestrates a full run.

pub mod bench;
pub mod cluster;
pub mod config;
pub mod detect;
pub mod image;
pub mod ingest;
pub mod matching;
pub mod pipeline;
pub mod report;
pub mod sift;
pub mod species;
pub mod store;
