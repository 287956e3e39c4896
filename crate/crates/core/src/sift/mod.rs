//! Scale-invariant keypoints and descriptors.
//!
//! The chain is: Gaussian pyramid → DoG → 26-neighbour extrema → quadratic
//! refinement with contrast/edge rejection → orientation assignment →
//! 4×4×8 descriptor. Everything is a pure function of its inputs, so
//! extraction can be fanned out across frames freely.
//!
//! Defaults follow the conventional SIFT parameterisation. The input is
//! assumed to carry 0.5 px of blur, so the first level only adds
//! `sqrt(1.6² − 0.5²)`.

pub mod descriptor;
pub mod extrema;
pub mod orientation;
pub mod pyramid;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::BBox;
use crate::image::GrayImage;

pub use descriptor::compute_descriptor;
pub use extrema::{detect_candidates, refine_and_filter, Candidate, Refined, RefineParams, Rejection};
pub use orientation::assign_orientations;
pub use pyramid::{build_dog_pyramid, build_gaussian_pyramid, DoGPyramid, ScaleSpacePyramid};

pub const DESCRIPTOR_LEN: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SiftError {
    #[error("image {width}x{height} is smaller than 16x16")]
    ImageTooSmall { width: usize, height: usize },
    #[error("all gradient magnitudes are zero")]
    DegenerateGradient,
    #[error("descriptor window leaves the image")]
    WindowOutOfBounds,
    #[error("descriptor histogram is all zero")]
    DegenerateDescriptor,
    #[error("detection box does not fit the frame")]
    InvalidRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftConfig {
    pub sigma0: f64,
    pub intervals: usize,
    /// `None` picks `floor(log2(min(W, H))) − 2`.
    pub n_octaves: Option<usize>,
    /// Divided by `intervals` before being compared with `|D(x̂)|`.
    pub contrast_threshold: f64,
    /// Pre-filter on raw DoG values; `None` uses half the effective
    /// contrast threshold.
    pub contrast_floor: Option<f64>,
    pub edge_ratio: f64,
    pub max_refine_iters: usize,
    pub orientation_bins: usize,
    pub orientation_peak_ratio: f64,
    pub orientation_sigma_factor: f64,
    pub descriptor_width: usize,
    pub descriptor_bins: usize,
    pub descriptor_clamp: f64,
    pub upsample: bool,
    pub input_blur: f64,
    pub crop_margin: f64,
}

impl Default for SiftConfig {
    fn default() -> Self {
        SiftConfig {
            sigma0: 1.6,
            intervals: 3,
            n_octaves: None,
            contrast_threshold: 0.03,
            contrast_floor: None,
            edge_ratio: 10.0,
            max_refine_iters: 5,
            orientation_bins: 36,
            orientation_peak_ratio: 0.8,
            orientation_sigma_factor: 1.5,
            descriptor_width: 4,
            descriptor_bins: 8,
            descriptor_clamp: 0.2,
            upsample: false,
            input_blur: 0.5,
            crop_margin: 0.1,
        }
    }
}

impl SiftConfig {
    pub fn effective_contrast_threshold(&self) -> f64 {
        self.contrast_threshold / self.intervals as f64
    }

    pub fn effective_contrast_floor(&self) -> f64 {
        self.contrast_floor
            .unwrap_or(0.5 * self.effective_contrast_threshold())
    }

    pub fn refine_params(&self) -> RefineParams {
        RefineParams {
            contrast_threshold: self.effective_contrast_threshold(),
            edge_ratio: self.edge_ratio,
            max_iters: self.max_refine_iters,
        }
    }
}

/// Oriented keypoint. Coordinates and scale are in the pixel frame of the
/// image that was passed to extraction; `octave` is −1 for the upsampled
/// base octave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub orientation: f64,
    pub octave: i32,
    pub level: i32,
    /// Fractional level after refinement.
    pub interval: f64,
    pub response: f64,
}

impl Keypoint {
    /// Octave factor `2^octave`.
    pub fn octave_factor(&self) -> f64 {
        2f64.powi(self.octave)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    /// Fixed 8-lane accumulation: vectorizes, and the summation order (hence
    /// the exact result) does not depend on the caller.
    pub fn squared_distance(&self, other: &Descriptor) -> f32 {
        let mut lanes = [0f32; 8];
        for (a, b) in self.0.chunks_exact(8).zip(other.0.chunks_exact(8)) {
            for i in 0..8 {
                let d = a[i] - b[i];
                lanes[i] += d * d;
            }
        }
        ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]))
    }

    pub fn distance(&self, other: &Descriptor) -> f32 {
        self.squared_distance(other).sqrt()
    }
}

/// A keypoint with its descriptor.
pub type Feature = (Keypoint, Descriptor);

/// Gaussian level image, octave coordinates and octave sigma for a keypoint.
pub(crate) fn octave_view<'a>(
    kp: &Keypoint,
    p: &'a ScaleSpacePyramid,
) -> (&'a GrayImage, f64, f64, f64) {
    let idx = (kp.octave - p.first_octave) as usize;
    let f = kp.octave_factor();
    let level = (kp.level.max(0) as usize).min(p.octaves[idx].len() - 1);
    (
        &p.octaves[idx][level],
        kp.x / f,
        kp.y / f,
        kp.scale / f,
    )
}

/// Runs the full chain on a whole image. Coordinates are in that image's
/// pixel frame. Output is sorted by (octave, level, y, x, orientation).
pub fn extract_image(img: &GrayImage, cfg: &SiftConfig) -> Result<Vec<Feature>, SiftError> {
    let (pyr, dog) = build_pyramids(img, cfg)?;
    let mut out = Vec::new();
    for cand in detect_candidates(&dog, cfg.effective_contrast_floor() as f32) {
        let Ok(refined) = refine_and_filter(cand, &dog, &cfg.refine_params()) else {
            continue;
        };
        let kp = keypoint_from(&refined, &pyr);
        let Ok(oriented) = assign_orientations(&kp, &pyr, cfg) else {
            continue;
        };
        for okp in oriented {
            if let Ok(desc) = compute_descriptor(&okp, &pyr, cfg) {
                out.push((okp, desc));
            }
        }
    }
    sort_features(&mut out);
    Ok(out)
}

pub fn build_pyramids(
    img: &GrayImage,
    cfg: &SiftConfig,
) -> Result<(ScaleSpacePyramid, DoGPyramid), SiftError> {
    let pyr = if cfg.upsample {
        let up = pyramid::upsample_double(img);
        let mut p = build_gaussian_pyramid(
            &up,
            cfg.sigma0,
            cfg.intervals,
            cfg.n_octaves.map(|n| n + 1),
            2.0 * cfg.input_blur,
        )?;
        p.first_octave = -1;
        p
    } else {
        build_gaussian_pyramid(img, cfg.sigma0, cfg.intervals, cfg.n_octaves, cfg.input_blur)?
    };
    let dog = build_dog_pyramid(&pyr);
    Ok((pyr, dog))
}

pub fn keypoint_from(r: &Refined, p: &ScaleSpacePyramid) -> Keypoint {
    let octave = r.octave as i32 + p.first_octave;
    let f = 2f64.powi(octave);
    Keypoint {
        x: r.octave_x() * f,
        y: r.octave_y() * f,
        scale: p.level_sigma(r.interval()) * f,
        orientation: 0.0,
        octave,
        level: r.level as i32,
        interval: r.interval(),
        response: r.value.abs(),
    }
}

pub fn sort_features(f: &mut [Feature]) {
    f.sort_by(|(a, _), (b, _)| {
        a.octave
            .cmp(&b.octave)
            .then(a.level.cmp(&b.level))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.orientation.total_cmp(&b.orientation))
    });
}

/// Padded crop window for a detection: `margin` of the box size on each
/// side, clamped to the frame.
pub fn padded_region(bbox: &BBox, frame_w: usize, frame_h: usize, margin: f64) -> BBox {
    let mx = (bbox.w as f64 * margin).round() as i64;
    let my = (bbox.h as f64 * margin).round() as i64;
    let x0 = (bbox.x as i64 - mx).max(0);
    let y0 = (bbox.y as i64 - my).max(0);
    let x1 = ((bbox.x + bbox.w) as i64 + mx).min(frame_w as i64);
    let y1 = ((bbox.y + bbox.h) as i64 + my).min(frame_h as i64);
    BBox {
        x: x0 as u32,
        y: y0 as u32,
        w: (x1 - x0) as u32,
        h: (y1 - y0) as u32,
    }
}

/// Crops the padded detection box, extracts features and reports
/// keypoints in frame coordinates.
pub fn extract(
    frame: &GrayImage,
    bbox: &BBox,
    cfg: &SiftConfig,
) -> Result<Vec<Feature>, SiftError> {
    let (fw, fh) = frame.dimensions();
    if !bbox.fits(fw as u32, fh as u32) {
        return Err(SiftError::InvalidRegion);
    }
    let region = padded_region(bbox, fw, fh, cfg.crop_margin);
    let crop = frame.crop(
        region.x as usize,
        region.y as usize,
        region.w as usize,
        region.h as usize,
    );
    let mut feats = extract_image(&crop, cfg)?;
    for (kp, _) in &mut feats {
        kp.x += region.x as f64;
        kp.y += region.y as f64;
    }
    Ok(feats)
}
