//! 4×4×8 gradient-histogram descriptors.

use std::f64::consts::TAU;

use super::pyramid::ScaleSpacePyramid;
use super::{Descriptor, Keypoint, SiftConfig, SiftError, DESCRIPTOR_LEN};

/// Spatial bin width in multiples of the keypoint's octave sigma.
const BIN_WIDTH_SIGMAS: f64 = 3.0;

/// Pixel radius of the sampling window for a given octave sigma.
pub fn window_radius(octave_sigma: f64, width: usize) -> isize {
    let bin_px = BIN_WIDTH_SIGMAS * octave_sigma;
    (bin_px * std::f64::consts::SQRT_2 * (width as f64 + 1.0) * 0.5).round() as isize
}

/// Scales to unit length, clamps every component at `clamp`, and rescales.
/// Returns `false` for an all-zero input.
pub fn clamp_normalize(v: &mut [f64], clamp: f64) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return false;
    }
    for x in v.iter_mut() {
        *x = (*x / norm).min(clamp);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

pub fn compute_descriptor(
    kp: &Keypoint,
    p: &ScaleSpacePyramid,
    cfg: &SiftConfig,
) -> Result<Descriptor, SiftError> {
    let d = cfg.descriptor_width;
    let n_bins = cfg.descriptor_bins;
    assert_eq!(d * d * n_bins, DESCRIPTOR_LEN, "descriptor layout must be 128 values");

    let (img, ox, oy, octave_sigma) = super::octave_view(kp, p);
    let (w, h) = (img.width() as isize, img.height() as isize);
    let radius = window_radius(octave_sigma, d);
    let (cx, cy) = (ox.round() as isize, oy.round() as isize);
    if cx - radius < 1 || cy - radius < 1 || cx + radius >= w - 1 || cy + radius >= h - 1 {
        return Err(SiftError::WindowOutOfBounds);
    }

    let bin_px = BIN_WIDTH_SIGMAS * octave_sigma;
    let (sin_t, cos_t) = kp.orientation.sin_cos();
    let half = d as f64 / 2.0;
    let weight_denom = 2.0 * half * half;
    // (d + 2)² spatial cells padded by one on every side to avoid bounds
    // checks during trilinear spreading
    let stride_c = n_bins;
    let stride_r = (d + 2) * n_bins;
    let mut hist = vec![0f64; (d + 2) * (d + 2) * n_bins];

    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let px = (cx + dx) as f64 - ox;
            let py = (cy + dy) as f64 - oy;
            // sample offset expressed in the keypoint frame, in bin units
            let c_rot = (cos_t * px + sin_t * py) / bin_px;
            let r_rot = (-sin_t * px + cos_t * py) / bin_px;
            let cbin = c_rot + half - 0.5;
            let rbin = r_rot + half - 0.5;
            if cbin <= -1.0 || rbin <= -1.0 || cbin >= d as f64 || rbin >= d as f64 {
                continue;
            }
            let (x, y) = ((cx + dx) as usize, (cy + dy) as usize);
            let gx = (img.get(x + 1, y) - img.get(x - 1, y)) as f64;
            let gy = (img.get(x, y + 1) - img.get(x, y - 1)) as f64;
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let weight = (-(c_rot * c_rot + r_rot * r_rot) / weight_denom).exp();
            let rel = (gy.atan2(gx) - kp.orientation).rem_euclid(TAU);
            let obin = rel * n_bins as f64 / TAU;

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (fr, fc, fo) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 + 1.0) as usize, (c0 + 1.0) as usize);
            let o0 = o0 as usize % n_bins;
            let v = mag * weight;
            for (ri, wr) in [(0, 1.0 - fr), (1, fr)] {
                for (ci, wc) in [(0, 1.0 - fc), (1, fc)] {
                    let base = (r0 + ri) * stride_r + (c0 + ci) * stride_c;
                    let vrc = v * wr * wc;
                    hist[base + o0] += vrc * (1.0 - fo);
                    hist[base + (o0 + 1) % n_bins] += vrc * fo;
                }
            }
        }
    }

    let mut raw = Vec::with_capacity(DESCRIPTOR_LEN);
    for r in 1..=d {
        for c in 1..=d {
            let base = r * stride_r + c * stride_c;
            raw.extend_from_slice(&hist[base..base + n_bins]);
        }
    }
    if !clamp_normalize(&mut raw, cfg.descriptor_clamp) {
        return Err(SiftError::DegenerateDescriptor);
    }
    let mut values = [0f32; DESCRIPTOR_LEN];
    for (dst, src) in values.iter_mut().zip(&raw) {
        *dst = *src as f32;
    }
    Ok(Descriptor(values))
}
