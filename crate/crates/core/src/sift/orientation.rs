//! Dominant gradient orientations around a keypoint.

use std::f64::consts::TAU;

use crate::image::GrayImage;

use super::pyramid::ScaleSpacePyramid;
use super::{Keypoint, SiftConfig, SiftError};

/// Gradient-orientation histogram of a Gaussian-weighted square window.
///
/// Votes are split linearly between the two nearest bins; bin `k` is
/// centred on `(k + 0.5) * 2π / bins`.
pub fn orientation_histogram(
    img: &GrayImage,
    cx: isize,
    cy: isize,
    sigma: f64,
    radius: isize,
    bins: usize,
) -> Vec<f64> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut hist = vec![0f64; bins];
    let denom = 2.0 * sigma * sigma;
    for dy in -radius..=radius {
        let y = cy + dy;
        if y < 1 || y >= h - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x < 1 || x >= w - 1 {
                continue;
            }
            let (xu, yu) = (x as usize, y as usize);
            let gx = (img.get(xu + 1, yu) - img.get(xu - 1, yu)) as f64;
            let gy = (img.get(xu, yu + 1) - img.get(xu, yu - 1)) as f64;
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let weight = (-((dx * dx + dy * dy) as f64) / denom).exp();
            let angle = gy.atan2(gx).rem_euclid(TAU);
            let pos = angle * bins as f64 / TAU - 0.5;
            let k0 = pos.floor();
            let frac = pos - k0;
            let k0 = (k0 as isize).rem_euclid(bins as isize) as usize;
            hist[k0] += (1.0 - frac) * weight * mag;
            hist[(k0 + 1) % bins] += frac * weight * mag;
        }
    }
    hist
}

/// One circular pass of the `[1, 1, 1] / 3` box filter.
pub fn smooth_histogram(hist: &[f64]) -> Vec<f64> {
    let n = hist.len();
    (0..n)
        .map(|k| (hist[(k + n - 1) % n] + hist[k] + hist[(k + 1) % n]) / 3.0)
        .collect()
}

/// Peak orientations (radians in `[0, 2π)`) of a smoothed histogram.
///
/// A bin qualifies if it is a local maximum (`>=` its left neighbour, `>`
/// its right one, so a two-bin plateau yields one peak) and reaches
/// `peak_ratio` of the global maximum. Each peak is refined with a parabola
/// through its neighbours.
pub fn dominant_orientations(hist: &[f64], peak_ratio: f64) -> Vec<f64> {
    let n = hist.len();
    let max = hist.iter().copied().fold(0f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let floor = peak_ratio * max;
    let mut out = Vec::new();
    for k in 0..n {
        let (l, c, r) = (hist[(k + n - 1) % n], hist[k], hist[(k + 1) % n]);
        if c < floor || c < l || c <= r {
            continue;
        }
        let denom = l - 2.0 * c + r;
        let shift = if denom == 0.0 { 0.0 } else { 0.5 * (l - r) / denom };
        let bin = k as f64 + shift + 0.5;
        out.push((bin * TAU / n as f64).rem_euclid(TAU));
    }
    out
}

/// Copies `kp` once per dominant orientation.
pub fn assign_orientations(
    kp: &Keypoint,
    p: &ScaleSpacePyramid,
    cfg: &SiftConfig,
) -> Result<Vec<Keypoint>, SiftError> {
    let (img, ox, oy, octave_sigma) = super::octave_view(kp, p);
    let sigma = cfg.orientation_sigma_factor * octave_sigma;
    let radius = (3.0 * sigma).round() as isize;
    let hist = orientation_histogram(
        img,
        ox.round() as isize,
        oy.round() as isize,
        sigma,
        radius,
        cfg.orientation_bins,
    );
    if hist.iter().all(|&v| v == 0.0) {
        return Err(SiftError::DegenerateGradient);
    }
    let smoothed = smooth_histogram(&hist);
    Ok(dominant_orientations(&smoothed, cfg.orientation_peak_ratio)
        .into_iter()
        .map(|orientation| Keypoint { orientation, ..*kp })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sift::pyramid::build_gaussian_pyramid;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn kp_at(x: f64, y: f64, scale: f64) -> Keypoint {
        Keypoint {
            x,
            y,
            scale,
            orientation: 0.0,
            octave: 0,
            level: 1,
            interval: 1.0,
            response: 0.1,
        }
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(TAU);
        d.min(TAU - d)
    }

    #[test]
    fn ramp_orientation_is_zero() {
        let img = GrayImage::from_fn(64, 64, |x, _| x as f32 / 64.0);
        let cfg = SiftConfig::default();
        let p = build_gaussian_pyramid(&img, 1.6, 3, Some(1), 0.5).unwrap();
        let out = assign_orientations(&kp_at(32.0, 32.0, 2.0), &p, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert!(angle_diff(out[0].orientation, 0.0) <= PI / 36.0);
    }

    #[test]
    fn rotated_ramp_orientation_shifts_by_quarter_turn() {
        let cfg = SiftConfig::default();
        let img = GrayImage::from_fn(64, 64, |x, _| x as f32 / 64.0);
        // exact 90° rotation: R(x', y') = I(y', 63 - x')
        let rot = GrayImage::from_fn(64, 64, |x, y| img.get(y, 63 - x));
        let a = assign_orientations(
            &kp_at(32.0, 32.0, 2.0),
            &build_gaussian_pyramid(&img, 1.6, 3, Some(1), 0.5).unwrap(),
            &cfg,
        )
        .unwrap();
        let b = assign_orientations(
            &kp_at(31.0, 32.0, 2.0),
            &build_gaussian_pyramid(&rot, 1.6, 3, Some(1), 0.5).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(b.len(), 1);
        assert!(angle_diff(b[0].orientation, a[0].orientation + FRAC_PI_2) <= TAU / 36.0);
    }

    #[test]
    fn tied_peaks_give_two_orientations() {
        let mut hist = vec![0.0; 36];
        for c in [5, 20] {
            hist[c - 1] = 0.5;
            hist[c] = 1.0;
            hist[c + 1] = 0.5;
        }
        let o = dominant_orientations(&hist, 0.8);
        assert_eq!(o.len(), 2);
        assert!(angle_diff(o[0], 5.5 * TAU / 36.0) < 1e-9);
        assert!(angle_diff(o[1], 20.5 * TAU / 36.0) < 1e-9);
    }

    #[test]
    fn weak_secondary_peak_ignored() {
        let mut hist = vec![0.0; 36];
        hist[3] = 1.0;
        hist[18] = 0.7;
        assert_eq!(dominant_orientations(&hist, 0.8).len(), 1);
        hist[18] = 0.85;
        assert_eq!(dominant_orientations(&hist, 0.8).len(), 2);
    }

    #[test]
    fn parabolic_refinement_between_bins() {
        let mut hist = vec![0.0; 36];
        hist[10] = 1.0;
        hist[11] = 0.5;
        hist[9] = 0.0;
        let o = dominant_orientations(&hist, 0.8);
        assert_eq!(o.len(), 1);
        // vertex of parabola through (-1,0),(0,1),(1,0.5) at +1/6 bin
        let want = (10.0 + 1.0 / 6.0 + 0.5) * TAU / 36.0;
        assert!((o[0] - want).abs() < 1e-12);
    }

    #[test]
    fn flat_image_is_degenerate() {
        let img = GrayImage::filled(40, 40, 0.3);
        let p = build_gaussian_pyramid(&img, 1.6, 3, Some(1), 0.5).unwrap();
        assert!(matches!(
            assign_orientations(&kp_at(20.0, 20.0, 2.0), &p, &SiftConfig::default()),
            Err(SiftError::DegenerateGradient)
        ));
    }
}
