//! Gaussian scale space and its difference-of-Gaussians stack.

use crate::image::GrayImage;

use super::SiftError;

/// Gaussian levels per octave; level `i` of every octave has blur
/// `sigma0 * 2^(i / intervals)` measured in that octave's pixels.
#[derive(Debug, Clone)]
pub struct ScaleSpacePyramid {
    pub octaves: Vec<Vec<GrayImage>>,
    pub sigma0: f64,
    pub intervals: usize,
    /// Octave number of `octaves[0]`; −1 when the input was upsampled 2×.
    pub first_octave: i32,
}

impl ScaleSpacePyramid {
    pub fn levels_per_octave(&self) -> usize {
        self.intervals + 3
    }

    /// Total blur of `level` relative to its octave's pixel grid.
    pub fn level_sigma(&self, level: f64) -> f64 {
        self.sigma0 * 2f64.powf(level / self.intervals as f64)
    }
}

#[derive(Debug, Clone)]
pub struct DoGPyramid {
    /// `octaves[o][i] = G[o][i + 1] - G[o][i]`.
    pub octaves: Vec<Vec<GrayImage>>,
}

/// Reflect-101 index (`d c b | a b c d | c b a`), valid for any offset.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / denom).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / sum) as f32).collect()
}

/// Separable Gaussian blur, kernel radius `ceil(4σ)`, reflect-101 borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = img.dimensions();

    let mut tmp = vec![0f32; w * h];
    let mut line = vec![0f32; w + 2 * r as usize];
    for y in 0..h {
        let row = img.row(y);
        for (k, slot) in line.iter_mut().enumerate() {
            *slot = row[reflect(k as isize - r, w)];
        }
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            *o = line[x..x + kernel.len()]
                .iter()
                .zip(&kernel)
                .map(|(a, b)| a * b)
                .sum();
        }
    }

    let mut out = vec![0f32; w * h];
    let rows: Vec<usize> = (0..h + 2 * r as usize)
        .map(|k| reflect(k as isize - r, h))
        .collect();
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (ki, &kv) in kernel.iter().enumerate() {
            let src = &tmp[rows[y + ki] * w..(rows[y + ki] + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    GrayImage::from_vec(w, h, out)
}

/// Every second pixel, starting at (0, 0).
pub fn downsample_half(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width() / 2, img.height() / 2);
    GrayImage::from_fn(w, h, |x, y| img.get(2 * x, 2 * y))
}

/// Bilinear 2× upsampling; output pixel `u` samples input at `u / 2`.
pub fn upsample_double(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width() * 2, img.height() * 2, |x, y| {
        img.sample_bilinear(x as f32 / 2.0, y as f32 / 2.0)
    })
}

pub fn auto_octaves(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1);
    let log2 = usize::BITS as usize - 1 - m.leading_zeros() as usize;
    log2.saturating_sub(2).max(1)
}

/// Builds the Gaussian pyramid assuming the input already carries
/// `input_blur` of blur.
pub fn build_gaussian_pyramid(
    img: &GrayImage,
    sigma0: f64,
    intervals: usize,
    n_octaves: Option<usize>,
    input_blur: f64,
) -> Result<ScaleSpacePyramid, SiftError> {
    let (w, h) = img.dimensions();
    if w < 16 || h < 16 {
        return Err(SiftError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    assert!(sigma0 > 0.0 && intervals >= 1);
    let n_octaves = n_octaves.unwrap_or_else(|| auto_octaves(w, h));
    let k = 2f64.powf(1.0 / intervals as f64);
    let sigmas: Vec<f64> = (0..intervals + 3)
        .map(|i| sigma0 * k.powi(i as i32))
        .collect();
    let increments: Vec<f64> = (1..sigmas.len())
        .map(|i| (sigmas[i] * sigmas[i] - sigmas[i - 1] * sigmas[i - 1]).sqrt())
        .collect();

    let first_blur = (sigma0 * sigma0 - input_blur * input_blur).max(0.0).sqrt();
    let mut base = gaussian_blur(img, first_blur);
    let mut octaves = Vec::with_capacity(n_octaves);
    for o in 0..n_octaves {
        if o > 0 {
            let prev: &Vec<GrayImage> = &octaves[o - 1];
            base = downsample_half(&prev[intervals]);
            if base.width() == 0 || base.height() == 0 {
                break;
            }
        }
        let mut levels = Vec::with_capacity(intervals + 3);
        levels.push(base.clone());
        for inc in &increments {
            let next = gaussian_blur(levels.last().expect("non-empty"), *inc);
            levels.push(next);
        }
        octaves.push(levels);
    }
    Ok(ScaleSpacePyramid {
        octaves,
        sigma0,
        intervals,
        first_octave: 0,
    })
}

pub fn build_dog_pyramid(p: &ScaleSpacePyramid) -> DoGPyramid {
    let octaves = p
        .octaves
        .iter()
        .map(|levels| {
            levels
                .windows(2)
                .map(|pair| {
                    let px = pair[1]
                        .pixels()
                        .iter()
                        .zip(pair[0].pixels())
                        .map(|(b, a)| b - a)
                        .collect();
                    GrayImage::from_vec(pair[0].width(), pair[0].height(), px)
                })
                .collect()
        })
        .collect();
    DoGPyramid { octaves }
}
