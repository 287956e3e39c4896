//! Grayscale image buffer and frame decoding.
//!
//! Netpbm (PGM/PPM, 8-bit, ASCII and binary) is parsed here directly so the
//! byte layout is fully under our control; PNG and JPEG go through `image`.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

/// ITU-R 601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image {path}: {reason}")]
    CorruptImage { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major luminance image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Wraps a pixel buffer. Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer length mismatch");
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Copies out the `w × h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> GrayImage {
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            pixels.extend_from_slice(&self.pixels[row * self.width + x..row * self.width + x + w]);
        }
        GrayImage {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Bilinear sample with edge clamping.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let max_x = (self.width - 1) as f32;
        let max_y = (self.height - 1) as f32;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Quantizes to 8 bits with rounding.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Self {
        assert_eq!(data.len(), width * height);
        GrayImage {
            width,
            height,
            pixels: data.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    /// Binary PGM (P5) encoding.
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_u8());
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<(), ImageError> {
        let io_err = |source| ImageError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(&self.encode_pgm()).map_err(io_err)
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
            .expect("buffer sized from dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .expect("png encoding to memory");
        out.into_inner()
    }
}

fn luma(r: u8, g: u8, b: u8) -> f32 {
    let v = LUMA_WEIGHTS[0] * r as f32 + LUMA_WEIGHTS[1] * g as f32 + LUMA_WEIGHTS[2] * b as f32;
    (v / 255.0).clamp(0.0, 1.0)
}

/// Decodes a frame to luminance in `[0, 1]`.
pub fn decode_image(path: &Path) -> Result<GrayImage, ImageError> {
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_bytes(&bytes).map_err(|e| match e {
        ImageError::CorruptImage { reason, .. } => ImageError::CorruptImage {
            path: path.display().to_string(),
            reason,
        },
        other => other,
    })
}

pub fn decode_bytes(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    if bytes.len() >= 2 && bytes[0] == b'P' && matches!(bytes[1], b'2' | b'3' | b'5' | b'6') {
        return decode_netpbm(bytes);
    }
    let format = image::guess_format(bytes)
        .map_err(|_| ImageError::UnsupportedFormat("unrecognized signature".into()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(ImageError::UnsupportedFormat(format!("{format:?}")));
    }
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| {
        ImageError::CorruptImage {
            path: String::new(),
            reason: e.to_string(),
        }
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(corrupt("zero-sized image"));
    }
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let pixels = rgb.pixels().map(|p| luma(p[0], p[1], p[2])).collect();
        Ok(GrayImage::from_vec(w, h, pixels))
    } else {
        let gray = img.to_luma8();
        Ok(GrayImage::from_u8(w, h, gray.as_raw()))
    }
}

/// Reads only the dimensions of an image file.
pub fn image_dimensions(path: &Path) -> Result<(usize, usize), ImageError> {
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() >= 2 && bytes[0] == b'P' && matches!(bytes[1], b'2' | b'3' | b'5' | b'6') {
        let mut tok = NetpbmTokens::new(&bytes);
        tok.magic()?;
        let w = tok.number()?;
        let h = tok.number()?;
        if w == 0 || h == 0 {
            return Err(corrupt("zero-sized image"));
        }
        return Ok((w, h));
    }
    let reader = image::ImageReader::new(std::io::Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| corrupt(&e.to_string()))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        Some(f) => return Err(ImageError::UnsupportedFormat(format!("{f:?}"))),
        None => return Err(ImageError::UnsupportedFormat("unrecognized signature".into())),
    }
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| corrupt(&e.to_string()))?;
    Ok((w as usize, h as usize))
}

fn corrupt(reason: &str) -> ImageError {
    ImageError::CorruptImage {
        path: String::new(),
        reason: reason.to_string(),
    }
}

struct NetpbmTokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> NetpbmTokens<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        NetpbmTokens { bytes, pos: 0 }
    }

    fn magic(&mut self) -> Result<u8, ImageError> {
        if self.bytes.len() < 2 {
            return Err(corrupt("truncated header"));
        }
        self.pos = 2;
        Ok(self.bytes[1])
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(corrupt("expected decimal number in header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("header number out of range"))
    }
}

fn decode_netpbm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let mut tok = NetpbmTokens::new(bytes);
    let kind = tok.magic()?;
    let width = tok.number()?;
    let height = tok.number()?;
    let maxval = tok.number()?;
    if width == 0 || height == 0 {
        return Err(corrupt("zero-sized image"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::UnsupportedFormat(format!(
            "netpbm maxval {maxval} (only 8-bit supported)"
        )));
    }
    let channels = if matches!(kind, b'3' | b'6') { 3 } else { 1 };
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| corrupt("dimensions overflow"))?;
    let samples: Vec<u8> = match kind {
        b'5' | b'6' => {
            // exactly one whitespace byte separates maxval from the raster
            if tok.pos >= bytes.len() || !bytes[tok.pos].is_ascii_whitespace() {
                return Err(corrupt("missing raster separator"));
            }
            let start = tok.pos + 1;
            if bytes.len() < start + n {
                return Err(corrupt("truncated raster"));
            }
            bytes[start..start + n].to_vec()
        }
        _ => {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let s = tok.number()?;
                if s > maxval {
                    return Err(corrupt("sample exceeds maxval"));
                }
                v.push(s as u8);
            }
            v
        }
    };
    let scale = maxval as f32;
    let pixels = if channels == 1 {
        samples
            .iter()
            .map(|&s| (s as f32 / scale).clamp(0.0, 1.0))
            .collect()
    } else {
        samples
            .chunks_exact(3)
            .map(|p| {
                let v = LUMA_WEIGHTS[0] * p[0] as f32
                    + LUMA_WEIGHTS[1] * p[1] as f32
                    + LUMA_WEIGHTS[2] * p[2] as f32;
                (v / scale).clamp(0.0, 1.0)
            })
            .collect()
    };
    Ok(GrayImage::from_vec(width, height, pixels))
}
