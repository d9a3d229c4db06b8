//! 8-bit RGB pixel buffers and the primitives the mixer is built from.

use std::path::Path;

use image::{ExtendedColorType, ImageFormat, ImageReader};

use crate::dataset::BBoxXYWH;
use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Tolerance on the per-pixel weight sum accepted by [`blend`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Row-major RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * CHANNELS)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * CHANNELS;
        if pixels.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "buffer of {} bytes does not match {width}x{height}x{CHANNELS}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * CHANNELS
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + CHANNELS].copy_from_slice(&rgb);
    }

    fn row(&self, y: u32, x0: u32, len: u32) -> &[u8] {
        let o = self.offset(x0, y);
        &self.pixels[o..o + len as usize * CHANNELS]
    }
}

/// Integer pixel rectangle, `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    /// Smallest integer rectangle enclosing `b`, intersected with an
    /// `img_w` x `img_h` image. `None` if nothing of `b` is inside.
    pub fn enclosing(b: &BBoxXYWH, img_w: u32, img_h: u32) -> Option<Self> {
        let (x0, x1) = enclosing_span(b.x, b.w, img_w)?;
        let (y0, y1) = enclosing_span(b.y, b.h, img_h)?;
        Some(Self {
            x: x0,
            y: y0,
            width: x1 - x0,
            height: y1 - y0,
        })
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

fn enclosing_span(start: f64, len: f64, dim: u32) -> Option<(u32, u32)> {
    let lo = start.floor().max(0.0);
    let hi = (start + len).ceil().min(dim as f64);
    // Rejects NaN as well as empty spans.
    if !(hi > lo) {
        return None;
    }
    Some((lo as u32, hi as u32))
}

/// A region cut out of a larger image, remembering where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub x: u32,
    pub y: u32,
    pub raster: Raster,
}

impl Patch {
    pub fn new(x: u32, y: u32, raster: Raster) -> Self {
        Self { x, y, raster }
    }

    pub fn width(&self) -> u32 {
        self.raster.width
    }

    pub fn height(&self) -> u32 {
        self.raster.height
    }

    pub fn dims(&self) -> (u32, u32) {
        self.raster.dims()
    }

    pub fn rect(&self) -> PixelRect {
        PixelRect {
            x: self.x,
            y: self.y,
            width: self.width(),
            height: self.height(),
        }
    }
}

/// Per-pixel weights in `[0, 1]`, shared by all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    width: u32,
    height: u32,
    weights: Vec<f64>,
}

impl WeightField {
    pub fn new(width: u32, height: u32, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != width as usize * height as usize {
            return Err(Error::InvalidParameter(format!(
                "{} weights for a {width}x{height} field",
                weights.len()
            )));
        }
        if let Some(bad) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidParameter(format!(
                "weight {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            weights,
        })
    }

    pub fn constant(width: u32, height: u32, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.weights[y as usize * self.width as usize + x as usize]
    }

    /// Pointwise `f(w)`; the result must stay in `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.weights.iter().map(|&w| f(w)).collect(),
        )
    }
}

/// Round half up, saturating to the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("unsupported image format {other:?}"),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| image_error(path, e))?;
    let rgb = decoded.into_rgb8();
    let (width, height) = rgb.dimensions();
    Raster::from_pixels(width, height, rgb.into_raw())
}

/// Writes `raster` as PNG.
pub fn save_image(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    image::save_buffer_with_format(
        path,
        &raster.pixels,
        raster.width,
        raster.height,
        ExtendedColorType::Rgb8,
        ImageFormat::Png,
    )
    .map_err(|e| image_error(path, e))
}

fn image_error(path: &Path, err: image::ImageError) -> Error {
    match err {
        image::ImageError::IoError(e) => Error::io(path, e),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Cuts the enclosing pixel rectangle of `b` out of `raster`, clamped to
/// the image bounds.
pub fn crop(raster: &Raster, b: &BBoxXYWH) -> Result<Patch> {
    if !(b.w > 0.0 && b.h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "crop box {:?} has non-positive size",
            b.to_array()
        )));
    }
    let rect = PixelRect::enclosing(b, raster.width, raster.height).ok_or(Error::OutOfBounds {
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
        width: raster.width,
        height: raster.height,
    })?;
    Ok(crop_rect(raster, rect))
}

/// `rect` must lie inside `raster`.
pub fn crop_rect(raster: &Raster, rect: PixelRect) -> Patch {
    let mut pixels = Vec::with_capacity(rect.width as usize * rect.height as usize * CHANNELS);
    for y in rect.y..rect.y + rect.height {
        pixels.extend_from_slice(raster.row(y, rect.x, rect.width));
    }
    Patch::new(
        rect.x,
        rect.y,
        Raster {
            width: rect.width,
            height: rect.height,
            pixels,
        },
    )
}

/// Overwrites the region of `target` under `patch` with its pixels.
pub fn paste(target: &mut Raster, patch: &Patch) -> Result<()> {
    if patch.x + patch.width() > target.width || patch.y + patch.height() > target.height {
        return Err(Error::DimensionMismatch {
            expected: target.dims(),
            found: (patch.x + patch.width(), patch.y + patch.height()),
        });
    }
    let row_len = patch.width() as usize * CHANNELS;
    for row in 0..patch.height() {
        let src = &patch.raster.pixels[row as usize * row_len..(row as usize + 1) * row_len];
        let o = target.offset(patch.x, patch.y + row);
        target.pixels[o..o + row_len].copy_from_slice(src);
    }
    Ok(())
}

struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Corner-aligned sample positions: output 0 maps to source 0 and the last
/// output maps to the last source sample. A single output samples the centre.
fn taps(src: u32, dst: u32) -> Vec<Tap> {
    let last = src as usize - 1;
    (0..dst as usize)
        .map(|i| {
            let pos = if dst == 1 {
                last as f64 / 2.0
            } else {
                (i * last) as f64 / (dst as usize - 1) as f64
            };
            let lo = (pos.floor() as usize).min(last);
            Tap {
                lo,
                hi: (lo + 1).min(last),
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resample to `target_w` x `target_h`. The origin is kept.
pub fn resize(patch: &Patch, target_w: u32, target_h: u32) -> Result<Patch> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidParameter(format!(
            "resize target {target_w}x{target_h} must be positive"
        )));
    }
    if patch.dims() == (target_w, target_h) {
        return Ok(patch.clone());
    }
    let src = &patch.raster;
    let xs = taps(src.width, target_w);
    let ys = taps(src.height, target_h);
    let stride = src.width as usize * CHANNELS;
    let mut pixels = Vec::with_capacity(target_w as usize * target_h as usize * CHANNELS);
    for ty in &ys {
        let top = &src.pixels[ty.lo * stride..(ty.lo + 1) * stride];
        let bottom = &src.pixels[ty.hi * stride..(ty.hi + 1) * stride];
        for tx in &xs {
            for c in 0..CHANNELS {
                let lerp = |a: u8, b: u8, t: f64| a as f64 + (b as f64 - a as f64) * t;
                let t = lerp(top[tx.lo * CHANNELS + c], top[tx.hi * CHANNELS + c], tx.frac);
                let b = lerp(
                    bottom[tx.lo * CHANNELS + c],
                    bottom[tx.hi * CHANNELS + c],
                    tx.frac,
                );
                pixels.push(quantize(t + (b - t) * ty.frac));
            }
        }
    }
    Ok(Patch::new(
        patch.x,
        patch.y,
        Raster {
            width: target_w,
            height: target_h,
            pixels,
        },
    ))
}

/// Per-pixel convex combination `sum_i weights[i] * patches[i]`, accumulated
/// in `f64` and quantized once. The result takes the first patch's origin.
pub fn blend(patches: &[Patch], weights: &[WeightField]) -> Result<Patch> {
    let first = patches
        .first()
        .ok_or_else(|| Error::InvalidParameter("blend of zero patches".into()))?;
    if patches.len() != weights.len() {
        return Err(Error::InvalidParameter(format!(
            "{} patches but {} weight fields",
            patches.len(),
            weights.len()
        )));
    }
    let dims = first.dims();
    for found in patches
        .iter()
        .map(Patch::dims)
        .chain(weights.iter().map(WeightField::dims))
    {
        if found != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found,
            });
        }
    }

    let (w, h) = dims;
    let n = w as usize * h as usize;
    let mut pixels = Vec::with_capacity(n * CHANNELS);
    for i in 0..n {
        let sum: f64 = weights.iter().map(|f| f.weights[i]).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::WeightSum {
                x: (i % w as usize) as u32,
                y: (i / w as usize) as u32,
                sum,
            });
        }
        for c in 0..CHANNELS {
            let v: f64 = patches
                .iter()
                .zip(weights)
                .map(|(p, f)| f.weights[i] * p.raster.pixels[i * CHANNELS + c] as f64)
                .sum();
            pixels.push(quantize(v));
        }
    }
    Ok(Patch::new(
        first.x,
        first.y,
        Raster {
            width: w,
            height: h,
            pixels,
        },
    ))
}
