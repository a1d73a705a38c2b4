//! Patch extraction and rendering of Mel patches into network-ready RGB tensors.
//!
//! The render path is: dB patch → `[0, 1]` range → orientation → colormap
//! (64×64 RGB) → bilinear upscale (224×224) → ImageNet standardisation.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::MelSpectrogram;
use crate::viridis::VIRIDIS;

pub const PATCH_WIDTH: usize = 64;
pub const PATCH_STRIDE: usize = 32;
pub const IMAGE_SIZE: usize = 224;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// A `[n_mels, width]` window of a Mel spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values_db: Array2<f64>,
    pub clip_id: Arc<str>,
    pub frame_offset: usize,
}

/// Number of patches a clip of `n_frames` yields; trailing frames are dropped.
pub fn patch_count(n_frames: usize, width: usize, stride: usize) -> usize {
    if n_frames < width || stride == 0 {
        0
    } else {
        (n_frames - width) / stride + 1
    }
}

pub fn extract_patches(
    mel: &MelSpectrogram,
    clip_id: &str,
    width: usize,
    stride: usize,
) -> Result<Vec<Patch>> {
    if width == 0 || stride == 0 {
        return Err(Error::InvalidParameter("patch width and stride must be positive".into()));
    }
    let frames = mel.n_frames();
    if frames < width {
        return Err(Error::TooShort { frames, width });
    }
    let clip_id: Arc<str> = Arc::from(clip_id);
    Ok((0..patch_count(frames, width, stride))
        .map(|i| {
            let offset = i * stride;
            Patch {
                values_db: mel.values_db.slice(s![.., offset..offset + width]).to_owned(),
                clip_id: Arc::clone(&clip_id),
                frame_offset: offset,
            }
        })
        .collect())
}

/// Min-max rescale into `[0, 1]` using the given range. A degenerate range
/// maps everything to zero.
pub fn rescale_unit(values: ArrayView2<f64>, min: f64, max: f64) -> Array2<f64> {
    let span = max - min;
    if !(span > 0.0) {
        return Array2::zeros(values.raw_dim());
    }
    values.mapv(|v| ((v - min) / span).clamp(0.0, 1.0))
}

fn min_max<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Per-patch min-max normalisation; a constant patch becomes all zeros.
pub fn patch_to_unit(patch: &Patch) -> Array2<f64> {
    let (lo, hi) = min_max(patch.values_db.iter());
    rescale_unit(patch.values_db.view(), lo, hi)
}

#[derive(Debug, Clone)]
pub struct ColorMap {
    pub lut: [[f32; 3]; 256],
}

impl ColorMap {
    pub fn viridis() -> Self {
        Self { lut: VIRIDIS }
    }
}

/// LUT index for a unit value, rounding half up.
pub fn lut_index(u: f64) -> usize {
    ((u * 255.0 + 0.5).floor() as isize).clamp(0, 255) as usize
}

/// Maps a `[0, 1]` matrix to a `[3, H, W]` image (channels R, G, B).
pub fn apply_colormap(unit: ArrayView2<f64>, cmap: &ColorMap) -> Result<Array3<f32>> {
    if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidParameter("colormap input must lie in [0, 1]".into()));
    }
    let (h, w) = unit.dim();
    let mut img = Array3::<f32>::zeros((3, h, w));
    for ((y, x), &u) in unit.indexed_iter() {
        let rgb = cmap.lut[lut_index(u)];
        for c in 0..3 {
            img[[c, y, x]] = rgb[c];
        }
    }
    Ok(img)
}

/// Bilinear resize with half-pixel centres (`align_corners = false`);
/// source coordinates are clamped at the borders.
pub fn resize_bilinear(img: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (channels, in_h, in_w) = img.dim();
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, (src - lo as f64) as f32)
            })
            .collect()
    };
    let ys = taps(out_h, in_h);
    let xs = taps(out_w, in_w);
    let mut out = Array3::<f32>::zeros((channels, out_h, out_w));
    for c in 0..channels {
        let plane = img.index_axis(Axis(0), c);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = plane[[y0, x0]] + (plane[[y0, x1]] - plane[[y0, x0]]) * fx;
                let bottom = plane[[y1, x0]] + (plane[[y1, x1]] - plane[[y1, x0]]) * fx;
                out[[c, oy, ox]] = top + (bottom - top) * fy;
            }
        }
    }
    out
}

/// `[3, H, W]` network input.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbTensor {
    pub values: Array3<f32>,
    pub standardized: bool,
}

pub fn imagenet_standardize(img: Array3<f32>) -> RgbTensor {
    let mut values = img;
    for (c, mut plane) in values.axis_iter_mut(Axis(0)).enumerate() {
        let (m, s) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
        plane.mapv_inplace(|v| (v - m) / s);
    }
    RgbTensor {
        values,
        standardized: true,
    }
}

pub fn imagenet_unstandardize(t: &RgbTensor) -> Array3<f32> {
    let mut values = t.values.clone();
    for (c, mut plane) in values.axis_iter_mut(Axis(0)).enumerate() {
        let (m, s) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
        plane.mapv_inplace(|v| v * s + m);
    }
    values
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitNorm {
    PerPatch,
    PerClip,
}

/// Vertical orientation of the Mel axis in rendered images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Image row 0 holds the highest Mel band.
    LowAtBottom,
    /// Image row 0 holds Mel band 0.
    LowAtTop,
}

impl Orientation {
    pub fn code(self) -> u8 {
        match self {
            Self::LowAtBottom => 0,
            Self::LowAtTop => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Self::LowAtBottom),
            1 => Ok(Self::LowAtTop),
            _ => Err(Error::Format(format!("unknown orientation code {code}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: usize,
    pub stride: usize,
    pub unit_norm: UnitNorm,
    pub orientation: Orientation,
    pub image_size: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: PATCH_WIDTH,
            stride: PATCH_STRIDE,
            unit_norm: UnitNorm::PerPatch,
            orientation: Orientation::LowAtBottom,
            image_size: IMAGE_SIZE,
        }
    }
}

/// Renders patches of one clip. `clip_range` is the clip-wide (min, max) used
/// when normalising per clip.
#[derive(Debug, Clone)]
pub struct PatchRenderer {
    pub config: RenderConfig,
    cmap: ColorMap,
}

impl PatchRenderer {
    pub fn new(config: RenderConfig) -> Self {
        Self {
            config,
            cmap: ColorMap::viridis(),
        }
    }

    pub fn unit(&self, patch: &Patch, clip_range: (f64, f64)) -> Array2<f64> {
        let unit = match self.config.unit_norm {
            UnitNorm::PerPatch => patch_to_unit(patch),
            UnitNorm::PerClip => rescale_unit(patch.values_db.view(), clip_range.0, clip_range.1),
        };
        match self.config.orientation {
            Orientation::LowAtTop => unit,
            Orientation::LowAtBottom => unit.slice(s![..;-1, ..]).to_owned(),
        }
    }

    /// Colormapped and resized image with values in `[0, 1]`.
    pub fn image(&self, patch: &Patch, clip_range: (f64, f64)) -> Result<Array3<f32>> {
        let rgb = apply_colormap(self.unit(patch, clip_range).view(), &self.cmap)?;
        let size = self.config.image_size;
        Ok(resize_bilinear(&rgb, size, size))
    }

    pub fn render(&self, patch: &Patch, clip_range: (f64, f64)) -> Result<RgbTensor> {
        Ok(imagenet_standardize(self.image(patch, clip_range)?))
    }

    pub fn render_clip(&self, mel: &MelSpectrogram, patches: &[Patch]) -> Result<Vec<RgbTensor>> {
        let range = min_max(mel.values_db.iter());
        patches.iter().map(|p| self.render(p, range)).collect()
    }
}

/// Writes a `[3, H, W]` image with values in `[0, 1]` as binary PPM (P6).
pub fn write_ppm(path: impl AsRef<Path>, img: &Array3<f32>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = img.dim();
    if c != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: c });
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(out, "P6\n{w} {h}\n255\n").map_err(io)?;
    let mut bytes = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                bytes.push((img[[ch, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out.write_all(&bytes).map_err(io)?;
    out.flush().map_err(io)
}
