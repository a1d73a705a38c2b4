//! Turning rendered patches into feature vectors, plus standardisation and
//! the on-disk feature cache.

mod cache;
#[cfg(feature = "onnx")]
mod onnx;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{Orientation, Patch};
use crate::spectral::MelSpectrogram;

pub use cache::{read_cache, write_cache, CACHE_MAGIC};
#[cfg(feature = "onnx")]
pub use onnx::{load_backend, Backend, ImageEmbedder};

/// Pretrained image classifiers with their fixed tap dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorId {
    AlexNet,
    ResNet18,
    ResNet34,
    SqueezeNet,
}

impl ExtractorId {
    pub const ALL: [ExtractorId; 4] = [Self::AlexNet, Self::ResNet18, Self::ResNet34, Self::SqueezeNet];

    pub fn expected_dim(self) -> usize {
        match self {
            Self::AlexNet => 4096,
            Self::ResNet18 | Self::ResNet34 => 512,
            Self::SqueezeNet => 2048,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AlexNet => "alexnet",
            Self::ResNet18 => "resnet18",
            Self::ResNet34 => "resnet34",
            Self::SqueezeNet => "squeezenet",
        }
    }
}

impl fmt::Display for ExtractorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExtractorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown extractor {s:?}")))
    }
}

/// Where an inference graph lives and which nodes to use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingBackendSpec {
    pub graph_path: std::path::PathBuf,
    pub input_name: String,
    pub output_name: String,
    pub expected_dim: usize,
    pub extractor_id: ExtractorId,
}

impl EmbeddingBackendSpec {
    pub fn new(
        extractor_id: ExtractorId,
        graph_path: impl Into<std::path::PathBuf>,
        input_name: &str,
        output_name: &str,
    ) -> Self {
        Self {
            graph_path: graph_path.into(),
            input_name: input_name.to_string(),
            output_name: output_name.to_string(),
            expected_dim: extractor_id.expected_dim(),
            extractor_id,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.expected_dim != self.extractor_id.expected_dim() {
            return Err(Error::InvalidParameter(format!(
                "{} taps {} features, spec declares {}",
                self.extractor_id,
                self.extractor_id.expected_dim(),
                self.expected_dim
            )));
        }
        Ok(())
    }
}

/// Produces one feature row per patch of a clip.
pub trait PatchEmbedder: Send + Sync {
    fn extractor_id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Orientation recorded in cache headers.
    fn orientation(&self) -> Orientation;
    /// Bytes identifying everything that influences the output, for cache keys.
    fn fingerprint(&self) -> Vec<u8>;
    fn embed_clip(&self, mel: &MelSpectrogram, patches: &[Patch]) -> Result<Array2<f32>>;
}

/// Identity-style embedding: the dB patch block-averaged down to
/// `cells × cells` and flattened row-major. Needs no pretrained graph.
#[derive(Debug, Clone)]
pub struct DownsampleEmbedder {
    pub cells: usize,
}

impl Default for DownsampleEmbedder {
    fn default() -> Self {
        Self { cells: 8 }
    }
}

impl DownsampleEmbedder {
    pub fn embed_patch(&self, patch: &Patch) -> Result<Vec<f32>> {
        let (h, w) = patch.values_db.dim();
        let c = self.cells;
        if c == 0 || h % c != 0 || w % c != 0 {
            return Err(Error::InvalidParameter(format!(
                "patch {h}x{w} is not divisible into {c}x{c} cells"
            )));
        }
        let (bh, bw) = (h / c, w / c);
        let mut out = Vec::with_capacity(c * c);
        for by in 0..c {
            for bx in 0..c {
                let block = patch
                    .values_db
                    .slice(ndarray::s![by * bh..(by + 1) * bh, bx * bw..(bx + 1) * bw]);
                out.push(block.mean().unwrap_or(0.0) as f32);
            }
        }
        Ok(out)
    }
}

impl PatchEmbedder for DownsampleEmbedder {
    fn extractor_id(&self) -> &str {
        "downsample"
    }

    fn dim(&self) -> usize {
        self.cells * self.cells
    }

    fn orientation(&self) -> Orientation {
        Orientation::LowAtTop
    }

    fn fingerprint(&self) -> Vec<u8> {
        format!("downsample:{}", self.cells).into_bytes()
    }

    fn embed_clip(&self, _mel: &MelSpectrogram, patches: &[Patch]) -> Result<Array2<f32>> {
        let mut out = Array2::zeros((patches.len(), self.dim()));
        for (i, p) in patches.iter().enumerate() {
            let row = self.embed_patch(p)?;
            out.row_mut(i).assign(&Array1::from(row));
        }
        Ok(out)
    }
}

/// Provenance of one feature row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId {
    pub clip_id: Arc<str>,
    pub frame_offset: u32,
}

/// `N × d` features; rows sorted by clip id, then frame offset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f32>,
    pub rows: Vec<RowId>,
    pub extractor_id: String,
    pub standardized: bool,
    pub orientation: Orientation,
}

impl FeatureMatrix {
    pub fn empty(extractor_id: &str, dim: usize, orientation: Orientation) -> Self {
        Self {
            values: Array2::zeros((0, dim)),
            rows: Vec::new(),
            extractor_id: extractor_id.to_string(),
            standardized: false,
            orientation,
        }
    }

    /// Assembles per-clip blocks into one matrix in canonical row order.
    pub fn from_clips(
        extractor_id: &str,
        dim: usize,
        orientation: Orientation,
        clips: Vec<(Arc<str>, Vec<u32>, Array2<f32>)>,
    ) -> Result<Self> {
        let mut rows: Vec<(RowId, usize, usize)> = Vec::new();
        for (ci, (clip, offsets, block)) in clips.iter().enumerate() {
            if block.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: block.ncols() });
            }
            if offsets.len() != block.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: block.nrows(),
                    found: offsets.len(),
                });
            }
            for (ri, &off) in offsets.iter().enumerate() {
                rows.push((
                    RowId { clip_id: Arc::clone(clip), frame_offset: off },
                    ci,
                    ri,
                ));
            }
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let mut values = Array2::zeros((rows.len(), dim));
        for (i, (_, ci, ri)) in rows.iter().enumerate() {
            values.row_mut(i).assign(&clips[*ci].2.row(*ri));
        }
        Ok(Self {
            values,
            rows: rows.into_iter().map(|r| r.0).collect(),
            extractor_id: extractor_id.to_string(),
            standardized: false,
            orientation,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    /// Rows whose clip id satisfies `keep`, preserving order.
    pub fn select_clips(&self, keep: impl Fn(&str) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.rows.len()).filter(|&i| keep(&self.rows[i].clip_id)).collect();
        Self {
            values: self.values.select(Axis(0), &idx),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            extractor_id: self.extractor_id.clone(),
            standardized: self.standardized,
            orientation: self.orientation,
        }
    }

    pub fn clip_ids(&self) -> Vec<Arc<str>> {
        let mut ids: Vec<Arc<str>> = self.rows.iter().map(|r| Arc::clone(&r.clip_id)).collect();
        ids.dedup();
        ids
    }
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::NotEnoughSamples { required: 2, found: n });
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let var = x.var_axis(Axis(0), 0.0);
        let std = var.mapv(|v| v.sqrt().max(STD_FLOOR));
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.ncols() });
        }
        Ok((&x - &self.mean) / &self.std)
    }

    pub fn inverse_transform(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: z.ncols() });
        }
        Ok(&z * &self.std + &self.mean)
    }
}

pub fn fit_standardizer(train: &FeatureMatrix) -> Result<Standardizer> {
    if train.standardized {
        return Err(Error::InvalidParameter("feature matrix is already standardized".into()));
    }
    Standardizer::fit(train.to_f64().view())
}

pub fn apply_standardizer(s: &Standardizer, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    let z = s.transform(m.to_f64().view())?;
    Ok(FeatureMatrix {
        values: z.mapv(|v| v as f32),
        rows: m.rows.clone(),
        extractor_id: m.extractor_id.clone(),
        standardized: true,
        orientation: m.orientation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::extract_patches;
    use crate::rng::SplitMix64;
    use ndarray::array;

    #[test]
    fn standardizer_two_point() {
        let x = array![[0.0, 5.0], [2.0, 5.0]];
        let s = Standardizer::fit(x.view()).unwrap();
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.std[1], STD_FLOOR);
        assert!(Standardizer::fit(array![[1.0]].view()).is_err());
    }

    #[test]
    fn standardizer_centres_and_inverts() {
        let mut rng = SplitMix64::new(4);
        let x = Array2::from_shape_fn((50, 6), |(_, j)| rng.normal() * (j + 1) as f64 + 3.0 * j as f64);
        let s = Standardizer::fit(x.view()).unwrap();
        let z = s.transform(x.view()).unwrap();
        for m in z.mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() < 1e-9);
        }
        let back = s.inverse_transform(z.view()).unwrap();
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        let id = Standardizer::identity(6);
        assert_eq!(id.transform(x.view()).unwrap(), x);
        assert!(s.transform(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn apply_uses_training_statistics() {
        let train = FeatureMatrix {
            values: array![[0.0f32], [2.0]],
            rows: vec![
                RowId { clip_id: Arc::from("a"), frame_offset: 0 },
                RowId { clip_id: Arc::from("a"), frame_offset: 32 },
            ],
            extractor_id: "x".into(),
            standardized: false,
            orientation: Orientation::LowAtBottom,
        };
        let s = fit_standardizer(&train).unwrap();
        let test = FeatureMatrix { values: array![[1.0f32], [3.0]], ..train.clone() };
        let z = apply_standardizer(&s, &test).unwrap();
        assert!(z.standardized);
        assert_eq!(z.values, array![[0.0f32], [2.0]]);
        assert!(fit_standardizer(&z).is_err());
    }

    #[test]
    fn from_clips_orders_rows() {
        let block = |v: f32| Array2::from_elem((2, 3), v);
        let m = FeatureMatrix::from_clips(
            "x",
            3,
            Orientation::LowAtBottom,
            vec![
                (Arc::from("b"), vec![32, 0], block(2.0)),
                (Arc::from("a"), vec![0, 32], block(1.0)),
            ],
        )
        .unwrap();
        let ids: Vec<(&str, u32)> = m.rows.iter().map(|r| (&*r.clip_id, r.frame_offset)).collect();
        assert_eq!(ids, vec![("a", 0), ("a", 32), ("b", 0), ("b", 32)]);
        assert_eq!(m.values[[2, 0]], 2.0);
        assert_eq!(m.clip_ids().len(), 2);
        let only_b = m.select_clips(|c| c == "b");
        assert_eq!(only_b.n_rows(), 2);
    }

    #[test]
    fn downsample_block_means() {
        let mel = MelSpectrogram {
            values_db: Array2::from_shape_fn((64, 64), |(r, c)| (r / 8 * 8 + c / 8) as f64),
            ref_db: 0.0,
            top_db: 80.0,
        };
        let patches = extract_patches(&mel, "c", 64, 32).unwrap();
        let e = DownsampleEmbedder::default();
        let f = e.embed_clip(&mel, &patches).unwrap();
        assert_eq!(f.dim(), (1, 64));
        assert_eq!(f[[0, 0]], 0.0);
        assert_eq!(f[[0, 9]], 9.0);
        assert_eq!(f[[0, 63]], 63.0);
    }

    #[test]
    fn spec_dims() {
        assert_eq!(ExtractorId::AlexNet.expected_dim(), 4096);
        assert_eq!(ExtractorId::ResNet18.expected_dim(), 512);
        assert_eq!(ExtractorId::ResNet34.expected_dim(), 512);
        assert_eq!(ExtractorId::SqueezeNet.expected_dim(), 2048);
        let mut spec = EmbeddingBackendSpec::new(ExtractorId::ResNet18, "g.onnx", "input", "features");
        assert!(spec.validate().is_ok());
        spec.expected_dim = 1000;
        assert!(spec.validate().is_err());
    }
}
