//! One-class anomaly detectors sharing one contract: fit on normal features
//! only, then score where a higher value means more anomalous.

pub mod gmm;
pub mod iforest;
mod io;
pub mod kde;
pub mod kmeans;
pub mod ocsvm;
pub mod vbgmm;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gmm::{gmm_fit, GmmConfig, GmmModel};
pub use iforest::{average_path_length, iforest_fit, IsoForestConfig, IsoForestModel};
pub use io::{load_model, read_model, save_model, write_model, SavedModel, MODEL_MAGIC, MODEL_VERSION};
pub use kde::{KdeConfig, KdeModel};
pub use kmeans::{kmeans_init, KMeansConfig};
pub use ocsvm::{ocsvm_fit, ocsvm_fit_report, Gamma, OcSvmConfig, OcSvmModel, OcSvmReport};
pub use vbgmm::{vbgmm_fit, VbGmmConfig, VbGmmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gmm,
    VbGmm,
    IsoForest,
    OcSvm,
    Kde,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [Self::Gmm, Self::VbGmm, Self::IsoForest, Self::OcSvm, Self::Kde];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gmm => "gmm",
            Self::VbGmm => "vbgmm",
            Self::IsoForest => "isoforest",
            Self::OcSvm => "ocsvm",
            Self::Kde => "kde",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::Gmm => "GMM",
            Self::VbGmm => "B-GMM",
            Self::IsoForest => "IF",
            Self::OcSvm => "OC-SVM",
            Self::Kde => "KDE",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Self::Gmm => 1,
            Self::VbGmm => 2,
            Self::IsoForest => 3,
            Self::OcSvm => 4,
            Self::Kde => 5,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| Error::Format(format!("unknown model kind tag {tag}")))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmm" => Ok(Self::Gmm),
            "vbgmm" | "b-gmm" | "bgmm" => Ok(Self::VbGmm),
            "isoforest" | "iforest" | "if" => Ok(Self::IsoForest),
            "ocsvm" | "oc-svm" => Ok(Self::OcSvm),
            "kde" => Ok(Self::Kde),
            _ => Err(Error::InvalidParameter(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Hyperparameters for every detector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub gmm: GmmConfig,
    pub vbgmm: VbGmmConfig,
    pub iforest: IsoForestConfig,
    pub ocsvm: OcSvmConfig,
    pub kde: KdeConfig,
}

/// A fitted detector.
#[derive(Debug, Clone, PartialEq)]
pub enum AnomalyModel {
    Gmm(GmmModel),
    VbGmm(VbGmmModel),
    IsoForest(IsoForestModel),
    OcSvm(OcSvmModel),
    Kde(KdeModel),
}

impl AnomalyModel {
    pub fn fit(kind: ModelKind, x: ArrayView2<f64>, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Gmm => Self::Gmm(gmm_fit(x, &cfg.gmm, seed)?.model),
            ModelKind::VbGmm => Self::VbGmm(vbgmm_fit(x, &cfg.vbgmm, seed)?.model),
            ModelKind::IsoForest => Self::IsoForest(iforest_fit(x, &cfg.iforest, seed)?),
            ModelKind::OcSvm => Self::OcSvm(ocsvm_fit(x, &cfg.ocsvm, seed)?),
            ModelKind::Kde => Self::Kde(KdeModel::fit(x, &cfg.kde)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Gmm(_) => ModelKind::Gmm,
            Self::VbGmm(_) => ModelKind::VbGmm,
            Self::IsoForest(_) => ModelKind::IsoForest,
            Self::OcSvm(_) => ModelKind::OcSvm,
            Self::Kde(_) => ModelKind::Kde,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gmm(m) => m.dim(),
            Self::VbGmm(m) => m.dim(),
            Self::IsoForest(m) => m.dim,
            Self::OcSvm(m) => m.dim(),
            Self::Kde(m) => m.dim(),
        }
    }

    fn score_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            Self::Gmm(m) => m.score_unchecked(x),
            Self::VbGmm(m) => m.score_unchecked(x),
            Self::IsoForest(m) => m.score_unchecked(x),
            Self::OcSvm(m) => m.score_unchecked(x),
            Self::Kde(m) => m.score_unchecked(x),
        }
    }

    /// Anomaly score of one feature vector.
    pub fn score(&self, x: ArrayView1<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.score_unchecked(x))
    }

    /// Scores every row, in parallel; order is preserved.
    pub fn score_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        check_dim(self.dim(), x.ncols())?;
        let rows: Vec<ArrayView1<f64>> = x.rows().into_iter().collect();
        Ok(rows.par_iter().map(|r| self.score_unchecked(*r)).collect::<Vec<_>>().into())
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn check_finite(x: ArrayView2<f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features"));
    }
    Ok(())
}

/// `ln Σ exp(v)`, stable for large magnitudes; `-inf` for empty or all `-inf`.
pub fn logsumexp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_is_stable() {
        assert_eq!(logsumexp([f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = logsumexp([1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let v = logsumexp([-1e5, -1e5 - 1.0]);
        assert!((v - (-1e5 + (1.0 + (-1f64).exp()).ln())).abs() < 1e-9);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
            assert_eq!(ModelKind::from_tag(k.tag()).unwrap(), k);
        }
        assert_eq!("OC-SVM".parse::<ModelKind>().unwrap(), ModelKind::OcSvm);
        assert_eq!("B-GMM".parse::<ModelKind>().unwrap(), ModelKind::VbGmm);
    }
}
