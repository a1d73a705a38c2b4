//! Isotropic Gaussian kernel density estimate.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::logsumexp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdeConfig {
    pub bandwidth: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self { bandwidth: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    pub points: Array2<f64>,
    pub bandwidth: f64,
}

impl KdeModel {
    pub fn fit(x: ArrayView2<f64>, cfg: &KdeConfig) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::EmptyInput("training features"));
        }
        if !(cfg.bandwidth > 0.0 && cfg.bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth {}", cfg.bandwidth)));
        }
        super::check_finite(x)?;
        Ok(Self {
            points: x.to_owned(),
            bandwidth: cfg.bandwidth,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn log_density(&self, x: ArrayView1<f64>) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        let n = self.points.nrows() as f64;
        let d = self.dim() as f64;
        let exps: Vec<f64> = self
            .points
            .outer_iter()
            .map(|p| {
                let q: f64 = p.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                -q / (2.0 * h2)
            })
            .collect();
        logsumexp(exps) - n.ln() - 0.5 * d * (2.0 * PI * h2).ln()
    }

    pub(crate) fn score_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        -self.log_density(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_point_at_its_mean() {
        let m = KdeModel::fit(array![[0.3]].view(), &KdeConfig::default()).unwrap();
        let s = m.score_unchecked(array![0.3].view());
        assert!((s - 0.5 * (2.0 * PI * 0.01).ln()).abs() < 1e-12);
        assert!((s - -1.383_646_559_789_373).abs() < 1e-9, "{s}");
    }

    #[test]
    fn far_query_is_finite() {
        let m = KdeModel::fit(array![[0.0, 0.0], [1.0, 1.0]].view(), &KdeConfig::default()).unwrap();
        let s = m.score_unchecked(array![1e4, -1e4].view());
        assert!(s.is_finite() && s > 1e9);
    }

    #[test]
    fn rejects_bad_bandwidth() {
        let x = array![[0.0]];
        assert!(KdeModel::fit(x.view(), &KdeConfig { bandwidth: 0.0 }).is_err());
        assert!(KdeModel::fit(x.view(), &KdeConfig { bandwidth: f64::NAN }).is_err());
    }
}
