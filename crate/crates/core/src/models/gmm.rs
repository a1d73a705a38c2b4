//! Diagonal-covariance Gaussian mixture fitted by expectation-maximisation.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_init, KMeansConfig};
use super::{check_finite, logsumexp};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub n_components: usize,
    pub max_iter: usize,
    /// Convergence threshold on the change of the mean log-likelihood.
    pub tol: f64,
    /// Lower bound applied to every variance.
    pub reg: f64,
    pub kmeans: KMeansConfig,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            n_components: 80,
            max_iter: 150,
            tol: 1e-3,
            reg: 1e-6,
            kmeans: KMeansConfig::default(),
        }
    }
}

impl GmmConfig {
    pub fn with_components(n_components: usize) -> Self {
        Self { n_components, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Array1<f64>,
    pub means: Array2<f64>,
    pub vars: Array2<f64>,
    pub reg: f64,
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean log-likelihood after every E-step.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// `ln w_k - ½ Σ_j ln(2π σ²_kj)` per component.
    fn log_norms(&self) -> Array1<f64> {
        Array1::from_iter(self.vars.outer_iter().zip(self.weights.iter()).map(|(v, &w)| {
            w.ln() - 0.5 * v.iter().map(|s| (2.0 * PI * s).ln()).sum::<f64>()
        }))
    }

    /// `ln p(x)` under the mixture.
    pub fn log_density(&self, x: ArrayView1<f64>) -> f64 {
        let norms = self.log_norms();
        self.log_density_with(x, &norms)
    }

    fn log_density_with(&self, x: ArrayView1<f64>, norms: &Array1<f64>) -> f64 {
        let terms = (0..self.n_components()).map(|k| {
            if self.weights[k] == 0.0 {
                return f64::NEG_INFINITY;
            }
            let q: f64 = Zip::from(x)
                .and(self.means.row(k))
                .and(self.vars.row(k))
                .fold(0.0, |acc, &xi, &m, &v| acc + (xi - m) * (xi - m) / v);
            norms[k] - 0.5 * q
        });
        logsumexp(terms.collect::<Vec<_>>())
    }

    pub(crate) fn score_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        -self.log_density(x)
    }

    /// Per-row `ln w_k + ln N(x | k)` using the expanded quadratic form.
    fn weighted_log_prob(&self, x: ArrayView2<f64>, x_sq: &Array2<f64>) -> Array2<f64> {
        let prec = self.vars.mapv(|v| 1.0 / v);
        let mp = &self.means * &prec;
        let c: Array1<f64> = (&mp * &self.means).sum_axis(Axis(1));
        let mut lp = x_sq.dot(&prec.t());
        lp.scaled_add(-2.0, &x.dot(&mp.t()));
        let norms = self.log_norms();
        for (k, mut col) in lp.axis_iter_mut(Axis(1)).enumerate() {
            let off = norms[k] - 0.5 * c[k];
            if self.weights[k] == 0.0 {
                col.fill(f64::NEG_INFINITY);
            } else {
                col.mapv_inplace(|q| off - 0.5 * q);
            }
        }
        lp
    }
}

/// E-step: responsibilities and mean log-likelihood.
fn e_step(model: &GmmModel, x: ArrayView2<f64>, x_sq: &Array2<f64>) -> (Array2<f64>, f64) {
    let mut lp = model.weighted_log_prob(x, x_sq);
    let mut total = 0.0;
    for mut row in lp.outer_iter_mut() {
        let lse = logsumexp(row.iter().copied().collect::<Vec<_>>());
        total += lse;
        row.mapv_inplace(|v| (v - lse).exp());
    }
    (lp, total / x.nrows() as f64)
}

/// M-step with variances clamped below at `reg`.
fn m_step(resp: &Array2<f64>, x: ArrayView2<f64>, x_sq: &Array2<f64>, reg: f64, prev: Option<&GmmModel>) -> GmmModel {
    let n = x.nrows() as f64;
    let nk = resp.sum_axis(Axis(0));
    let sx = resp.t().dot(&x);
    let sxx = resp.t().dot(x_sq);
    let (k, d) = (nk.len(), x.ncols());
    let mut means = Array2::zeros((k, d));
    let mut vars = Array2::from_elem((k, d), 1.0);
    let mut weights = Array1::zeros(k);
    for c in 0..k {
        if nk[c] <= 0.0 {
            if let Some(p) = prev {
                means.row_mut(c).assign(&p.means.row(c));
                vars.row_mut(c).assign(&p.vars.row(c));
            }
            continue;
        }
        weights[c] = nk[c] / n;
        for j in 0..d {
            let m = sx[[c, j]] / nk[c];
            means[[c, j]] = m;
            vars[[c, j]] = (sxx[[c, j]] / nk[c] - m * m).max(reg);
        }
    }
    GmmModel { weights, means, vars, reg }
}

pub fn gmm_fit(x: ArrayView2<f64>, cfg: &GmmConfig, seed: u64) -> Result<GmmFit> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(Error::EmptyInput("training features"));
    }
    if !(cfg.reg > 0.0) || !(cfg.tol >= 0.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidParameter(format!("gmm config {cfg:?}")));
    }
    check_finite(x)?;
    let k = cfg.n_components;
    let mut rng = SplitMix64::new(seed);
    let km = kmeans_init(x, k, &cfg.kmeans, &mut rng)?;
    let x_sq = x.mapv(|v| v * v);
    let mut resp = Array2::zeros((n, k));
    for (i, &l) in km.labels.iter().enumerate() {
        resp[[i, l]] = 1.0;
    }
    let mut model = m_step(&resp, x, &x_sq, cfg.reg, None);
    let mut trace = Vec::new();
    let mut converged = false;
    for it in 0..cfg.max_iter {
        let (r, ll) = e_step(&model, x, &x_sq);
        if !ll.is_finite() {
            return Err(Error::NonFinite("gmm log-likelihood"));
        }
        let delta = trace.last().map(|p: &f64| (ll - p).abs());
        trace.push(ll);
        if it > 0 && delta.is_some_and(|dl| dl < cfg.tol) {
            converged = true;
            break;
        }
        if it + 1 == cfg.max_iter {
            break;
        }
        model = m_step(&r, x, &x_sq, cfg.reg, Some(&model));
    }
    if !converged {
        log::warn!("gmm: stopped after {} iterations without reaching tol {}", cfg.max_iter, cfg.tol);
    }
    Ok(GmmFit {
        model,
        log_likelihood: trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_component_on_two_points() {
        let x = array![[0.0], [2.0]];
        let fit = gmm_fit(x.view(), &GmmConfig::with_components(1), 0).unwrap();
        let m = &fit.model;
        assert_eq!(m.weights[0], 1.0);
        assert!((m.means[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((m.vars[[0, 0]] - 1.0).abs() < 1e-12);
        let s = m.score_unchecked(array![0.0].view());
        assert!((s - 1.418_938_533_204_672_7).abs() < 1e-12, "{s}");
    }

    #[test]
    fn standard_normal_score_at_origin() {
        let m = GmmModel {
            weights: array![1.0],
            means: array![[0.0]],
            vars: array![[1.0]],
            reg: 1e-6,
        };
        assert!((m.score_unchecked(array![0.0].view()) - 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn two_clusters_get_half_weight() {
        let mut rng = SplitMix64::new(4);
        let x = Array2::from_shape_fn((400, 2), |(i, _)| {
            (if i % 2 == 0 { -5.0 } else { 5.0 }) + 0.3 * rng.normal()
        });
        let fit = gmm_fit(x.view(), &GmmConfig::with_components(2), 1).unwrap();
        for w in fit.model.weights.iter() {
            assert!((w - 0.5).abs() < 1e-6, "{w}");
        }
        assert!(fit.converged);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let mut rng = SplitMix64::new(11);
        let x = Array2::from_shape_fn((300, 4), |_| rng.normal() * 2.0);
        let fit = gmm_fit(x.view(), &GmmConfig { tol: 0.0, max_iter: 60, ..GmmConfig::with_components(6) }, 2).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn variance_floor_holds_for_duplicates() {
        let x = Array2::from_elem((20, 3), 0.5);
        let fit = gmm_fit(x.view(), &GmmConfig::with_components(2), 0).unwrap();
        assert!(fit.model.vars.iter().all(|&v| v >= 1e-6));
        assert!(fit.model.score_unchecked(x.row(0)).is_finite());
    }

    #[test]
    fn rejects_bad_input() {
        let x = array![[0.0, f64::NAN], [1.0, 1.0]];
        assert!(matches!(gmm_fit(x.view(), &GmmConfig::with_components(1), 0), Err(Error::NonFinite(_))));
        let x = Array2::<f64>::zeros((3, 2));
        assert!(matches!(
            gmm_fit(x.view(), &GmmConfig::with_components(4), 0),
            Err(Error::NotEnoughSamples { .. })
        ));
    }

    #[test]
    fn far_query_is_finite() {
        let x = array![[0.0], [1.0], [2.0]];
        let fit = gmm_fit(x.view(), &GmmConfig::with_components(1), 0).unwrap();
        let s = fit.model.score_unchecked(array![1e3].view());
        assert!(s.is_finite() && s > 1e5);
    }
}
