//! Variational Bayesian Gaussian mixture: mean-field coordinate ascent with a
//! symmetric Dirichlet prior on the weights and independent Normal-Gamma
//! priors on every (mean, precision) pair.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::kmeans::{column_moments, kmeans_init, KMeansConfig};
use super::{check_finite, logsumexp};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VbGmmConfig {
    /// Truncation level of the mixture.
    pub n_components: usize,
    pub max_iter: usize,
    /// Convergence threshold on the change of the per-sample bound.
    pub tol: f64,
    /// Dirichlet concentration; `None` means `1 / n_components`.
    pub weight_concentration: Option<f64>,
    pub mean_precision: f64,
    pub gamma_shape: f64,
    pub kmeans: KMeansConfig,
}

impl Default for VbGmmConfig {
    fn default() -> Self {
        Self {
            n_components: 80,
            max_iter: 150,
            tol: 1e-3,
            weight_concentration: None,
            mean_precision: 1.0,
            gamma_shape: 1.0,
            kmeans: KMeansConfig::default(),
        }
    }
}

impl VbGmmConfig {
    pub fn with_components(n_components: usize) -> Self {
        Self { n_components, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbPrior {
    pub alpha0: f64,
    pub beta0: f64,
    pub a0: f64,
    pub m0: Array1<f64>,
    pub b0: Array1<f64>,
}

/// Posterior hyperparameters: `Dir(alpha)` on the weights and, per component
/// and dimension, `λ ~ Gamma(a_k, b_kj)`, `μ | λ ~ N(m_kj, 1/(β_k λ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct VbGmmModel {
    pub prior: VbPrior,
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    pub a: Array1<f64>,
    pub m: Array2<f64>,
    pub b: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct VbGmmFit {
    pub model: VbGmmModel,
    /// Evidence lower bound (total, not per sample) after every E-step.
    pub elbo: Vec<f64>,
    pub converged: bool,
}

impl VbGmmModel {
    pub fn n_components(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.m.ncols()
    }

    /// Posterior-mean mixture weights.
    pub fn weights(&self) -> Array1<f64> {
        &self.alpha / self.alpha.sum()
    }

    /// Components whose posterior-mean weight exceeds `threshold`.
    pub fn effective_components(&self, threshold: f64) -> usize {
        self.weights().iter().filter(|&&w| w > threshold).count()
    }

    /// `ln p(x)` under the posterior predictive (Student-t per dimension).
    pub fn log_predictive(&self, x: ArrayView1<f64>) -> f64 {
        let w = self.weights();
        let terms: Vec<f64> = (0..self.n_components())
            .map(|k| {
                let (a, beta) = (self.a[k], self.beta[k]);
                let nu = 2.0 * a;
                let head = ln_gamma(a + 0.5) - ln_gamma(a) - 0.5 * (nu * PI).ln();
                let mut lp = w[k].ln();
                for j in 0..x.len() {
                    let s2 = self.b[[k, j]] * (beta + 1.0) / (a * beta);
                    let z = (x[j] - self.m[[k, j]]).powi(2) / (nu * s2);
                    lp += head - 0.5 * s2.ln() - (a + 0.5) * z.ln_1p();
                }
                lp
            })
            .collect();
        logsumexp(terms)
    }

    pub(crate) fn score_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        -self.log_predictive(x)
    }
}

/// `ln ρ_nk`: expected log joint of point n under component k.
fn log_rho(model: &VbGmmModel, x: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let k = model.n_components();
    let dig_sum = digamma(model.alpha.sum());
    let mut out = Array2::zeros((n, k));
    for c in 0..k {
        let a = model.a[c];
        let dig_a = digamma(a);
        let mut head = digamma(model.alpha[c]) - dig_sum;
        let mut prec = Array1::zeros(d);
        for j in 0..d {
            let b = model.b[[c, j]];
            head += 0.5 * (dig_a - b.ln()) - 0.5 * (2.0 * PI).ln() - 0.5 / model.beta[c];
            prec[j] = a / b;
        }
        for (i, row) in x.outer_iter().enumerate() {
            let mut q = 0.0;
            for j in 0..d {
                let diff = row[j] - model.m[[c, j]];
                q += prec[j] * diff * diff;
            }
            out[[i, c]] = head - 0.5 * q;
        }
    }
    out
}

fn kl_gamma(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    (a - a0) * digamma(a) - ln_gamma(a) + ln_gamma(a0) + a0 * (b.ln() - b0.ln()) + a * (b0 - b) / b
}

fn kl_dirichlet(alpha: &Array1<f64>, alpha0: f64) -> f64 {
    let k = alpha.len() as f64;
    let sum = alpha.sum();
    let dig_sum = digamma(sum);
    let mut kl = ln_gamma(sum) - ln_gamma(k * alpha0);
    for &al in alpha {
        kl += ln_gamma(alpha0) - ln_gamma(al) + (al - alpha0) * (digamma(al) - dig_sum);
    }
    kl
}

/// Σ over components and dimensions of KL(q(μ,λ) ‖ p(μ,λ)).
fn kl_normal_gamma(model: &VbGmmModel) -> f64 {
    let p = &model.prior;
    let mut kl = 0.0;
    for c in 0..model.n_components() {
        let (a, beta) = (model.a[c], model.beta[c]);
        for j in 0..model.dim() {
            let b = model.b[[c, j]];
            let dm = model.m[[c, j]] - p.m0[j];
            kl += kl_gamma(a, b, p.a0, p.b0[j]);
            kl += 0.5 * ((beta / p.beta0).ln() + p.beta0 / beta - 1.0 + p.beta0 * (a / b) * dm * dm);
        }
    }
    kl
}

/// Normalises `ln ρ` into responsibilities in place; returns `Σ_n lse_k ln ρ`.
fn normalise(log_rho: &mut Array2<f64>) -> f64 {
    let mut total = 0.0;
    for mut row in log_rho.outer_iter_mut() {
        let lse = logsumexp(row.to_vec());
        total += lse;
        row.mapv_inplace(|v| (v - lse).exp());
    }
    total
}

fn update(resp: &Array2<f64>, x: ArrayView2<f64>, prior: &VbPrior) -> VbGmmModel {
    let nk = resp.sum_axis(Axis(0));
    let k = nk.len();
    let d = x.ncols();
    let sx = resp.t().dot(&x);
    let mut m = Array2::zeros((k, d));
    let mut b = Array2::zeros((k, d));
    let beta = nk.mapv(|v| prior.beta0 + v);
    let alpha = nk.mapv(|v| prior.alpha0 + v);
    let a = nk.mapv(|v| prior.a0 + 0.5 * v);
    for c in 0..k {
        let mut xbar = Array1::zeros(d);
        let mut s = Array1::zeros(d);
        if nk[c] > 0.0 {
            xbar = &sx.row(c) / nk[c];
            for (i, row) in x.outer_iter().enumerate() {
                let r = resp[[i, c]];
                if r > 0.0 {
                    for j in 0..d {
                        let diff = row[j] - xbar[j];
                        s[j] += r * diff * diff;
                    }
                }
            }
            s /= nk[c];
        }
        for j in 0..d {
            m[[c, j]] = (prior.beta0 * prior.m0[j] + nk[c] * xbar[j]) / beta[c];
            let dm = xbar[j] - prior.m0[j];
            b[[c, j]] = prior.b0[j] + 0.5 * (nk[c] * s[j] + prior.beta0 * nk[c] * dm * dm / beta[c]);
        }
    }
    VbGmmModel { prior: prior.clone(), alpha, beta, a, m, b }
}

pub fn vbgmm_fit(x: ArrayView2<f64>, cfg: &VbGmmConfig, seed: u64) -> Result<VbGmmFit> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(Error::EmptyInput("training features"));
    }
    let k = cfg.n_components;
    let alpha0 = cfg.weight_concentration.unwrap_or(1.0 / k.max(1) as f64);
    if !(alpha0 > 0.0) || !(cfg.mean_precision > 0.0) || !(cfg.gamma_shape > 0.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidParameter(format!("vbgmm config {cfg:?}")));
    }
    check_finite(x)?;
    let (m0, var) = column_moments(x, 1e-6);
    let prior = VbPrior {
        alpha0,
        beta0: cfg.mean_precision,
        a0: cfg.gamma_shape,
        b0: var.mapv(|v| cfg.gamma_shape * v),
        m0,
    };
    let mut rng = SplitMix64::new(seed);
    let km = kmeans_init(x, k, &cfg.kmeans, &mut rng)?;
    let mut resp = Array2::zeros((n, k));
    for (i, &l) in km.labels.iter().enumerate() {
        resp[[i, l]] = 1.0;
    }
    let mut model = update(&resp, x, &prior);
    let mut elbo = Vec::new();
    let mut converged = false;
    for it in 0..cfg.max_iter {
        let mut r = log_rho(&model, x);
        let data_term = normalise(&mut r);
        let bound = data_term - kl_dirichlet(&model.alpha, prior.alpha0) - kl_normal_gamma(&model);
        if !bound.is_finite() {
            return Err(Error::NonFinite("variational bound"));
        }
        let delta = elbo.last().map(|p: &f64| (bound - p).abs() / n as f64);
        elbo.push(bound);
        if it > 0 && delta.is_some_and(|dl| dl < cfg.tol) {
            converged = true;
            break;
        }
        if it + 1 == cfg.max_iter {
            break;
        }
        model = update(&r, x, &prior);
    }
    if !converged {
        log::warn!("vbgmm: stopped after {} iterations without reaching tol {}", cfg.max_iter, cfg.tol);
    }
    Ok(VbGmmFit { model, elbo, converged })
}
