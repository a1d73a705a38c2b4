//! ν one-class SVM with an RBF kernel, solved in the dual by sequential
//! pairwise updates with second-order working-set selection.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const TAU: f64 = 1e-12;

/// RBF width. `Scale` resolves to `1 / (d · Var(X))` over all entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GammaRepr", into = "GammaRepr")]
pub enum Gamma {
    Scale,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<GammaRepr> for Gamma {
    type Error = String;

    fn try_from(r: GammaRepr) -> std::result::Result<Self, String> {
        match r {
            GammaRepr::Value(v) if v > 0.0 && v.is_finite() => Ok(Gamma::Value(v)),
            GammaRepr::Value(v) => Err(format!("gamma must be positive, got {v}")),
            GammaRepr::Name(s) if s == "scale" || s == "auto" => Ok(Gamma::Scale),
            GammaRepr::Name(s) => Err(format!("unknown gamma {s:?}")),
        }
    }
}

impl From<Gamma> for GammaRepr {
    fn from(g: Gamma) -> Self {
        match g {
            Gamma::Scale => GammaRepr::Name("scale".into()),
            Gamma::Value(v) => GammaRepr::Value(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcSvmConfig {
    pub nu: f64,
    pub gamma: Gamma,
    /// Stopping threshold on the maximal KKT violation.
    pub tol: f64,
    /// Cap on pair updates.
    pub max_iter: usize,
    /// Kernel column cache budget in MiB.
    pub cache_mb: usize,
}

impl Default for OcSvmConfig {
    fn default() -> Self {
        Self {
            nu: 1e-4,
            gamma: Gamma::Scale,
            tol: 1e-3,
            max_iter: 100_000,
            cache_mb: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcSvmModel {
    pub support_vectors: Array2<f64>,
    pub alphas: Array1<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
}

/// Solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct OcSvmReport {
    pub iterations: usize,
    /// `max_{α>0} ∇ − min_{α<C} ∇`, recomputed from the final model.
    pub violation: f64,
    /// Upper bound `1 / (ν N)` on every α.
    pub upper: f64,
    /// Full dual vector over the training set.
    pub dual: Array1<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl OcSvmModel {
    pub fn dim(&self) -> usize {
        self.support_vectors.ncols()
    }

    pub fn n_support(&self) -> usize {
        self.alphas.len()
    }

    /// `Σ α_i k(sv_i, x)`.
    pub fn kernel_sum(&self, x: ArrayView1<f64>) -> f64 {
        self.support_vectors
            .outer_iter()
            .zip(self.alphas.iter())
            .map(|(sv, &a)| a * (-self.gamma * sq_dist(sv, x)).exp())
            .sum()
    }

    /// Signed distance to the boundary; negative outside.
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        self.kernel_sum(x) - self.rho
    }

    pub(crate) fn score_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        -self.decision(x)
    }
}

pub fn resolve_gamma(x: ArrayView2<f64>, gamma: Gamma) -> f64 {
    match gamma {
        Gamma::Value(g) => g,
        Gamma::Scale => {
            let n = x.len() as f64;
            let mean = x.sum() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            if var > 0.0 {
                1.0 / (x.ncols() as f64 * var)
            } else {
                1.0
            }
        }
    }
}

struct KernelCache<'a> {
    x: ArrayView2<'a, f64>,
    norms: Vec<f64>,
    gamma: f64,
    cols: HashMap<usize, Arc<[f64]>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(x: ArrayView2<'a, f64>, gamma: f64, cache_mb: usize) -> Self {
        let norms = x.outer_iter().map(|r| r.dot(&r)).collect();
        let capacity = ((cache_mb << 20) / (8 * x.nrows().max(1))).max(2);
        Self {
            x,
            norms,
            gamma,
            cols: HashMap::new(),
            order: VecDeque::new(),
            capacity,
        }
    }

    fn column(&mut self, i: usize) -> Arc<[f64]> {
        if let Some(c) = self.cols.get(&i) {
            return Arc::clone(c);
        }
        let dots = self.x.dot(&self.x.row(i));
        let ni = self.norms[i];
        let col: Arc<[f64]> = dots
            .iter()
            .zip(self.norms.iter())
            .enumerate()
            .map(|(j, (&dp, &nj))| {
                if j == i {
                    1.0
                } else {
                    (-self.gamma * (ni + nj - 2.0 * dp).max(0.0)).exp()
                }
            })
            .collect();
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.cols.remove(&old);
            }
        }
        self.order.push_back(i);
        self.cols.insert(i, Arc::clone(&col));
        col
    }
}

pub fn ocsvm_fit(x: ArrayView2<f64>, cfg: &OcSvmConfig, seed: u64) -> Result<OcSvmModel> {
    ocsvm_fit_report(x, cfg, seed).map(|(m, _)| m)
}

pub fn ocsvm_fit_report(x: ArrayView2<f64>, cfg: &OcSvmConfig, seed: u64) -> Result<(OcSvmModel, OcSvmReport)> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::NotEnoughSamples { required: 2, found: n });
    }
    if d == 0 || !(cfg.nu > 0.0 && cfg.nu <= 1.0) || !(cfg.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("one-class svm config {cfg:?}")));
    }
    super::check_finite(x)?;
    let gamma = resolve_gamma(x, cfg.gamma);
    let upper = 1.0 / (cfg.nu * n as f64);
    let mut cache = KernelCache::new(x, gamma, cfg.cache_mb);

    // Feasible start: fill the simplex in a seeded order.
    let mut alpha = Array1::<f64>::zeros(n);
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let mut remaining = 1.0;
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let a = upper.min(remaining);
        alpha[i] = a;
        remaining -= a;
    }
    let mut grad = Array1::<f64>::zeros(n);
    for i in 0..n {
        if alpha[i] > 0.0 {
            let col = cache.column(i);
            for (g, &k) in grad.iter_mut().zip(col.iter()) {
                *g += alpha[i] * k;
            }
        }
    }

    let mut iterations = 0;
    loop {
        let mut i = usize::MAX;
        let mut g_min = f64::INFINITY;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] < upper && grad[t] < g_min {
                g_min = grad[t];
                i = t;
            }
            if alpha[t] > 0.0 && grad[t] > g_max {
                g_max = grad[t];
            }
        }
        if i == usize::MAX || g_max - g_min <= cfg.tol {
            break;
        }
        if iterations >= cfg.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                violation: g_max - g_min,
            });
        }
        let col_i = cache.column(i);
        let mut j = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] > 0.0 && grad[t] > g_min {
                let b = grad[t] - g_min;
                let a = (2.0 - 2.0 * col_i[t]).max(TAU);
                let gain = b * b / a;
                if gain > best {
                    best = gain;
                    j = t;
                }
            }
        }
        let col_j = cache.column(j);
        let a = (2.0 - 2.0 * col_i[j]).max(TAU);
        let room_i = upper - alpha[i];
        let delta = ((grad[j] - grad[i]) / a).min(room_i).min(alpha[j]);
        alpha[i] = if delta == room_i { upper } else { alpha[i] + delta };
        alpha[j] = if delta == alpha[j] { 0.0 } else { alpha[j] - delta };
        for ((g, &ki), &kj) in grad.iter_mut().zip(col_i.iter()).zip(col_j.iter()) {
            *g += delta * (ki - kj);
        }
        iterations += 1;
    }

    let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    let mut model = OcSvmModel {
        support_vectors: x.select(ndarray::Axis(0), &sv),
        alphas: sv.iter().map(|&t| alpha[t]).collect(),
        rho: 0.0,
        gamma,
        nu: cfg.nu,
    };
    // Offset from the scoring path itself, so margin vectors decide exactly 0.
    let rows: Vec<ArrayView1<f64>> = x.outer_iter().collect();
    let sums: Vec<f64> = rows.par_iter().map(|r| model.kernel_sum(*r)).collect();
    let free_min = (0..n).filter(|&t| alpha[t] < upper).map(|t| sums[t]).fold(f64::INFINITY, f64::min);
    let bound_max = sv.iter().map(|&t| sums[t]).fold(f64::NEG_INFINITY, f64::max);
    model.rho = if free_min.is_finite() { free_min } else { bound_max };
    let violation = (bound_max - free_min).max(0.0);
    Ok((
        model,
        OcSvmReport {
            iterations,
            violation: if free_min.is_finite() { violation } else { 0.0 },
            upper,
            dual: alpha,
        },
    ))
}
