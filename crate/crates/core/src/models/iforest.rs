//! Isolation Forest.

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Marker stored in `Node::dim` for leaves.
pub const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsoForestConfig {
    pub n_trees: usize,
    pub subsample: usize,
}

impl Default for IsoForestConfig {
    fn default() -> Self {
        Self { n_trees: 128, subsample: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub dim: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Number of subsample points that reached this node.
    pub size: u32,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.dim == LEAF
    }
}

/// Nodes in pre-order; the root is `nodes[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsoForestModel {
    pub trees: Vec<Tree>,
    pub psi: usize,
    pub dim: usize,
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points; zero for `n <= 1`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let m = (n - 1) as f64;
    2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
}

fn grow(x: ArrayView2<f64>, idx: &mut [usize], depth: usize, limit: usize, rng: &mut SplitMix64, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    let leaf = Node {
        dim: LEAF,
        threshold: 0.0,
        left: 0,
        right: 0,
        size: idx.len() as u32,
    };
    nodes.push(leaf);
    if depth >= limit || idx.len() <= 1 {
        return id;
    }
    let d = x.ncols();
    let mut dims: Vec<usize> = (0..d).collect();
    let mut split = None;
    // Draw dimensions without replacement until one has a nonzero range.
    for t in 0..d {
        let pick = t + rng.below(d - t);
        dims.swap(t, pick);
        let j = dims[t];
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(x[[i, j]]), hi.max(x[[i, j]]))
        });
        if hi > lo {
            split = Some((j, rng.uniform(lo, hi)));
            break;
        }
    }
    let Some((j, thr)) = split else {
        return id;
    };
    let mut mid = 0;
    for k in 0..idx.len() {
        if x[[idx[k], j]] < thr {
            idx.swap(k, mid);
            mid += 1;
        }
    }
    let (l, r) = idx.split_at_mut(mid);
    let left = grow(x, l, depth + 1, limit, rng, nodes);
    let right = grow(x, r, depth + 1, limit, rng, nodes);
    nodes[id as usize] = Node {
        dim: j as u32,
        threshold: thr,
        left,
        right,
        size: leaf.size,
    };
    id
}

fn build_tree(x: ArrayView2<f64>, psi: usize, limit: usize, mut rng: SplitMix64) -> Tree {
    let n = x.nrows();
    let mut idx: Vec<usize> = if n >= psi {
        let mut all: Vec<usize> = (0..n).collect();
        for t in 0..psi {
            let pick = t + rng.below(n - t);
            all.swap(t, pick);
        }
        all.truncate(psi);
        all
    } else {
        (0..psi).map(|_| rng.below(n)).collect()
    };
    let mut nodes = Vec::new();
    grow(x, &mut idx, 0, limit, &mut rng, &mut nodes);
    Tree { nodes }
}

pub fn iforest_fit(x: ArrayView2<f64>, cfg: &IsoForestConfig, seed: u64) -> Result<IsoForestModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::NotEnoughSamples { required: 2, found: n });
    }
    if d == 0 || cfg.n_trees == 0 || cfg.subsample < 2 {
        return Err(Error::InvalidParameter(format!("isolation forest config {cfg:?} for d={d}")));
    }
    super::check_finite(x)?;
    let psi = cfg.subsample;
    let limit = (psi as f64).log2().ceil() as usize;
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| build_tree(x, psi, limit, SplitMix64::derive(seed, t as u64)))
        .collect();
    Ok(IsoForestModel { trees, psi, dim: d })
}

impl Tree {
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            let n = &nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(nodes, n.left as usize).max(walk(nodes, n.right as usize))
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn path_length(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        let mut depth = 0.0;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return depth + average_path_length(n.size as usize);
            }
            i = if x[n.dim as usize] < n.threshold { n.left } else { n.right } as usize;
            depth += 1.0;
        }
    }
}

impl IsoForestModel {
    pub fn mean_path_length(&self, x: ArrayView1<f64>) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub(crate) fn score_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        2f64.powf(-self.mean_path_length(x) / average_path_length(self.psi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn path_length_normaliser() {
        assert_eq!(average_path_length(0), 0.0);
        assert_eq!(average_path_length(1), 0.0);
        assert!((average_path_length(2) - 0.154_431_329_803_065_8).abs() < 1e-12);
        let h255: f64 = (1..=255).map(|i| 1.0 / i as f64).sum();
        // Asymptotic harmonic form stays close to the exact harmonic number.
        assert!((average_path_length(256) - (2.0 * h255 - 2.0 * 255.0 / 256.0)).abs() < 0.01);
    }

    #[test]
    fn identical_points_score_equally() {
        let x = Array2::from_elem((50, 3), 2.5);
        let m = iforest_fit(x.view(), &IsoForestConfig::default(), 0).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 1));
        let s0 = m.score_unchecked(x.row(0));
        assert!((s0 - 0.5).abs() < 1e-12);
        assert_eq!(s0, m.score_unchecked(array![2.5, 2.5, 2.5].view()));
    }

    #[test]
    fn structure_invariants() {
        let mut rng = SplitMix64::new(7);
        let x = Array2::from_shape_fn((600, 4), |_| rng.normal());
        let m = iforest_fit(x.view(), &IsoForestConfig::default(), 3).unwrap();
        assert_eq!(m.trees.len(), 128);
        for t in &m.trees {
            assert!(t.depth() <= 8);
            assert_eq!(t.nodes[0].size, 256);
            for n in t.nodes.iter().filter(|n| !n.is_leaf()) {
                let col = x.column(n.dim as usize);
                let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
                assert!(n.threshold >= lo && n.threshold <= hi);
                let kids = t.nodes[n.left as usize].size + t.nodes[n.right as usize].size;
                assert_eq!(kids, n.size);
            }
        }
        let again = iforest_fit(x.view(), &IsoForestConfig::default(), 3).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn small_sets_sample_with_replacement() {
        let x = array![[0.0], [1.0], [2.0]];
        let m = iforest_fit(x.view(), &IsoForestConfig::default(), 1).unwrap();
        assert_eq!(m.trees[0].nodes[0].size, 256);
        let s = m.score_unchecked(array![50.0].view());
        assert!(s > 0.0 && s <= 1.0);
    }

    #[test]
    fn outlier_scores_above_median() {
        for seed in 0..20 {
            let mut rng = SplitMix64::new(100 + seed);
            let mut x = Array2::from_shape_fn((300, 2), |_| rng.normal());
            x.row_mut(0).assign(&array![8.0, -8.0]);
            let m = iforest_fit(x.view(), &IsoForestConfig::default(), seed).unwrap();
            let mut s: Vec<f64> = x.outer_iter().map(|r| m.score_unchecked(r)).collect();
            let outlier = s[0];
            s.sort_by(f64::total_cmp);
            assert!(outlier > s[150], "seed {seed}");
        }
    }

    #[test]
    fn rejects_single_point() {
        let x = array![[1.0, 2.0]];
        assert!(matches!(
            iforest_fit(x.view(), &IsoForestConfig::default(), 0),
            Err(Error::NotEnoughSamples { required: 2, found: 1 })
        ));
    }
}
