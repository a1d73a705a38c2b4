//! Clip-level pooling, ROC AUC, the multi-seed protocol and rank summaries.

mod experiment;
mod rank;
mod report;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audio::Label;
use crate::embedding::RowId;
use crate::error::{Error, Result};

pub use experiment::{
    run_cell, run_experiment, AbsentCell, CellKey, CellResult, ExperimentConfig, ExperimentReport, SeedResult,
};
pub use rank::{rank_summary, GridRow, RankCounts, RankSummary, ScoreGrid, TieNote};
pub use report::{render_rank_summary, render_report, render_table, write_jsonl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip_id: Arc<str>,
    pub label: Label,
    pub score: f64,
    pub n_patches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Arithmetic mean of the patch scores of one clip.
pub fn pool_mean(patch_scores: &[f64]) -> Result<f64> {
    if patch_scores.is_empty() {
        return Err(Error::EmptyInput("patch scores"));
    }
    Ok(patch_scores.iter().sum::<f64>() / patch_scores.len() as f64)
}

/// Groups patch scores by clip and mean-pools them; result sorted by clip id.
/// Summation follows frame-offset order so the result does not depend on
/// row order.
pub fn pool_by_clip(rows: &[RowId], scores: &[f64]) -> Result<Vec<(Arc<str>, f64, usize)>> {
    if rows.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            found: scores.len(),
        });
    }
    let mut by_clip: BTreeMap<Arc<str>, Vec<(u32, f64)>> = BTreeMap::new();
    for (r, &s) in rows.iter().zip(scores) {
        by_clip.entry(Arc::clone(&r.clip_id)).or_default().push((r.frame_offset, s));
    }
    by_clip
        .into_iter()
        .map(|(clip, mut v)| {
            v.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let s: Vec<f64> = v.iter().map(|p| p.1).collect();
            Ok((clip, pool_mean(&s)?, s.len()))
        })
        .collect()
}

/// Mann-Whitney AUC with midranks: the probability that a positive outscores
/// a negative, ties counting one half.
pub fn roc_auc_scores(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::SingleClass);
    }
    if positive.iter().chain(negative).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum of the positives, kept integral.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        let pos_in_block = all[start..end].iter().filter(|e| e.1).count() as u128;
        let twice_mid = (start + 1 + end) as u128;
        twice_rank_sum += pos_in_block * twice_mid;
        start = end;
    }
    let np = positive.len() as u128;
    let nn = negative.len() as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

pub fn roc_auc(clips: &[ClipScore]) -> Result<RocResult> {
    let pos: Vec<f64> = clips.iter().filter(|c| c.label == Label::Anomalous).map(|c| c.score).collect();
    let neg: Vec<f64> = clips.iter().filter(|c| c.label == Label::Normal).map(|c| c.score).collect();
    Ok(RocResult {
        auc: roc_auc_scores(&pos, &neg)?,
        n_pos: pos.len(),
        n_neg: neg.len(),
    })
}
