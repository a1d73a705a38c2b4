use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{pool_by_clip, roc_auc, ClipScore};
use crate::audio::{split_train_test, DatasetIndex, GroupKey, Label, MachineId, MachineType};
use crate::embedding::{FeatureMatrix, Standardizer};
use crate::error::{Error, Result};
use crate::models::{AnomalyModel, ModelConfig, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub n_test_normal: usize,
    pub models: Vec<ModelKind>,
    pub model: ModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            n_test_normal: 150,
            models: ModelKind::ALL.to_vec(),
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub extractor: String,
    pub model: ModelKind,
    pub machine_type: MachineType,
    pub machine_id: MachineId,
}

impl CellKey {
    pub fn group(&self) -> GroupKey {
        GroupKey {
            machine_type: self.machine_type,
            machine_id: self.machine_id,
        }
    }
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.extractor, self.model, self.group())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_train_clips: usize,
    pub n_train_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub seeds: Vec<SeedResult>,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsentCell {
    pub key: CellKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Caller-supplied resolved configuration, embedded verbatim.
    pub provenance: serde_json::Value,
    pub cells: Vec<CellResult>,
    pub absent: Vec<AbsentCell>,
}

impl ExperimentReport {
    pub fn cell(&self, extractor: &str, model: ModelKind, group: GroupKey) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.key.extractor == extractor && c.key.model == model && c.key.group() == group)
    }
}

/// Mean of the per-seed AUCs, summed in seed order.
fn mean_auc(seeds: &[SeedResult]) -> f64 {
    seeds.iter().map(|s| s.auc).sum::<f64>() / seeds.len() as f64
}

/// One (features, model, seed) evaluation on a single group: standardize on
/// the train rows, fit, score the test rows, mean-pool per clip, AUC.
pub fn run_cell(
    features: &FeatureMatrix,
    train: &DatasetIndex,
    test: &DatasetIndex,
    kind: ModelKind,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<SeedResult> {
    if features.standardized {
        return Err(Error::InvalidParameter("cell inputs must be raw features".into()));
    }
    let train_ids: BTreeSet<&str> = train.entries.iter().map(|m| m.path.as_str()).collect();
    let test_labels: BTreeMap<&str, Label> = test.entries.iter().map(|m| (m.path.as_str(), m.label)).collect();
    if let Some(leak) = test_labels.keys().find(|id| train_ids.contains(*id)) {
        return Err(Error::InvalidParameter(format!("test clip {leak} is also in the training split")));
    }
    if let Some(m) = train.entries.iter().find(|m| m.label != Label::Normal) {
        return Err(Error::InvalidParameter(format!("non-normal clip {} in the training split", m.path)));
    }

    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    let mut seen_train = BTreeSet::new();
    let mut seen_test = BTreeSet::new();
    for (i, r) in features.rows.iter().enumerate() {
        if train_ids.contains(&*r.clip_id) {
            train_rows.push(i);
            seen_train.insert(Arc::clone(&r.clip_id));
        } else if test_labels.contains_key(&*r.clip_id) {
            test_rows.push(i);
            seen_test.insert(Arc::clone(&r.clip_id));
        }
    }
    for id in train_ids.iter().chain(test_labels.keys()) {
        if !seen_train.contains(*id) && !seen_test.contains(*id) {
            return Err(Error::MissingClip((*id).to_string()));
        }
    }
    debug_assert!(train_rows.iter().all(|&i| !test_labels.contains_key(&*features.rows[i].clip_id)));

    let x = features.to_f64();
    let x_train = x.select(Axis(0), &train_rows);
    let x_test = x.select(Axis(0), &test_rows);
    let standardizer = Standardizer::fit(x_train.view())?;
    let z_train = standardizer.transform(x_train.view())?;
    let z_test = standardizer.transform(x_test.view())?;

    let model = AnomalyModel::fit(kind, z_train.view(), cfg, seed)?;
    let scores = model.score_batch(z_test.view())?;
    let rows: Vec<_> = test_rows.iter().map(|&i| features.rows[i].clone()).collect();
    let pooled = pool_by_clip(&rows, scores.as_slice().expect("contiguous scores"))?;
    let clips: Vec<ClipScore> = pooled
        .into_iter()
        .map(|(clip_id, score, n_patches)| {
            let label = test_labels[&*clip_id];
            ClipScore {
                clip_id,
                label,
                score,
                n_patches,
            }
        })
        .collect();
    if clips.iter().any(|c| !c.score.is_finite()) {
        return Err(Error::NonFinite("clip scores"));
    }
    let roc = roc_auc(&clips)?;
    Ok(SeedResult {
        seed,
        auc: roc.auc,
        n_pos: roc.n_pos,
        n_neg: roc.n_neg,
        n_train_clips: seen_train.len(),
        n_train_rows: train_rows.len(),
    })
}

#[derive(Serialize, Deserialize)]
struct StoredSeed {
    digest: String,
    key: CellKey,
    result: SeedResult,
}

fn job_digest(cfg: &ExperimentConfig, key: &CellKey, seed: u64) -> String {
    let body = serde_json::json!({
        "n_test_normal": cfg.n_test_normal,
        "model": cfg.model,
        "key": key,
        "seed": seed,
    });
    let hash = Sha256::digest(body.to_string().as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

fn job_path(dir: &Path, key: &CellKey, seed: u64) -> PathBuf {
    dir.join(&key.extractor)
        .join(format!("{}_{}", key.machine_type, key.machine_id))
        .join(format!("{}_seed{seed}.json", key.model))
}

fn load_stored(path: &Path, digest: &str) -> Option<SeedResult> {
    let text = fs::read_to_string(path).ok()?;
    let stored: StoredSeed = serde_json::from_str(&text).ok()?;
    (stored.digest == digest).then_some(stored.result)
}

fn store(path: &Path, stored: &StoredSeed) -> Result<()> {
    let parent = path.parent().expect("job path has a parent");
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = path.with_extension("partial");
    let text = serde_json::to_string_pretty(stored).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs every (extractor, model, group, seed) job. Failing cells are
/// reported as absent and the rest of the grid still runs. With `resume_dir`,
/// finished jobs are persisted there and reused on the next invocation.
pub fn run_experiment(
    index: &DatasetIndex,
    features: &[FeatureMatrix],
    cfg: &ExperimentConfig,
    resume_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    if cfg.seeds.is_empty() || cfg.models.is_empty() {
        return Err(Error::InvalidParameter("experiment needs at least one seed and one model".into()));
    }
    let groups: Vec<GroupKey> = index.groups().into_keys().collect();
    if groups.is_empty() {
        return Err(Error::EmptyDataset(index.root.clone()));
    }

    // Splits depend only on (group, seed), so compute each once.
    let mut splits: BTreeMap<(GroupKey, u64), Result<(DatasetIndex, DatasetIndex), String>> = BTreeMap::new();
    for &g in &groups {
        let sub = index.filter(|m| m.group() == g);
        for &seed in &cfg.seeds {
            let split = split_train_test(&sub, seed, cfg.n_test_normal).map_err(|e| e.to_string());
            splits.insert((g, seed), split);
        }
    }

    let mut keys = Vec::new();
    for fm in features {
        for &g in &groups {
            for &model in &cfg.models {
                keys.push((
                    fm,
                    CellKey {
                        extractor: fm.extractor_id.clone(),
                        model,
                        machine_type: g.machine_type,
                        machine_id: g.machine_id,
                    },
                ));
            }
        }
    }
    let jobs: Vec<(usize, u64)> = (0..keys.len())
        .flat_map(|k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();

    let outcomes: Vec<Result<SeedResult, String>> = jobs
        .par_iter()
        .map(|&(k, seed)| {
            let (fm, key) = &keys[k];
            let digest = job_digest(cfg, key, seed);
            let path = resume_dir.map(|d| job_path(d, key, seed));
            if let Some(done) = path.as_deref().and_then(|p| load_stored(p, &digest)) {
                return Ok(done);
            }
            let (train, test) = splits[&(key.group(), seed)].as_ref().map_err(Clone::clone)?;
            let result = run_cell(fm, train, test, key.model, &cfg.model, seed)
                .map_err(|e| format!("seed {seed}: {e}"))?;
            if let Some(p) = &path {
                let stored = StoredSeed {
                    digest,
                    key: key.clone(),
                    result: result.clone(),
                };
                store(p, &stored).map_err(|e| e.to_string())?;
            }
            Ok(result)
        })
        .collect();

    let mut cells = Vec::new();
    let mut absent = Vec::new();
    let per_cell = cfg.seeds.len();
    for (k, chunk) in outcomes.chunks(per_cell).enumerate() {
        let key = keys[k].1.clone();
        let errors: Vec<&String> = chunk.iter().filter_map(|r| r.as_ref().err()).collect();
        if !errors.is_empty() {
            let reason = errors.iter().map(|e| e.as_str()).collect::<Vec<_>>().join("; ");
            log::warn!("cell {key} absent: {reason}");
            absent.push(AbsentCell { key, reason });
            continue;
        }
        let seeds: Vec<SeedResult> = chunk.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        let mean_auc = mean_auc(&seeds);
        cells.push(CellResult { key, seeds, mean_auc });
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        provenance: serde_json::Value::Null,
        cells,
        absent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_known_seeds() {
        let seeds: Vec<SeedResult> = [0.9, 0.8, 1.0, 0.7, 0.6]
            .iter()
            .enumerate()
            .map(|(i, &auc)| SeedResult {
                seed: i as u64,
                auc,
                n_pos: 1,
                n_neg: 1,
                n_train_clips: 1,
                n_train_rows: 1,
            })
            .collect();
        assert!((mean_auc(&seeds) - 0.8).abs() < 1e-15);
    }
}
