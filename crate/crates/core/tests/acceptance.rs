//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Oracles are written independently of the library code they check.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use aad_core::audio::{encode_wav, index_dataset, Waveform};
use aad_core::embedding::{DownsampleEmbedder, RowId};
use aad_core::eval::{pool_by_clip, rank_summary, roc_auc_scores, run_experiment, ExperimentConfig, ScoreGrid};
use aad_core::models::{
    average_path_length, gmm_fit, ocsvm_fit_report, vbgmm_fit, AnomalyModel, GmmConfig, KdeConfig, KdeModel,
    ModelConfig, ModelKind, OcSvmConfig, VbGmmConfig,
};
use aad_core::pipeline::Featurizer;
use aad_core::render::{extract_patches, RenderConfig};
use aad_core::rng::SplitMix64;
use aad_core::spectral::{stft_power, MelConfig, MelFrontEnd, StftConfig};
use ndarray::{Array1, Array2};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &p in pos {
        for &n in neg {
            twice += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

fn auc_oracle() -> Outcome {
    let mut rng = SplitMix64::new(7);
    let start = Instant::now();
    let mut tied_sets = 0;
    for case in 0..1000 {
        let np = 1 + rng.below(250);
        let nn = 1 + rng.below(250);
        // Coarse levels force ties in most sets.
        let levels = 2 + rng.below(if case % 2 == 0 { 10 } else { 10_000 });
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect() };
        let pos = draw(np);
        let neg = draw(nn);
        let mut all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        all.sort_by(f64::total_cmp);
        if all.windows(2).any(|w| w[0] == w[1]) {
            tied_sets += 1;
        }
        let got = roc_auc_scores(&pos, &neg).map_err(|e| e.to_string())?;
        let want = brute_auc(&pos, &neg);
        ensure(got == want, || format!("case {case}: {got} != brute force {want}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 sets exact ({tied_sets} with ties) in {elapsed:.2?}"))
}

fn pooling() -> Outcome {
    let mut rng = SplitMix64::new(11);
    for case in 0..100 {
        let n_clips = 1 + rng.below(10);
        let mut rows = Vec::new();
        let mut scores = Vec::new();
        let mut expected = Vec::new();
        for c in 0..n_clips {
            let id: Arc<str> = Arc::from(format!("clip{c:02}").as_str());
            let n = 1 + rng.below(30);
            let s: Vec<f64> = (0..n).map(|_| rng.normal() * 10.0).collect();
            let mut sum = 0.0;
            for v in &s {
                sum += v;
            }
            expected.push((Arc::clone(&id), sum / n as f64, n));
            for (k, v) in s.into_iter().enumerate() {
                rows.push(RowId {
                    clip_id: Arc::clone(&id),
                    frame_offset: 32 * k as u32,
                });
                scores.push(v);
            }
        }
        let pooled = pool_by_clip(&rows, &scores).map_err(|e| e.to_string())?;
        ensure(pooled == expected, || format!("case {case}: pooled mean differs from the arithmetic mean"))?;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        rng.shuffle(&mut order);
        let rows_p: Vec<RowId> = order.iter().map(|&i| rows[i].clone()).collect();
        let scores_p: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        let permuted = pool_by_clip(&rows_p, &scores_p).map_err(|e| e.to_string())?;
        ensure(permuted == pooled, || format!("case {case}: result depends on row order"))?;
    }
    Ok("100 random cases exact and permutation invariant".into())
}

fn mixture_dataset(seed: u64, n: usize, d: usize, k: usize) -> Array2<f64> {
    let mut rng = SplitMix64::new(seed);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.uniform(-5.0, 5.0)).collect()).collect();
    let scales: Vec<f64> = (0..k).map(|_| rng.uniform(0.3, 1.5)).collect();
    Array2::from_shape_fn((n, d), |(i, j)| {
        let c = i % k;
        centers[c][j] + scales[c] * rng.normal()
    })
}

fn gmm_monotone() -> Outcome {
    let cfg = GmmConfig::with_components(5);
    let mut worst = 0.0f64;
    let mut iters = 0;
    for s in 0..50 {
        let x = mixture_dataset(1000 + s, 500, 8, 5);
        let fit = gmm_fit(x.view(), &cfg, s).map_err(|e| format!("dataset {s}: {e}"))?;
        iters += fit.log_likelihood.len();
        for w in fit.log_likelihood.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
    }
    ensure(worst <= 1e-8, || format!("log-likelihood dropped by {worst:e}"))?;

    let mut max_err = 0.0f64;
    for s in 0..10 {
        let x = mixture_dataset(2000 + s, 300, 4, 3);
        let n = x.nrows() as f64;
        let fit = gmm_fit(x.view(), &GmmConfig::with_components(1), s).map_err(|e| e.to_string())?;
        for j in 0..x.ncols() {
            let col = x.column(j);
            let mut mean = 0.0;
            for v in col.iter() {
                mean += v;
            }
            mean /= n;
            let mut var = 0.0;
            for v in col.iter() {
                var += (v - mean) * (v - mean);
            }
            var /= n;
            max_err = max_err.max((fit.model.means[[0, j]] - mean).abs());
            max_err = max_err.max((fit.model.vars[[0, j]] - var).abs());
        }
    }
    ensure(max_err <= 1e-9, || format!("K=1 moments off by {max_err:e}"))?;
    Ok(format!(
        "50 datasets, {iters} iterations, worst drop {worst:.1e}; K=1 moment error {max_err:.1e}"
    ))
}

fn vbgmm_monotone() -> Outcome {
    let cfg = VbGmmConfig::with_components(5);
    let mut worst = 0.0f64;
    for s in 0..50 {
        let x = mixture_dataset(1000 + s, 500, 8, 5);
        let fit = vbgmm_fit(x.view(), &cfg, s).map_err(|e| format!("dataset {s}: {e}"))?;
        for w in fit.elbo.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
    }
    ensure(worst <= 1e-6, || format!("bound dropped by {worst:e}"))?;
    Ok(format!("50 datasets, worst drop {worst:.1e}"))
}

fn rbf(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>, gamma: f64) -> f64 {
    let mut q = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        q += (x - y) * (x - y);
    }
    (-gamma * q).exp()
}

fn ocsvm_kkt() -> Outcome {
    let mut notes = Vec::new();
    for (s, nu) in [(0u64, 0.05), (1, 0.1), (2, 0.2), (3, 0.01), (4, 1e-4)] {
        let x = mixture_dataset(3000 + s, 1000, 3, 2);
        let cfg = OcSvmConfig {
            nu,
            ..OcSvmConfig::default()
        };
        let (model, report) = ocsvm_fit_report(x.view(), &cfg, s).map_err(|e| format!("nu {nu}: {e}"))?;
        let alpha = &report.dual;
        let sum: f64 = alpha.sum();
        ensure((sum - 1.0).abs() <= 1e-9, || format!("nu {nu}: sum alpha = {sum}"))?;
        ensure(alpha.iter().all(|&a| (0.0..=report.upper).contains(&a)), || {
            format!("nu {nu}: alpha outside [0, {}]", report.upper)
        })?;
        // Independent KKT check from the full dual vector.
        let n = x.nrows();
        let grad: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| alpha[j] * rbf(x.row(i), x.row(j), model.gamma)).sum())
            .collect();
        let up = (0..n).filter(|&i| alpha[i] < report.upper).map(|i| grad[i]).fold(f64::INFINITY, f64::min);
        let low = (0..n).filter(|&i| alpha[i] > 0.0).map(|i| grad[i]).fold(f64::NEG_INFINITY, f64::max);
        let violation = (low - up).max(0.0);
        ensure(violation <= 1e-3, || format!("nu {nu}: KKT violation {violation:e}"))?;
        let negative = x.outer_iter().filter(|r| model.decision(*r) < 0.0).count();
        let bound = (nu * n as f64).ceil() as usize;
        ensure(negative <= bound, || format!("nu {nu}: {negative} negative decisions > {bound}"))?;
        notes.push(format!("nu={nu}: viol {violation:.1e}, {negative}/{bound} outside"));
    }
    Ok(notes.join("; "))
}

fn kde_oracle() -> Outcome {
    let mut rng = SplitMix64::new(5);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = 1 + rng.below(100);
        let d = 1 + rng.below(5);
        let h = [0.5, 1.0, 2.0][rng.below(3)];
        let x = Array2::from_shape_fn((n, d), |_| rng.normal());
        let q = Array1::from_shape_fn(d, |_| rng.normal());
        let model = KdeModel::fit(x.view(), &KdeConfig { bandwidth: h }).map_err(|e| e.to_string())?;
        let norm = (2.0 * std::f64::consts::PI * h * h).powf(d as f64 / 2.0);
        let mut sum = 0.0;
        for p in x.outer_iter() {
            let mut sq = 0.0;
            for (a, b) in p.iter().zip(q.iter()) {
                sq += (a - b) * (a - b);
            }
            sum += (-sq / (2.0 * h * h)).exp() / norm;
        }
        let want = (sum / n as f64).ln();
        let got = model.log_density(q.view());
        let rel = ((got - want) / want).abs();
        ensure(rel <= 1e-9, || format!("case {case}: {got} vs {want}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("200 cases, worst relative error {worst:.1e}"))
}

fn isolation_forest() -> Outcome {
    let c2 = average_path_length(2);
    ensure((c2 - 0.15443).abs() <= 1e-5, || format!("c(2) = {c2}"))?;
    let harmonic_oracle = 2.0 * (1.0f64.ln() + 0.577_215_664_901_532_9) - 2.0 * 1.0 / 2.0;
    ensure((c2 - harmonic_oracle).abs() <= 1e-6, || format!("c(2) = {c2} vs {harmonic_oracle}"))?;
    let mut worst_auc = 1.0f64;
    for seed in 0..20u64 {
        let mut rng = SplitMix64::new(500 + seed);
        let n_in = 500;
        let mut x = Array2::zeros((n_in + 10, 2));
        for i in 0..n_in {
            x[[i, 0]] = rng.normal();
            x[[i, 1]] = rng.normal();
        }
        for i in 0..10 {
            let angle = rng.uniform(0.0, std::f64::consts::TAU);
            let r = rng.uniform(5.0, 8.0);
            x[[n_in + i, 0]] = r * angle.cos();
            x[[n_in + i, 1]] = r * angle.sin();
        }
        let model = AnomalyModel::fit(ModelKind::IsoForest, x.view(), &ModelConfig::default(), seed)
            .map_err(|e| e.to_string())?;
        let scores = model.score_batch(x.view()).map_err(|e| e.to_string())?;
        ensure(scores.iter().all(|&s| s > 0.0 && s <= 1.0), || format!("seed {seed}: score outside (0, 1]"))?;
        let s = scores.to_vec();
        let auc = brute_auc(&s[n_in..], &s[..n_in]);
        ensure(auc >= 0.9, || format!("seed {seed}: outlier AUC {auc}"))?;
        worst_auc = worst_auc.min(auc);
    }
    Ok(format!("c(2) = {c2:.6}; 20 seeds, worst outlier AUC {worst_auc:.4}"))
}

fn synth_clip(path: &Path, anomalous: bool, seed: u64) {
    let sr = 16_000u32;
    let mut rng = SplitMix64::new(seed);
    let phase = rng.uniform(0.0, std::f64::consts::TAU);
    let burst_phase = rng.uniform(0.0, 1.0);
    let samples: Vec<f32> = (0..sr as usize * 10)
        .map(|i| {
            let t = i as f64 / sr as f64;
            let mut v = 0.3 * (std::f64::consts::TAU * 440.0 * t + phase).sin() + 0.05 * rng.normal();
            // Half-second bursts once per second.
            if anomalous && (t + burst_phase).fract() < 0.5 {
                v += 0.2 * (std::f64::consts::TAU * 3000.0 * t).sin();
            }
            v as f32
        })
        .collect();
    encode_wav(path, &Waveform::new(samples, sr).unwrap()).unwrap();
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let group = dir.path().join("slider").join("id_00");
    for (label, count, anomalous) in [("normal", 60, false), ("abnormal", 20, true)] {
        let d = group.join(label);
        std::fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        for i in 0..count {
            synth_clip(&d.join(format!("{i:08}.wav")), anomalous, (anomalous as u64) << 32 | i);
        }
    }
    let index = index_dataset(dir.path()).map_err(|e| e.to_string())?;
    let front = MelFrontEnd::new(StftConfig::default(), MelConfig::default()).map_err(|e| e.to_string())?;
    let embedder = DownsampleEmbedder { cells: 8 };
    let featurizer = Featurizer {
        front_end: &front,
        render: RenderConfig::default(),
        embedder: &embedder,
    };
    let features = featurizer.run(&index).map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig {
        seeds: (0..5).collect(),
        n_test_normal: 20,
        models: vec![ModelKind::Gmm, ModelKind::OcSvm],
        model: ModelConfig::default(),
    };
    let report = run_experiment(&index, &[features], &cfg, None).map_err(|e| e.to_string())?;
    ensure(report.absent.is_empty(), || format!("absent cells: {:?}", report.absent))?;
    let mut notes = Vec::new();
    for cell in &report.cells {
        for s in &cell.seeds {
            ensure(s.auc >= 0.95, || format!("{} seed {}: AUC {}", cell.key, s.seed, s.auc))?;
        }
        notes.push(format!("{} mean AUC {:.3}", cell.key.model.display_name(), cell.mean_auc));
    }
    ensure(report.cells.len() == 2, || format!("{} cells", report.cells.len()))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{} in {elapsed:.1?}", notes.join(", ")))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn rank_fixture() -> Outcome {
    let text = std::fs::read_to_string(fixture("table2.tsv")).map_err(|e| e.to_string())?;
    let grid = ScoreGrid::from_tsv(&text).map_err(|e| e.to_string())?;
    let s = rank_summary(&grid).map_err(|e| e.to_string())?;
    let expected_extractors = [("ResNet34", 7, 6), ("ResNet18", 3, 5), ("AlexNet", 3, 2), ("SqueezeNet", 2, 2)];
    let expected_models = [("GMM", 9, 8), ("OC-SVM", 6, 2)];
    let mut mismatches = Vec::new();
    for (name, first, second) in expected_extractors {
        let c = s.by_extractor.get(name).copied().unwrap_or_default();
        if (c.first, c.second) != (first, second) {
            mismatches.push(format!("{name} ({},{}) vs ({first},{second})", c.first, c.second));
        }
    }
    for (name, first, second) in expected_models {
        let c = s.by_model.get(name).copied().unwrap_or_default();
        if (c.first, c.second) != (first, second) {
            mismatches.push(format!("{name} ({},{}) vs ({first},{second})", c.first, c.second));
        }
    }
    let ties: Vec<String> = s.ties.iter().map(|t| format!("{} place {}", t.column, t.place)).collect();
    ensure(mismatches.is_empty(), || {
        format!("computed vs expected: {}; ties at {}", mismatches.join(", "), ties.join(", "))
    })?;
    Ok("all expected tuples reproduced".into())
}

fn frame_arithmetic() -> Outcome {
    let stft = StftConfig::default();
    let wave = Waveform::new(vec![0.0; 160_000], 16_000).map_err(|e| e.to_string())?;
    let power = stft_power(&wave, &stft).map_err(|e| e.to_string())?;
    ensure(power.n_frames() == 626, || format!("{} frames", power.n_frames()))?;
    let front = MelFrontEnd::new(stft, MelConfig::default()).map_err(|e| e.to_string())?;
    let mel = front.process(&wave).map_err(|e| e.to_string())?;
    let patches = extract_patches(&mel, "x", 64, 32).map_err(|e| e.to_string())?;
    ensure(patches.len() == 18, || format!("{} patches", patches.len()))?;
    ensure(patches.last().map(|p| p.frame_offset) == Some(544), || "last offset".into())?;
    Ok("626 frames, 18 patches".into())
}

/// Needs `AAD_MIMII_ROOT` (the -6 dB tree) and `AAD_GRAPH_DIR` with
/// `resnet18.onnx` and `alexnet.onnx`.
#[cfg(feature = "onnx")]
fn mimii() -> Option<Outcome> {
    use aad_core::embedding::{load_backend, EmbeddingBackendSpec, ExtractorId, ImageEmbedder};
    use aad_core::render::PatchRenderer;
    let root = std::env::var_os("AAD_MIMII_ROOT")?;
    let graphs = PathBuf::from(std::env::var_os("AAD_GRAPH_DIR")?);
    let run = || -> Result<String, String> {
        let index = index_dataset(&root).map_err(|e| e.to_string())?;
        let front = MelFrontEnd::new(StftConfig::default(), MelConfig::default()).map_err(|e| e.to_string())?;
        let mut notes = Vec::new();
        for (extractor, machine, id, floor) in [
            (ExtractorId::ResNet18, "slider", "M0", 0.85),
            (ExtractorId::AlexNet, "fan", "M6", 0.80),
        ] {
            let sub = index.filter(|m| m.machine_type.as_str() == machine && m.machine_id.as_str() == id);
            let graph = graphs.join(format!("{}.onnx", extractor.as_str()));
            let spec = EmbeddingBackendSpec::new(extractor, graph, "input", "features");
            let embedder = ImageEmbedder {
                backend: load_backend(&spec).map_err(|e| e.to_string())?,
                renderer: PatchRenderer::new(RenderConfig::default()),
                batch: 32,
            };
            let featurizer = Featurizer {
                front_end: &front,
                render: RenderConfig::default(),
                embedder: &embedder,
            };
            let features = featurizer.run(&sub).map_err(|e| e.to_string())?;
            let cfg = ExperimentConfig {
                models: vec![ModelKind::Gmm],
                ..ExperimentConfig::default()
            };
            let report = run_experiment(&sub, &[features], &cfg, None).map_err(|e| e.to_string())?;
            let auc = report.cells.first().map(|c| c.mean_auc).ok_or("no cell")?;
            ensure(auc >= floor, || format!("{extractor} {machine}/{id}: mean AUC {auc:.3} < {floor}"))?;
            notes.push(format!("{extractor} {machine}/{id} {auc:.3}"));
        }
        Ok(notes.join(", "))
    };
    Some(run())
}

#[cfg(not(feature = "onnx"))]
fn mimii() -> Option<Outcome> {
    None
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("auc-oracle-equivalence", auc_oracle),
        ("clip-mean-pooling", pooling),
        ("gmm-em-monotonicity", gmm_monotone),
        ("vbgmm-elbo-monotonicity", vbgmm_monotone),
        ("ocsvm-kkt-and-nu", ocsvm_kkt),
        ("kde-brute-force", kde_oracle),
        ("isolation-forest", isolation_forest),
        ("end-to-end-synthetic", end_to_end),
        ("rank-summary-fixture", rank_fixture),
        ("frame-patch-arithmetic", frame_arithmetic),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let line = match std::panic::catch_unwind(check) {
            Ok(Ok(note)) => format!("PASS {name}: {note}"),
            Ok(Err(why)) => {
                failed += 1;
                format!("FAIL {name}: {why}")
            }
            Err(_) => {
                failed += 1;
                format!("FAIL {name}: panicked")
            }
        };
        println!("{line}");
    }
    match mimii() {
        None => println!("SKIP mimii-corpus: set AAD_MIMII_ROOT and AAD_GRAPH_DIR to run"),
        Some(Ok(note)) => println!("PASS mimii-corpus: {note}"),
        Some(Err(why)) => {
            failed += 1;
            println!("FAIL mimii-corpus: {why}");
        }
    }
    println!("acceptance: {failed} of {} criteria failed", criteria.len() + 1);
    if failed > 0 {
        std::process::exit(1);
    }
}
