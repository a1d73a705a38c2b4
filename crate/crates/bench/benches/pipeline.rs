use std::hint::black_box;

use aad_core::audio::Waveform;
use aad_core::embedding::{DownsampleEmbedder, PatchEmbedder};
use aad_core::eval::roc_auc_scores;
use aad_core::models::{AnomalyModel, GmmConfig, ModelConfig, ModelKind};
use aad_core::render::{extract_patches, PatchRenderer, RenderConfig};
use aad_core::rng::SplitMix64;
use aad_core::spectral::{MelConfig, MelFrontEnd, StftConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;

fn tone_clip(seconds: usize) -> Waveform {
    let mut rng = SplitMix64::new(1);
    let samples = (0..16_000 * seconds)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            (0.3 * (std::f64::consts::TAU * 440.0 * t).sin() + 0.05 * rng.normal()) as f32
        })
        .collect();
    Waveform::new(samples, 16_000).unwrap()
}

fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = SplitMix64::new(seed);
    Array2::from_shape_fn((n, d), |_| rng.normal())
}

fn front_end(c: &mut Criterion) {
    let wave = tone_clip(10);
    let front = MelFrontEnd::new(StftConfig::default(), MelConfig::default()).unwrap();
    c.bench_function("mel_10s_clip", |b| b.iter(|| front.process(black_box(&wave)).unwrap()));

    let mel = front.process(&wave).unwrap();
    let patches = extract_patches(&mel, "clip", 64, 32).unwrap();
    let renderer = PatchRenderer::new(RenderConfig::default());
    c.bench_function("render_18_patches", |b| b.iter(|| renderer.render_clip(&mel, black_box(&patches)).unwrap()));
    let embedder = DownsampleEmbedder::default();
    c.bench_function("downsample_embed_18_patches", |b| {
        b.iter(|| embedder.embed_clip(&mel, black_box(&patches)).unwrap())
    });
}

fn auc(c: &mut Criterion) {
    let mut g = c.benchmark_group("roc_auc");
    for n in [300usize, 3000] {
        let mut rng = SplitMix64::new(n as u64);
        let pos: Vec<f64> = (0..n / 2).map(|_| rng.normal() + 0.5).collect();
        let neg: Vec<f64> = (0..n / 2).map(|_| rng.normal()).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| roc_auc_scores(black_box(&pos), black_box(&neg)).unwrap())
        });
    }
    g.finish();
}

fn models(c: &mut Criterion) {
    let train = gaussian(1000, 64, 2);
    let test = gaussian(500, 64, 3);
    let mut cfg = ModelConfig::default();
    cfg.gmm = GmmConfig::with_components(8);
    cfg.vbgmm.n_components = 8;

    let mut fit = c.benchmark_group("fit_1000x64");
    fit.sample_size(10);
    for kind in ModelKind::ALL {
        fit.bench_function(kind.as_str(), |b| {
            b.iter(|| AnomalyModel::fit(kind, black_box(train.view()), &cfg, 0).unwrap())
        });
    }
    fit.finish();

    let mut score = c.benchmark_group("score_500x64");
    for kind in ModelKind::ALL {
        let model = AnomalyModel::fit(kind, train.view(), &cfg, 0).unwrap();
        score.bench_function(kind.as_str(), |b| b.iter(|| model.score_batch(black_box(test.view())).unwrap()));
    }
    score.finish();
}

criterion_group!(benches, front_end, auc, models);
criterion_main!(benches);
