use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aad_core::audio::{decode_wav, index_dataset, split_train_test, DatasetIndex, Label, Manifest, Split};
use aad_core::config::ExtractorSpec;
use aad_core::embedding::{read_cache, DownsampleEmbedder, ExtractorId, FeatureMatrix, PatchEmbedder, Standardizer};
use aad_core::eval::{
    pool_by_clip, rank_summary, render_rank_summary, render_report, render_table, roc_auc, run_experiment,
    write_jsonl, ClipScore, ScoreGrid,
};
use aad_core::models::{load_model, save_model, AnomalyModel, ModelKind, SavedModel};
use aad_core::pipeline::Featurizer;
use aad_core::render::{extract_patches, write_ppm, PatchRenderer};
use aad_core::spectral::MelFrontEnd;
use aad_core::Error;
use anyhow::{bail, Context as _};

use crate::Context;

/// Exit status when the run finished but some grid cells failed.
const PARTIAL_FAILURE: u8 = 3;

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Writes through a temporary sibling so readers never see partial files.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    create_parent(path)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

fn dataset_root(ctx: &Context, root: Option<&Path>) -> anyhow::Result<PathBuf> {
    match (root, &ctx.cfg.dataset_root) {
        (Some(r), _) => Ok(r.to_path_buf()),
        (None, Some(r)) => Ok(ctx.base.join(r)),
        (None, None) => bail!("no dataset root: pass --root or set dataset_root in the config"),
    }
}

fn indexed(ctx: &Context, root: Option<&Path>) -> anyhow::Result<DatasetIndex> {
    let root = dataset_root(ctx, root)?;
    let index = index_dataset(&root)?;
    let index = index.filter(|m| ctx.cfg.wants_group(m.machine_type, m.machine_id));
    if index.is_empty() {
        return Err(Error::EmptyDataset(root).into());
    }
    Ok(index)
}

fn load_source(ctx: &Context, source: &crate::Source) -> anyhow::Result<DatasetIndex> {
    match &source.manifest {
        Some(m) => {
            let manifest = Manifest::read(m).with_context(|| format!("reading manifest {}", m.display()))?;
            Ok(manifest.index())
        }
        None => indexed(ctx, source.root.as_deref()),
    }
}

pub fn index(
    ctx: &Context,
    root: Option<PathBuf>,
    split: bool,
    n_test_normal: Option<usize>,
    output: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let index = indexed(ctx, root.as_deref())?;
    let (manifest, default_name) = if split {
        let seed = ctx.seed();
        let n = n_test_normal.unwrap_or(ctx.cfg.n_test_normal);
        let (train, test) = split_train_test(&index, seed, n)?;
        (Manifest::from_split(&train, &test, seed), format!("manifest-seed{seed}.tsv"))
    } else {
        (Manifest::unsplit(&index), "manifest.tsv".to_string())
    };
    let path = output.unwrap_or_else(|| ctx.out.join(default_name));
    let mut bytes = Vec::new();
    manifest.write_to(&mut bytes)?;
    write_atomic(&path, &bytes)?;

    let mut counts: BTreeMap<(String, String, &str), usize> = BTreeMap::new();
    for e in &manifest.entries {
        let m = &e.meta;
        *counts
            .entry((m.machine_type.to_string(), m.machine_id.to_string(), m.label.as_str()))
            .or_default() += 1;
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", path.display())?;
    for ((machine, id, label), n) in counts {
        writeln!(out, "{machine}\t{id}\t{label}\t{n}")?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Extractors selected by name from the config; `downsample` is always
/// available.
fn select_extractors(
    ctx: &Context,
    names: &[String],
    graph: Option<PathBuf>,
    input: &str,
    output: &str,
) -> anyhow::Result<Vec<ExtractorSpec>> {
    if let Some(graph) = graph {
        let [name] = names else {
            bail!("--graph needs exactly one --extractor naming the network");
        };
        let id: ExtractorId = name.parse()?;
        return Ok(vec![ExtractorSpec::Onnx {
            id,
            graph,
            input: input.to_string(),
            output: output.to_string(),
        }]);
    }
    if names.is_empty() {
        if ctx.cfg.extractors.is_empty() {
            return Ok(vec![ExtractorSpec::Downsample { cells: 8 }]);
        }
        return Ok(ctx.cfg.extractors.clone());
    }
    names
        .iter()
        .map(|n| {
            ctx.cfg
                .extractors
                .iter()
                .find(|e| e.name() == *n)
                .cloned()
                .or_else(|| (n == "downsample").then_some(ExtractorSpec::Downsample { cells: 8 }))
                .with_context(|| format!("extractor {n:?} is not configured"))
        })
        .collect()
}

fn build_embedder(ctx: &Context, spec: &ExtractorSpec, base: &Path) -> anyhow::Result<Box<dyn PatchEmbedder>> {
    match spec {
        ExtractorSpec::Downsample { cells } => Ok(Box::new(DownsampleEmbedder { cells: *cells })),
        ExtractorSpec::Onnx { .. } => onnx_embedder(ctx, spec, base),
    }
}

#[cfg(feature = "onnx")]
fn onnx_embedder(ctx: &Context, spec: &ExtractorSpec, base: &Path) -> anyhow::Result<Box<dyn PatchEmbedder>> {
    use aad_core::embedding::{load_backend, ImageEmbedder};
    let backend_spec = spec.backend(base).expect("onnx extractor");
    let backend = load_backend(&backend_spec)
        .with_context(|| format!("loading {}", backend_spec.graph_path.display()))?;
    Ok(Box::new(ImageEmbedder {
        backend,
        renderer: PatchRenderer::new(ctx.cfg.render),
        batch: ctx.cfg.batch_size,
    }))
}

#[cfg(not(feature = "onnx"))]
fn onnx_embedder(_: &Context, spec: &ExtractorSpec, _: &Path) -> anyhow::Result<Box<dyn PatchEmbedder>> {
    bail!("extractor {} needs a build with the `onnx` feature", spec.name())
}

fn featurize_all(
    ctx: &Context,
    index: &DatasetIndex,
    specs: &[ExtractorSpec],
    base: &Path,
) -> anyhow::Result<Vec<(PathBuf, FeatureMatrix, bool)>> {
    let front = MelFrontEnd::new(ctx.cfg.stft, ctx.cfg.mel)?;
    specs
        .iter()
        .map(|spec| {
            let embedder = build_embedder(ctx, spec, base)?;
            let featurizer = Featurizer {
                front_end: &front,
                render: ctx.cfg.render,
                embedder: embedder.as_ref(),
            };
            let done = featurizer
                .run_cached(&ctx.cache_dir, index)
                .with_context(|| format!("featurizing with {}", spec.name()))?;
            if done.2 {
                log::info!("{}: reusing {}", spec.name(), done.0.display());
            }
            Ok(done)
        })
        .collect()
}

pub fn featurize(
    ctx: &Context,
    source: &crate::Source,
    names: &[String],
    graph: Option<PathBuf>,
    input: &str,
    output: &str,
) -> anyhow::Result<ExitCode> {
    let index = load_source(ctx, source)?;
    let ad_hoc = graph.is_some();
    let specs = select_extractors(ctx, names, graph, input, output)?;
    let base = if ad_hoc { PathBuf::new() } else { ctx.base.clone() };
    let mut out = std::io::stdout().lock();
    for (path, m, hit) in featurize_all(ctx, &index, &specs, &base)? {
        let status = if hit { "cached" } else { "written" };
        writeln!(out, "{}\t{}\t{}\t{status}", path.display(), m.n_rows(), m.dim())?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Clips of `manifest` in `split`; an unsplit manifest yields all clips, or
/// only the normal ones when `normal_only`.
fn manifest_clips(manifest: &Manifest, split: Split, normal_only: bool) -> BTreeMap<String, Label> {
    let is_split = manifest.entries.iter().any(|e| e.split != Split::All);
    manifest
        .entries
        .iter()
        .filter(|e| if is_split { e.split == split } else { !normal_only || e.meta.label == Label::Normal })
        .map(|e| (e.meta.path.clone(), e.meta.label))
        .collect()
}

fn require_clips(features: &FeatureMatrix, clips: &BTreeMap<String, Label>) -> anyhow::Result<()> {
    let present: BTreeSet<_> = features.clip_ids().into_iter().collect();
    if let Some(missing) = clips.keys().find(|c| !present.contains(c.as_str())) {
        return Err(Error::MissingClip(missing.clone()).into());
    }
    Ok(())
}

pub fn fit(
    ctx: &Context,
    cache: &Path,
    model: &str,
    manifest: Option<&Path>,
    output: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let kind: ModelKind = model.parse()?;
    let features = read_cache(cache).with_context(|| format!("reading {}", cache.display()))?;
    let train = match manifest {
        Some(p) => {
            let manifest = Manifest::read(p)?;
            let clips = manifest_clips(&manifest, Split::Train, true);
            require_clips(&features, &clips)?;
            features.select_clips(|c| clips.contains_key(c))
        }
        None => {
            log::warn!("no manifest given: fitting on every row of {}", cache.display());
            features
        }
    };
    if train.n_rows() == 0 {
        bail!("no training rows selected");
    }
    let x = train.to_f64();
    let standardizer = Standardizer::fit(x.view())?;
    let z = standardizer.transform(x.view())?;
    let seed = ctx.seed();
    let model = AnomalyModel::fit(kind, z.view(), &ctx.cfg.model, seed)?;
    let path = output.unwrap_or_else(|| {
        ctx.out
            .join("models")
            .join(format!("{}-{}-seed{seed}.adm", train.extractor_id, kind))
    });
    create_parent(&path)?;
    save_model(
        &SavedModel {
            model,
            standardizer: Some(standardizer),
        },
        &path,
    )?;
    println!("{}\t{}\t{}x{}", path.display(), kind, train.n_rows(), train.dim());
    Ok(ExitCode::SUCCESS)
}

pub fn score(
    ctx: &Context,
    model_path: &Path,
    cache: &Path,
    manifest: &Path,
    output: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let saved = load_model(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let features = read_cache(cache).with_context(|| format!("reading {}", cache.display()))?;
    let clips = manifest_clips(&Manifest::read(manifest)?, Split::Test, false);
    require_clips(&features, &clips)?;
    let test = features.select_clips(|c| clips.contains_key(c));
    let x = test.to_f64();
    let z = match &saved.standardizer {
        Some(s) => s.transform(x.view())?,
        None => x,
    };
    let scores = saved.model.score_batch(z.view())?;
    let pooled = pool_by_clip(&test.rows, &scores.to_vec())?;

    let mut text = String::from("clip_id\tlabel\tscore\tn_patches\n");
    let mut clip_scores = Vec::with_capacity(pooled.len());
    for (clip_id, score, n_patches) in pooled {
        let label = clips[&*clip_id];
        writeln!(text, "{clip_id}\t{label}\t{score:?}\t{n_patches}")?;
        clip_scores.push(ClipScore {
            clip_id,
            label,
            score,
            n_patches,
        });
    }
    let stem = model_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let path = output.unwrap_or_else(|| ctx.out.join("scores").join(format!("{stem}.tsv")));
    write_atomic(&path, text.as_bytes())?;
    match roc_auc(&clip_scores) {
        Ok(r) => println!("{}\tauc={:.6}\tpos={}\tneg={}", path.display(), r.auc, r.n_pos, r.n_neg),
        Err(_) => println!("{}\tauc=-", path.display()),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn rank_grid(ctx: &Context, grid_path: &Path) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(grid_path).with_context(|| format!("reading {}", grid_path.display()))?;
    let grid = ScoreGrid::from_tsv(&text)?;
    let summary = rank_summary(&grid)?;
    let body = format!("{}\n{}", render_table(&grid, 1.0), render_rank_summary(&summary));
    write_atomic(&ctx.out.join("rank-summary.md"), body.as_bytes())?;
    print!("{body}");
    Ok(ExitCode::SUCCESS)
}

pub fn evaluate(ctx: &Context, source: &crate::Source) -> anyhow::Result<ExitCode> {
    let index = load_source(ctx, source)?;
    let specs = select_extractors(ctx, &[], None, "", "")?;
    let features: Vec<FeatureMatrix> = featurize_all(ctx, &index, &specs, &ctx.base)?
        .into_iter()
        .map(|(_, m, _)| m)
        .collect();
    let mut report = run_experiment(&index, &features, &ctx.cfg.experiment(), Some(&ctx.out.join("cells")))?;
    report.provenance = serde_json::to_value(&ctx.cfg)?;

    let mut jsonl = Vec::new();
    write_jsonl(&report, &mut jsonl)?;
    write_atomic(&ctx.out.join("report.jsonl"), &jsonl)?;
    write_atomic(&ctx.out.join("report.md"), render_report(&report).as_bytes())?;
    let grid = ScoreGrid::from_report(&report);
    write_atomic(&ctx.out.join("grid.tsv"), grid.to_tsv(100.0).as_bytes())?;
    match rank_summary(&grid) {
        Ok(summary) => write_atomic(&ctx.out.join("rank-summary.md"), render_rank_summary(&summary).as_bytes())?,
        Err(e) => log::warn!("no rank summary: {e}"),
    }
    write_atomic(&ctx.out.join("config.toml"), ctx.cfg.to_toml().as_bytes())?;

    let mut out = std::io::stdout().lock();
    for c in &report.cells {
        writeln!(out, "{}\t{:.4}", c.key, c.mean_auc)?;
    }
    if report.absent.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for a in &report.absent {
        eprintln!("failed cell {}: {}", a.key, a.reason);
    }
    Ok(ExitCode::from(PARTIAL_FAILURE))
}

pub fn render_debug(ctx: &Context, wav: &Path, patch: usize, output: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let wave = decode_wav(wav)?;
    let front = MelFrontEnd::new(ctx.cfg.stft, ctx.cfg.mel)?;
    let mel = front.process(&wave)?;
    let clip_id = wav.to_string_lossy();
    let patches = extract_patches(&mel, &clip_id, ctx.cfg.render.width, ctx.cfg.render.stride)?;
    let Some(p) = patches.get(patch) else {
        bail!("patch {patch} out of range: clip has {} patches", patches.len());
    };
    let range = mel
        .values_db
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let img = PatchRenderer::new(ctx.cfg.render).image(p, range)?;
    let stem = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let path = output.unwrap_or_else(|| ctx.out.join("render").join(format!("{stem}-p{patch}.ppm")));
    create_parent(&path)?;
    write_ppm(&path, &img)?;
    let (_, h, w) = img.dim();
    println!("{}\tframes {}..{}\t{w}x{h}", path.display(), p.frame_offset, p.frame_offset + ctx.cfg.render.width);
    Ok(ExitCode::SUCCESS)
}
