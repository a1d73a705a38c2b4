//! `aad`: index, featurize, fit, score and evaluate machine-sound recordings.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aad_core::config::RunConfig;
use anyhow::Context as _;
use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "aad", version, about = "Acoustic anomaly detection on machine sounds")]
struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Use this single seed instead of the configured seed list.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Feature cache directory (default: `<out>/cache`).
    #[arg(long, global = true, env = "AAD_CACHE_DIR", value_name = "PATH")]
    cache_dir: Option<PathBuf>,
    /// Output directory (default: `aad-out`).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// More log output; repeat for debug detail.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Index a dataset tree into a manifest.
    Index(IndexArgs),
    /// Compute (or reuse cached) patch features.
    Featurize(FeaturizeArgs),
    /// Fit one detector on the training rows of a feature cache.
    Fit(FitArgs),
    /// Score clips with a fitted detector.
    Score(ScoreArgs),
    /// Run the multi-seed protocol, or rank an existing grid.
    Evaluate(EvaluateArgs),
    /// Write the rendered image of one patch as PPM.
    RenderDebug(RenderArgs),
}

#[derive(Args, Debug, Default)]
struct Source {
    /// Manifest written by `aad index`.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Dataset root; overrides `dataset_root` from the config.
    #[arg(long, value_name = "PATH")]
    root: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IndexArgs {
    /// Dataset root; overrides `dataset_root` from the config.
    #[arg(long, value_name = "PATH")]
    root: Option<PathBuf>,
    /// Record the seeded train/test split instead of an unsplit listing.
    #[arg(long)]
    split: bool,
    #[arg(long, value_name = "N")]
    n_test_normal: Option<usize>,
    /// Output file (default: `<out>/manifest.tsv`).
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[command(flatten)]
    source: Source,
    /// Extractor names from the config, or `downsample`. Default: all configured.
    #[arg(long, value_name = "NAME")]
    extractor: Vec<String>,
    /// ONNX graph for a single ad hoc extractor named by `--extractor`.
    #[arg(long, value_name = "PATH")]
    graph: Option<PathBuf>,
    #[arg(long, default_value = "input", value_name = "NAME")]
    input_node: String,
    #[arg(long, default_value = "features", value_name = "NAME")]
    output_node: String,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Feature cache written by `aad featurize`.
    #[arg(long, value_name = "PATH")]
    cache: PathBuf,
    /// gmm, vbgmm, isoforest, ocsvm or kde.
    #[arg(long, value_name = "KIND")]
    model: String,
    /// Restricts fitting to the manifest's training clips.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Output model file (default: `<out>/models/<extractor>-<kind>-seed<N>.adm`).
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Model file written by `aad fit`.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    cache: PathBuf,
    /// Clips to score; with a split manifest only the test clips.
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Output clip-score file (default: `<out>/scores/<model stem>.tsv`).
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    source: Source,
    /// Rank a tab-separated results grid instead of running experiments.
    #[arg(long, value_name = "PATH")]
    grid: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long, value_name = "PATH")]
    wav: PathBuf,
    /// Zero-based patch index.
    #[arg(long, default_value_t = 0)]
    patch: usize,
    /// Output image (default: `<out>/render/<stem>-p<N>.ppm`).
    #[arg(long, short, value_name = "PATH")]
    output: Option<PathBuf>,
}

/// Resolved settings shared by all commands.
pub struct Context {
    pub cfg: RunConfig,
    /// Directory that relative paths in the config refer to.
    pub base: PathBuf,
    pub out: PathBuf,
    pub cache_dir: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> anyhow::Result<Self> {
        let (mut cfg, base) = match &cli.config {
            Some(p) => {
                let cfg = RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (cfg, base)
            }
            None => (RunConfig::default(), PathBuf::from(".")),
        };
        if let Some(s) = cli.seed {
            cfg.seeds = vec![s];
        }
        if let Some(w) = cli.workers {
            cfg.workers = Some(w);
        }
        if let Some(o) = &cli.out {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(c) = &cli.cache_dir {
            cfg.cache_dir = Some(c.clone());
        }
        cfg.validate()?;
        let out = cfg
            .out_dir
            .as_ref()
            .map(|p| if cli.out.is_some() { p.clone() } else { base.join(p) })
            .unwrap_or_else(|| PathBuf::from("aad-out"));
        let cache_dir = match (&cli.cache_dir, &cfg.cache_dir) {
            (Some(c), _) => c.clone(),
            (None, Some(c)) => base.join(c),
            (None, None) => out.join("cache"),
        };
        Ok(Self { cfg, base, out, cache_dir })
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seeds[0]
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let ctx = Context::new(&cli)?;
    if let Some(n) = ctx.cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::Index(a) => commands::index(&ctx, a.root, a.split, a.n_test_normal, a.output),
        Command::Featurize(a) => commands::featurize(&ctx, &a.source, &a.extractor, a.graph, &a.input_node, &a.output_node),
        Command::Fit(a) => commands::fit(&ctx, &a.cache, &a.model, a.manifest.as_deref(), a.output),
        Command::Score(a) => commands::score(&ctx, &a.model, &a.cache, &a.manifest, a.output),
        Command::Evaluate(a) => match a.grid {
            Some(g) => commands::rank_grid(&ctx, &g),
            None => commands::evaluate(&ctx, &a.source),
        },
        Command::RenderDebug(a) => commands::render_debug(&ctx, &a.wav, a.patch, a.output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
