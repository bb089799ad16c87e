//! `mobmod`: malicious-or-benign cartoon clip classification from the
//! command line.
//!
//! Exit codes: 0 success, 1 error (including usage errors), 2 the run
//! finished but produced an empty result.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mobmod_core::apriori::{
    apriori_frequent_pairs, build_transactions, read_pairs, regenerate_from_pairs, write_pairs,
    DEFAULT_MIN_SUPPORT,
};
use mobmod_core::cache::{read_cache, write_cache, CacheKey};
use mobmod_core::dataset::load_manifest;
use mobmod_core::eval::{
    embed_clips, read_records, run_supervised, run_zero_shot, write_report_csv,
    write_report_markdown, ClipEmbedding, ExperimentReport,
};
use mobmod_core::parity::{check_bundle, PARITY_TOLERANCE};
use mobmod_core::projection::{
    gradient_check, load_projection, load_visual_projection, save_projection, train,
    GradCheckConfig,
};
use mobmod_core::prompt::{
    default_templates, generate_feature_templates, generate_pair_templates, load_template_library,
    write_template_library,
};
use mobmod_core::synth::{generate, SynthConfig};
use mobmod_core::tokenizer::load_vocabulary;
use mobmod_core::zero_shot::{class_embeddings, DEFAULT_LOGIT_SCALE};
use mobmod_core::{
    BackendConfig, BackendKind, Encoder, Pooling, ProjectionLayer, PromptSet, Split, Strategy,
    TokenLists, TrainConfig, Vocabulary,
};

use config::ConfigFile;

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "mobmod", version, about = "Classify cartoon clips as malicious or benign")]
struct Cli {
    /// Worker threads (defaults to MOBMOD_THREADS, then the CPU count)
    #[arg(long, global = true, env = "MOBMOD_THREADS")]
    threads: Option<usize>,

    /// Random seed for every seeded step
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML file supplying defaults for flags not given on the command line
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic class-tinted dataset and its manifest
    Synth(SynthArgs),
    /// Generate a prompt template file for one strategy
    GenPrompts(GenPromptsArgs),
    /// Evaluate prompts without training
    ZeroShot(ZeroShotArgs),
    /// Train the projection layer
    Train(TrainArgs),
    /// Evaluate a trained projection layer
    Eval(EvalArgs),
    /// Mine frequent token pairs from per-template accuracies
    Apriori(AprioriArgs),
    /// Compare analytic and finite-difference gradients
    CheckGrads(CheckGradsArgs),
    /// Compare the model-file backend with an export bundle's parity vectors
    CheckParity(CheckParityArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    clips: usize,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    size: u32,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenStrategy {
    Default,
    Context,
    Pairs,
    Features,
    AprioriRegenerate,
}

#[derive(Args)]
struct GenPromptsArgs {
    #[arg(long, value_enum)]
    strategy: GenStrategy,
    /// Token lists (TOML) for pairs and features
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// Frequent pairs CSV for apriori-regenerate
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Reference,
    Model,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendChoice>,
    #[arg(long)]
    image_model: Option<PathBuf>,
    #[arg(long)]
    text_model: Option<PathBuf>,
    /// Tokenizer vocabulary; the reference backend falls back to a
    /// built-in character vocabulary
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    merges: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Template library; defaults to the three standard prompts
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    pooling: Option<Pooling>,
    #[arg(long)]
    logit_scale: Option<f64>,
    /// Reuse pooled clip embeddings from this file, writing it if absent
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct ZeroShotArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Warm-start weights (MOBV visual projection file)
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value = "proj.bin")]
    out: PathBuf,
    /// Per-epoch metrics CSV
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    proj: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Args)]
struct AprioriArgs {
    /// Per-template report CSV
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_SUPPORT)]
    min_support: f64,
    /// Frequent pairs CSV
    #[arg(long)]
    out: PathBuf,
    /// Regenerated template library
    #[arg(long)]
    templates_out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckGradsArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, hide = true)]
    inject_bug: bool,
}

#[derive(Args)]
struct CheckParityArgs {
    #[arg(long)]
    bundle: PathBuf,
}

/// A run that completed without producing anything useful.
#[derive(Debug)]
struct EmptyResult(String);

impl std::fmt::Display for EmptyResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for EmptyResult {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<EmptyResult>().is_some() => {
            eprintln!("warning: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

struct Ctx {
    seed: u64,
    file: ConfigFile,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        file,
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::GenPrompts(a) => cmd_gen_prompts(a),
        Command::ZeroShot(a) => cmd_zero_shot(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Apriori(a) => cmd_apriori(a),
        Command::CheckGrads(a) => cmd_check_grads(&ctx, a),
        Command::CheckParity(a) => cmd_check_parity(a),
    }
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        clips: a.clips,
        frames: a.frames,
        size: a.size,
        seed: ctx.seed,
        train_fraction: a.train_fraction,
    };
    let entries = generate(&a.out, &cfg)?;
    println!(
        "wrote {} clips to {}",
        entries.len(),
        a.out.join(mobmod_core::synth::MANIFEST_NAME).display()
    );
    Ok(())
}

fn cmd_gen_prompts(a: GenPromptsArgs) -> anyhow::Result<()> {
    let tokens = || -> anyhow::Result<TokenLists> {
        let path = a
            .tokens
            .as_ref()
            .context("--tokens <file> is required for this strategy")?;
        Ok(TokenLists::load(path)?)
    };
    let set = match a.strategy {
        GenStrategy::Default => default_templates(),
        GenStrategy::Context => default_templates().subset(Strategy::Context),
        GenStrategy::Pairs => generate_pair_templates(&tokens()?)?,
        GenStrategy::Features => generate_feature_templates(&tokens()?)?,
        GenStrategy::AprioriRegenerate => {
            let path = a
                .pairs
                .as_ref()
                .context("--pairs <file> is required for apriori-regenerate")?;
            regenerate_from_pairs(&read_pairs(path)?)?
        }
    };
    write_template_library(&set, &a.out)?;
    println!("wrote {} templates to {}", set.len(), a.out.display());
    Ok(())
}

struct Backend {
    encoder: Box<dyn Encoder>,
    vocab: Vocabulary,
    config: BackendConfig,
    snapshot: Vec<(String, String)>,
}

fn build_backend(ctx: &Ctx, a: &BackendArgs) -> anyhow::Result<Backend> {
    let f = &ctx.file.backend;
    let kind = match a.backend {
        Some(k) => k,
        None => match f.kind.as_deref() {
            None | Some("reference") => BackendChoice::Reference,
            Some("model") => BackendChoice::Model,
            Some(other) => bail!("unknown backend {other:?} in config (allowed: reference, model)"),
        },
    };
    let image = a.image_model.clone().or_else(|| f.image_model.clone());
    let text = a.text_model.clone().or_else(|| f.text_model.clone());
    let vocab_path = a.vocab.clone().or_else(|| f.vocab.clone());
    let merges_path = a.merges.clone().or_else(|| f.merges.clone());

    let mut snapshot = Vec::new();
    let config = match kind {
        BackendChoice::Reference => {
            snapshot.push(("backend".into(), "reference".into()));
            BackendConfig::reference(ctx.seed)
        }
        BackendChoice::Model => {
            let image = image.context("--backend model requires --image-model")?;
            let text = text.context("--backend model requires --text-model")?;
            snapshot.push(("backend".into(), "model".into()));
            snapshot.push(("image_model".into(), image.display().to_string()));
            snapshot.push(("text_model".into(), text.display().to_string()));
            BackendConfig::model_files(image, text)
        }
    };
    let vocab = match (vocab_path, merges_path) {
        (Some(v), Some(m)) => {
            let vocab = load_vocabulary(&v, &m)?;
            log::info!(
                "loaded vocabulary: {} tokens, {} merges",
                vocab.token_count(),
                vocab.merge_count()
            );
            snapshot.push(("vocab".into(), v.display().to_string()));
            snapshot.push(("merges".into(), m.display().to_string()));
            vocab
        }
        (None, None) if config.kind == BackendKind::Reference => {
            snapshot.push(("vocab".into(), "builtin-character".into()));
            Vocabulary::character_level()
        }
        (None, None) => bail!("--backend model requires --vocab and --merges"),
        _ => bail!("--vocab and --merges must be given together"),
    };
    let encoder = config.build()?;
    Ok(Backend {
        encoder,
        vocab,
        config,
        snapshot,
    })
}

struct Data {
    set: PromptSet,
    frames: usize,
    pooling: Pooling,
    logit_scale: f64,
    snapshot: Vec<(String, String)>,
}

fn resolve_data(ctx: &Ctx, a: &DataArgs) -> anyhow::Result<Data> {
    let e = &ctx.file.eval;
    let frames = a.frames.or(e.frames).unwrap_or(16);
    if frames == 0 {
        bail!("--frames must be at least 1");
    }
    let pooling = match (a.pooling, e.pooling.as_deref()) {
        (Some(p), _) => p,
        (None, Some(s)) => s.parse().map_err(anyhow::Error::msg)?,
        (None, None) => Pooling::Mean,
    };
    let logit_scale = a.logit_scale.or(e.logit_scale).unwrap_or(DEFAULT_LOGIT_SCALE);
    if !(logit_scale > 0.0 && logit_scale.is_finite()) {
        bail!("--logit-scale must be positive, got {logit_scale}");
    }
    let (set, templates) = match &a.templates {
        Some(p) => (load_template_library(p)?, p.display().to_string()),
        None => (default_templates(), "builtin-default".to_string()),
    };
    let snapshot = vec![
        ("manifest".into(), a.manifest.display().to_string()),
        ("templates".into(), templates),
        ("n_templates".into(), set.len().to_string()),
        ("frames".into(), frames.to_string()),
        ("pooling".into(), pooling.to_string()),
        ("logit_scale".into(), logit_scale.to_string()),
    ];
    Ok(Data {
        set,
        frames,
        pooling,
        logit_scale,
        snapshot,
    })
}

fn clips_for_split(
    ctx: &Ctx,
    a: &DataArgs,
    data: &Data,
    backend: &Backend,
    split: Split,
) -> anyhow::Result<Vec<ClipEmbedding>> {
    let entries: Vec<_> = load_manifest(&a.manifest)?
        .into_iter()
        .filter(|e| e.split == split)
        .collect();
    if entries.is_empty() {
        bail!("manifest {} has no {split} clips", a.manifest.display());
    }
    let key = CacheKey {
        backend: backend.config.kind,
        seed: if backend.config.kind == BackendKind::Reference {
            ctx.seed
        } else {
            0
        },
        frames_per_clip: data.frames as u32,
        pooling: data.pooling,
    };
    if let Some(path) = &a.cache {
        if path.exists() {
            match read_cache(path, &key) {
                Ok(clips)
                    if clips.len() == entries.len()
                        && clips.iter().zip(&entries).all(|(c, e)| c.id == e.id) =>
                {
                    log::info!("using cached embeddings from {}", path.display());
                    return Ok(clips);
                }
                Ok(_) => log::warn!("cache {} covers different clips; rebuilding", path.display()),
                Err(e) => log::warn!("ignoring cache: {e}"),
            }
        }
    }
    let clips = embed_clips(&entries, backend.encoder.as_ref(), data.frames, data.pooling)?;
    if let Some(path) = &a.cache {
        write_cache(path, &key, &clips)?;
    }
    Ok(clips)
}

fn snapshot(
    command: &str,
    ctx: &Ctx,
    parts: &[&[(String, String)]],
) -> Vec<(String, String)> {
    let mut out = vec![
        ("command".to_string(), command.to_string()),
        ("seed".to_string(), ctx.seed.to_string()),
    ];
    for p in parts {
        out.extend(p.iter().cloned());
    }
    out
}

fn write_reports(
    report: &ExperimentReport,
    csv: &Path,
    markdown: Option<&Path>,
) -> anyhow::Result<()> {
    write_report_csv(report, csv)?;
    if let Some(md) = markdown {
        write_report_markdown(report, md)?;
    }
    for r in &report.rows {
        println!("{:<10} {:>6.1}%  ({} templates)", r.strategy.name(), 100.0 * r.accuracy, r.n_templates);
    }
    println!("{:<10} {:>6.1}%", "ensemble", 100.0 * report.ensemble_accuracy);
    Ok(())
}

fn cmd_zero_shot(ctx: &Ctx, a: ZeroShotArgs) -> anyhow::Result<()> {
    let backend = build_backend(ctx, &a.backend)?;
    let data = resolve_data(ctx, &a.data)?;
    let clips = clips_for_split(ctx, &a.data, &data, &backend, a.split)?;
    let report = run_zero_shot(
        &clips,
        &data.set,
        backend.encoder.as_ref(),
        &backend.vocab,
        data.logit_scale,
    )?;
    let split = [("split".to_string(), a.split.to_string())];
    let report = report.with_config(snapshot(
        "zero-shot",
        ctx,
        &[&backend.snapshot, &data.snapshot, &split],
    ));
    write_reports(&report, &a.report, a.markdown.as_deref())
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> anyhow::Result<()> {
    let t = &ctx.file.train;
    let backend = build_backend(ctx, &a.backend)?;
    let data = resolve_data(ctx, &a.data)?;
    let cfg = TrainConfig {
        epochs: a.epochs.or(t.epochs).unwrap_or(20),
        batch_size: a.batch.or(t.batch).unwrap_or(16),
        frames_per_clip: data.frames,
        learning_rate: a.lr.or(t.lr).unwrap_or(1e-4),
        logit_scale: data.logit_scale,
        seed: ctx.seed,
        pooling: data.pooling,
        max_steps: a.max_steps.or(t.max_steps),
    };
    cfg.validate()?;

    let clips = clips_for_split(ctx, &a.data, &data, &backend, Split::Train)?;
    let class_embs = class_embeddings(&data.set, backend.encoder.as_ref(), &backend.vocab)?;
    let samples: Vec<_> = clips.iter().map(|c| (c.feature.clone(), c.label)).collect();
    let init = match &a.init {
        Some(p) => load_visual_projection(p)?,
        None => ProjectionLayer::init(ctx.seed),
    };
    let outcome = train(&samples, &class_embs, init, &cfg)?;
    save_projection(&outcome.layer, &a.out)?;

    let train_snapshot = vec![
        ("epochs".to_string(), cfg.epochs.to_string()),
        ("batch".to_string(), cfg.batch_size.to_string()),
        ("lr".to_string(), format!("{:e}", cfg.learning_rate)),
        (
            "max_steps".to_string(),
            cfg.max_steps.map_or("none".to_string(), |m| m.to_string()),
        ),
        (
            "init".to_string(),
            a.init.as_ref().map_or("glorot".to_string(), |p| p.display().to_string()),
        ),
    ];
    if let Some(path) = &a.metrics {
        let mut out = String::new();
        for (k, v) in snapshot("train", ctx, &[&backend.snapshot, &data.snapshot, &train_snapshot]) {
            writeln!(out, "# {k}={v}").unwrap();
        }
        out.push_str("epoch,steps,loss,train_accuracy\n");
        for m in &outcome.epochs {
            writeln!(out, "{},{},{:.6},{:.6}", m.epoch, m.steps, m.mean_loss, m.train_accuracy).unwrap();
        }
        fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(last) = outcome.epochs.last() {
        println!(
            "trained {} steps: loss {:.6}, train accuracy {:.1}%",
            outcome.steps,
            last.mean_loss,
            100.0 * last.train_accuracy
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> anyhow::Result<()> {
    let backend = build_backend(ctx, &a.backend)?;
    let data = resolve_data(ctx, &a.data)?;
    let layer = load_projection(&a.proj)?;
    let clips = clips_for_split(ctx, &a.data, &data, &backend, a.split)?;
    let report = run_supervised(
        &clips,
        &data.set,
        &layer,
        backend.encoder.as_ref(),
        &backend.vocab,
        data.logit_scale,
    )?;
    let extra = [
        ("proj".to_string(), a.proj.display().to_string()),
        ("split".to_string(), a.split.to_string()),
    ];
    let report = report.with_config(snapshot(
        "eval",
        ctx,
        &[&backend.snapshot, &data.snapshot, &extra],
    ));
    write_reports(&report, &a.report, a.markdown.as_deref())
}

fn cmd_apriori(a: AprioriArgs) -> anyhow::Result<()> {
    if !(a.min_support > 0.0 && a.min_support <= 1.0) {
        bail!("--min-support must lie in (0, 1], got {}", a.min_support);
    }
    let records = read_records(&a.records)?;
    let transactions = build_transactions(&records)?;
    let pairs = if transactions.is_empty() {
        Vec::new()
    } else {
        apriori_frequent_pairs(&transactions, a.min_support)?
    };
    write_pairs(&pairs, &a.out)?;
    println!(
        "{} transactions, {} frequent pairs written to {}",
        transactions.len(),
        pairs.len(),
        a.out.display()
    );
    if pairs.is_empty() {
        return Err(EmptyResult(format!(
            "no frequent pairs at min support {}",
            a.min_support
        ))
        .into());
    }
    if let Some(path) = &a.templates_out {
        let set = match regenerate_from_pairs(&pairs) {
            Err(mobmod_core::Error::Empty(_)) => {
                return Err(EmptyResult(
                    "no frequent clip/context pair to regenerate templates from".into(),
                )
                .into())
            }
            r => r?,
        };
        write_template_library(&set, path)?;
        println!("wrote {} templates to {}", set.len(), path.display());
    }
    Ok(())
}

fn cmd_check_grads(ctx: &Ctx, a: CheckGradsArgs) -> anyhow::Result<()> {
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let cfg = GradCheckConfig {
        inject_bug: a.inject_bug,
        ..GradCheckConfig::default()
    };
    let mut worst = 0f64;
    for i in 0..a.trials as u64 {
        let r = gradient_check(ctx.seed.wrapping_add(i), &cfg)?;
        println!(
            "seed {:>4}: {} params, max relative error {:.3e}, max abs error {:.3e}",
            r.seed, r.params, r.max_rel_error, r.max_abs_error
        );
        worst = worst.max(r.max_rel_error);
    }
    let tolerance = 1e-4;
    println!("max relative error {worst:.3e} (tolerance {tolerance:.0e})");
    if worst >= tolerance {
        bail!("gradient check failed: {worst:.3e} >= {tolerance:.0e}");
    }
    println!("PASS");
    Ok(())
}

fn cmd_check_parity(a: CheckParityArgs) -> anyhow::Result<()> {
    let r = check_bundle(&a.bundle)?;
    println!(
        "{} image cases, {} text cases; max abs diff: features {:.3e}, image embed {:.3e}, text embed {:.3e}; token mismatches {}",
        r.image_cases,
        r.text_cases,
        r.max_feature_diff,
        r.max_image_embed_diff,
        r.max_text_embed_diff,
        r.token_mismatches
    );
    if !r.passed(PARITY_TOLERANCE) {
        bail!("parity check failed (tolerance {PARITY_TOLERANCE:.0e})");
    }
    println!("PASS");
    Ok(())
}
