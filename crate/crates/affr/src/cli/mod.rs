//! Command-line orchestration: reproducible experiment runs over the
//! ingest, training, post-processing and evaluation modules.
//!
//! Every command writes a `manifest.txt` into its output directory
//! recording the command line, the resolved configuration, input digests
//! and the seed; reruns with identical inputs reproduce identical outputs
//! (the manifest's wall time aside). Configuration precedence is
//! flags > config file > defaults; the config file is a flat
//! `key = value` text document keyed by long flag names.

mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{Split, Task, NUM_ACTION_UNITS};
use crate::error::{Error, Result};
use crate::io;
use crate::model;
use crate::pipeline;
use crate::postprocess::{AUThresholds, FilterKind, SmoothingConfig, WindowStyle};
use crate::synth::{generate_synthetic, SyntheticSpec, TaskMix};
use crate::train::{self, ClassWeighting, TrainConfig};

use manifest::Manifest;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn long_version() -> String {
    format!(
        "{TOOL_VERSION} (feature-format {}, checkpoint-format {})",
        io::FEATURE_FORMAT_VERSION,
        model::CHECKPOINT_VERSION
    )
}

#[derive(Parser)]
#[command(
    name = "affr",
    about = "Frame-level affect prediction: train, post-process and evaluate shallow task heads",
    version = TOOL_VERSION,
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key = value config file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for track-level parallelism (results are identical
    /// for any value).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Print tool and file-format versions.
    #[arg(long = "format-versions", global = true)]
    format_versions: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Train a single-task head.
    Train(TrainArgs),
    /// Train the multi-task head (all three output groups, masked losses).
    TrainMtl(TrainMtlArgs),
    /// Write challenge-format prediction files.
    Predict(PredictArgs),
    /// Tune per-AU decision thresholds on validation data.
    TuneThresholds(TuneArgs),
    /// Evaluate a checkpoint and write a metrics report.
    Eval(EvalArgs),
    /// Pretty-print a saved machine-readable report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tracks: Option<usize>,
    #[arg(long)]
    val_tracks: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Which labels to emit: expr|va|au|all.
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    va_noise: Option<f64>,
    /// 12 comma-separated AU base rates in (0,1).
    #[arg(long)]
    au_rates: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    task: Task,
    #[command(flatten)]
    common: TrainCommonArgs,
}

#[derive(Args)]
struct TrainMtlArgs {
    #[command(flatten)]
    common: TrainCommonArgs,
}

#[derive(Args)]
struct TrainCommonArgs {
    /// Split directory containing features/ and annotations/.
    #[arg(long)]
    train_data: PathBuf,
    #[arg(long)]
    val_data: PathBuf,
    /// embeddings|scores|concat.
    #[arg(long)]
    kind: Option<crate::data::FeatureKind>,
    /// Hidden-layer width; 0 means no hidden layer.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// computed|uniform class weighting.
    #[arg(long)]
    weighting: Option<ClassWeighting>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    task: Task,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of .affr feature files.
    #[arg(long)]
    features: PathBuf,
    /// Smoothing "kind,k", e.g. "mean,5"; omitted means frame-level.
    #[arg(long)]
    smooth: Option<String>,
    /// Window placement: centered|exclusive.
    #[arg(long)]
    window_style: Option<String>,
    /// Path to a 12-value thresholds file; omitted means uniform 0.5.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Validation split directory containing features/ and annotations/.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    smooth: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    task: Task,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split directory containing features/ and annotations/.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    smooth: Option<String>,
    #[arg(long)]
    window_style: Option<String>,
    /// Thresholds file path, or "tune" to tune on this split.
    #[arg(long)]
    thresholds: Option<String>,
    /// Evaluate the whole smoothing grid and write sweep.csv.
    #[arg(long)]
    sweep_smoothing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Path to a report.kv file.
    #[arg(long)]
    report: PathBuf,
}

/// Flat key = value config file used as a fallback layer below flags.
#[derive(Default)]
struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line '{line}' is not 'key = value'"))
            })?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("config key '{key}': bad value '{v}'")))
            })
            .transpose()
    }
}

fn resolve<T>(flag: Option<T>, config: Result<Option<T>>, default: T) -> Result<T> {
    Ok(flag.or(config?).unwrap_or(default))
}

fn parse_smoothing(smooth: Option<&str>, window_style: Option<&str>) -> Result<SmoothingConfig> {
    let mut cfg = match smooth {
        None => SmoothingConfig::identity(),
        Some(s) => {
            let (kind, k) = s
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("--smooth expects 'kind,k', got '{s}'")))?;
            let kind: FilterKind = kind.trim().parse().map_err(Error::Config)?;
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad kernel size '{k}'")))?;
            SmoothingConfig::new(kind, k)?
        }
    };
    if let Some(style) = window_style {
        cfg.window_style = match style {
            "centered" => WindowStyle::CenteredInclusive,
            "exclusive" => WindowStyle::CenterExclusive,
            other => {
                return Err(Error::Config(format!(
                    "unknown window style '{other}' (expected centered|exclusive)"
                )))
            }
        };
    }
    Ok(cfg)
}

fn parse_au_rates(s: &str) -> Result<[f64; NUM_ACTION_UNITS]> {
    let values: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad AU rate '{t}'")))
        })
        .collect::<Result<_>>()?;
    if values.len() != NUM_ACTION_UNITS {
        return Err(Error::Config(format!(
            "--au-rates needs 12 values, got {}",
            values.len()
        )));
    }
    let mut rates = [0.0; NUM_ACTION_UNITS];
    rates.copy_from_slice(&values);
    Ok(rates)
}

const CHECKPOINT_KIND_KEY: &str = "feature_kind";

fn load_checkpoint_with_kind(path: &Path) -> Result<(model::HeadModel, crate::data::FeatureKind)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model = model::checkpoint_from_string(&text)?;
    let kind = text
        .lines()
        .find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == CHECKPOINT_KIND_KEY).then(|| v.trim().parse().ok())?
        })
        .unwrap_or(crate::data::FeatureKind::EmbeddingsOnly);
    Ok((model, kind))
}

/// Parse arguments and run; the binary maps `Err` to exit status 1, while
/// clap itself exits with status 2 on usage errors.
pub fn run<I, S>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(|a| a.into()).collect();
    let cli = Cli::parse_from(argv.iter().cloned());
    if cli.format_versions {
        println!("affr {}", long_version());
        return Ok(());
    }
    let config = ConfigFile::load(cli.config.as_deref())?;
    let jobs = match cli.jobs {
        Some(j) => j,
        None => config.get::<usize>("jobs")?.unwrap_or(0),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Other(format!("thread pool: {e}")))?;
    let argv_display: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    pool.install(|| dispatch(cli.command, &config, &argv_display))
}

fn dispatch(command: Command, config: &ConfigFile, argv: &[String]) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args, config, argv),
        Command::Train(args) => cmd_train(Some(args.task), args.common, config, argv),
        Command::TrainMtl(args) => cmd_train(None, args.common, config, argv),
        Command::Predict(args) => cmd_predict(args, config, argv),
        Command::TuneThresholds(args) => cmd_tune(args, config, argv),
        Command::Eval(args) => cmd_eval(args, config, argv),
        Command::Report(args) => {
            let text = fs::read_to_string(&args.report).map_err(|e| Error::io(&args.report, e))?;
            let report = crate::metrics::MetricsReport::from_kv(&text)?;
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

fn cmd_synth(args: SynthArgs, config: &ConfigFile, argv: &[String]) -> Result<()> {
    let task = resolve(args.task, config.get("task"), Task::MultiTask)?;
    let au_rates = match args.au_rates.as_deref().map(parse_au_rates) {
        Some(r) => r?,
        None => match config.values.get("au_rates") {
            Some(s) => parse_au_rates(s)?,
            None => [0.3; NUM_ACTION_UNITS],
        },
    };
    let spec = SyntheticSpec {
        seed: resolve(args.seed, config.get("seed"), 0)?,
        num_tracks: resolve(args.tracks, config.get("tracks"), 4)?,
        val_tracks: resolve(args.val_tracks, config.get("val_tracks"), 2)?,
        frames_per_track: resolve(args.frames, config.get("frames"), 500)?,
        embedding_dim: resolve(args.dim, config.get("dim"), 32)?,
        task_mix: TaskMix::for_task(task),
        expr_separation: resolve(args.separation, config.get("separation"), 6.0)?,
        va_noise_sd: resolve(args.va_noise, config.get("va_noise"), 0.1)?,
        au_positive_rates: au_rates,
        dropout_rate: resolve(args.dropout, config.get("dropout"), 0.0)?,
    };

    let mut manifest = Manifest::start("synth", argv, spec.seed);
    let (train_ds, val_ds, truth) = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let train_dir = args.out.join("train");
    let val_dir = args.out.join("validation");
    io::save_dataset(&train_dir, &train_ds)?;
    io::save_dataset(&val_dir, &val_ds)?;
    let gt_path = args.out.join("ground_truth.txt");
    truth.save(&gt_path)?;

    manifest.config("tracks", spec.num_tracks);
    manifest.config("val_tracks", spec.val_tracks);
    manifest.config("frames", spec.frames_per_track);
    manifest.config("dim", spec.embedding_dim);
    manifest.config("task", task.name());
    manifest.config("separation", spec.expr_separation);
    manifest.config("va_noise", spec.va_noise_sd);
    manifest.config("dropout", spec.dropout_rate);
    manifest.output("train", &train_dir);
    manifest.output("validation", &val_dir);
    manifest.output("ground_truth", &gt_path);
    manifest.write(&args.out)
}

fn cmd_train(
    task: Option<Task>,
    args: TrainCommonArgs,
    config: &ConfigFile,
    argv: &[String],
) -> Result<()> {
    let task = task.unwrap_or(Task::MultiTask);
    let seed = resolve(args.seed, config.get("seed"), 0)?;
    let hidden = resolve(args.hidden, config.get("hidden"), 0)?;
    let train_config = TrainConfig {
        feature_kind: resolve(
            args.kind,
            config.get("kind"),
            crate::data::FeatureKind::EmbeddingsOnly,
        )?,
        learning_rate: resolve(args.lr, config.get("lr"), 0.001)?,
        max_epochs: resolve(args.epochs, config.get("epochs"), 20)?,
        batch_size: resolve(args.batch, config.get("batch"), 256)?,
        patience: resolve(args.patience, config.get("patience"), 5)?,
        seed,
        class_weighting: resolve(
            args.weighting,
            config.get("weighting"),
            ClassWeighting::Computed,
        )?,
    };

    let mut manifest = Manifest::start(
        if task == Task::MultiTask {
            "train-mtl"
        } else {
            "train"
        },
        argv,
        seed,
    );
    manifest.input_dir(&args.train_data)?;
    manifest.input_dir(&args.val_data)?;

    let train_ds = io::load_dataset(&args.train_data, task, Split::Train)?;
    let val_ds = io::load_dataset(&args.val_data, task, Split::Validation)?;
    let input_dim = train_config.feature_kind.input_dim(train_ds.embedding_dim);
    let hidden_units = (hidden > 0).then_some(hidden);
    let arch = train::single_task_arch(task, input_dim, hidden_units)?;
    let (model, log) = train::train(&train_ds, &val_ds, &arch, &train_config)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let checkpoint_path = args.out.join("checkpoint.txt");
    let mut checkpoint = model::checkpoint_to_string(&model);
    checkpoint.push_str(&format!(
        "{CHECKPOINT_KIND_KEY} = {}\n",
        match train_config.feature_kind {
            crate::data::FeatureKind::EmbeddingsOnly => "embeddings",
            crate::data::FeatureKind::ScoresOnly => "scores",
            crate::data::FeatureKind::Concatenated => "concat",
        }
    ));
    fs::write(&checkpoint_path, checkpoint).map_err(|e| Error::io(&checkpoint_path, e))?;
    let log_path = args.out.join("train_log.csv");
    fs::write(&log_path, train::log_to_csv(&log)).map_err(|e| Error::io(&log_path, e))?;

    manifest.config("task", task.name());
    manifest.config("hidden", hidden);
    manifest.config("lr", train_config.learning_rate);
    manifest.config("epochs", train_config.max_epochs);
    manifest.config("batch", train_config.batch_size);
    manifest.config("patience", train_config.patience);
    manifest.output("checkpoint", &checkpoint_path);
    manifest.output("train_log", &log_path);
    manifest.write(&args.out)?;

    if let Some(best) = log
        .iter()
        .max_by(|a, b| a.val_metric.partial_cmp(&b.val_metric).unwrap())
    {
        println!(
            "best validation metric {:.4} at epoch {} ({} epochs run)",
            best.val_metric,
            best.epoch,
            log.len()
        );
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs, config: &ConfigFile, argv: &[String]) -> Result<()> {
    let smoothing = parse_smoothing(
        args.smooth
            .as_deref()
            .or(config.values.get("smooth").map(String::as_str)),
        args.window_style.as_deref(),
    )?;
    let (model, kind) = load_checkpoint_with_kind(&args.checkpoint)?;
    let thresholds = match &args.thresholds {
        Some(path) => AUThresholds::load(path)?,
        None => AUThresholds::default(),
    };

    let mut manifest = Manifest::start("predict", argv, model.rng_seed);
    manifest.input_file(&args.checkpoint)?;
    manifest.input_dir(&args.features)?;

    let dataset = io::load_features(&args.features, None, args.task, Split::Test)?;
    let predicted = pipeline::predict_dataset(&model, &dataset, kind, &smoothing)?;
    let pred_dir = args.out.join("predictions");
    let paths = io::write_predictions(&predicted, args.task, &thresholds.0, &pred_dir)?;

    manifest.config("task", args.task.name());
    manifest.config("smooth", smoothing.describe());
    manifest.output("predictions", &pred_dir);
    manifest.write(&args.out)?;
    println!(
        "wrote {} prediction files to {}",
        paths.len(),
        pred_dir.display()
    );
    Ok(())
}

fn cmd_tune(args: TuneArgs, config: &ConfigFile, argv: &[String]) -> Result<()> {
    let smoothing = parse_smoothing(
        args.smooth
            .as_deref()
            .or(config.values.get("smooth").map(String::as_str)),
        None,
    )?;
    let (model, kind) = load_checkpoint_with_kind(&args.checkpoint)?;
    let mut manifest = Manifest::start("tune-thresholds", argv, model.rng_seed);
    manifest.input_file(&args.checkpoint)?;
    manifest.input_dir(&args.data)?;

    let dataset = io::load_dataset(&args.data, Task::ActionUnits, Split::Validation)?;
    let predicted = pipeline::predict_dataset(&model, &dataset, kind, &smoothing)?;
    let (probs, labels) = pipeline::collect_au_validation(&dataset, &predicted);
    if labels.is_empty() {
        return Err(Error::Other("no AU-labeled validation frames".into()));
    }
    let tuned = crate::postprocess::tune_au_thresholds(&probs, &labels);

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let path = args.out.join("thresholds.txt");
    tuned.save(&path)?;
    manifest.output("thresholds", &path);
    manifest.write(&args.out)?;
    println!("wrote tuned thresholds to {}", path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs, config: &ConfigFile, argv: &[String]) -> Result<()> {
    let smoothing = parse_smoothing(
        args.smooth
            .as_deref()
            .or(config.values.get("smooth").map(String::as_str)),
        args.window_style.as_deref(),
    )?;
    let (model, kind) = load_checkpoint_with_kind(&args.checkpoint)?;
    let mut manifest = Manifest::start("eval", argv, model.rng_seed);
    manifest.input_file(&args.checkpoint)?;
    manifest.input_dir(&args.data)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let dataset = io::load_dataset(&args.data, args.task, Split::Validation)?;

    let thresholds = match args.thresholds.as_deref() {
        None => AUThresholds::default(),
        Some("tune") => {
            let predicted =
                pipeline::predict_dataset(&model, &dataset, kind, &SmoothingConfig::identity())?;
            let (probs, labels) = pipeline::collect_au_validation(&dataset, &predicted);
            if labels.is_empty() {
                return Err(Error::Other(
                    "--thresholds tune: no AU-labeled frames".into(),
                ));
            }
            let tuned = crate::postprocess::tune_au_thresholds(&probs, &labels);
            let path = args.out.join("thresholds.txt");
            tuned.save(&path)?;
            manifest.output("thresholds", &path);
            tuned
        }
        Some(path) => AUThresholds::load(Path::new(path))?,
    };

    let report = pipeline::evaluate(&model, &dataset, kind, &smoothing, &thresholds)?;
    let kv_path = args.out.join("report.kv");
    fs::write(&kv_path, report.to_kv()).map_err(|e| Error::io(&kv_path, e))?;
    let txt_path = args.out.join("report.txt");
    fs::write(&txt_path, report.to_text()).map_err(|e| Error::io(&txt_path, e))?;
    manifest.output("report_kv", &kv_path);
    manifest.output("report_txt", &txt_path);

    if args.sweep_smoothing {
        let rows = pipeline::sweep_smoothing(&model, &dataset, kind, &thresholds)?;
        let mut csv = String::from("smoothing,p_expr,p_au,ccc_v,ccc_a,p_va,p_mtl\n");
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for (cfg, r) in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                cfg.describe(),
                cell(r.p_expr),
                cell(r.p_au),
                cell(r.ccc_v),
                cell(r.ccc_a),
                cell(r.p_va),
                cell(r.p_mtl),
            ));
        }
        let sweep_path = args.out.join("sweep.csv");
        fs::write(&sweep_path, csv).map_err(|e| Error::io(&sweep_path, e))?;
        manifest.output("sweep", &sweep_path);
    }

    manifest.config("task", args.task.name());
    manifest.config("smooth", smoothing.describe());
    manifest.write(&args.out)?;
    print!("{}", report.to_text());
    Ok(())
}
