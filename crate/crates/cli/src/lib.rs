//! Command-line driver: dataset synthesis, training, evaluation, variant
//! comparison and gradient checks.
//!
//! Every command is deterministic given its configuration and seed. Human
//! summaries go to stdout; tables, curves and checkpoints go to files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use canet_core::checks::{check_head, run_model_check, run_op_suite, SuiteOptions};
use canet_core::dataset::{split_leave_one_subject_out, write_synth, Dataset, DatasetView, SynthConfig};
use canet_core::geometry::pitchyaw_to_vector;
use canet_core::model::{Model, VariantKind};
use canet_core::training::{
    evaluate, evaluate_constant, loss_curve_csv, run_ablation_suite, train_with, AblationConfig, EvalReport,
    TrainConfig,
};
use canet_core::Error;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

pub const CHECKPOINT_FILE: &str = "checkpoint.canw";
pub const LOSS_FILE: &str = "loss.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Core(#[from] Error),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Check(_) => EXIT_CHECK,
            CliError::Core(e) => match e {
                Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::UnknownVariant(_)
                | Error::UnknownSubject(_)
                | Error::EmptyDataset => EXIT_CONFIG,
                Error::Io(_)
                | Error::BadMagic { .. }
                | Error::UnsupportedVersion(_)
                | Error::Truncated { .. }
                | Error::Malformed(_)
                | Error::GeometryMismatch { .. } => EXIT_IO,
                Error::NonFinite(_) => EXIT_NUMERIC,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "canet", version, about = "Coarse-to-fine gaze estimation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset file.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint and loss curve.
    Train(TrainArgs),
    /// Score a checkpoint, or the constant-center predictor, on a dataset.
    Eval(EvalArgs),
    /// Train and score every model variant under one budget.
    Ablate(AblateArgs),
    /// Finite-difference checks of every op and of a whole toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (synth) or directory (other commands).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Channel width multiplier in (0, 1].
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub variant: Option<VariantKind>,
    #[arg(long)]
    pub hold_out_subject: Option<u16>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub subjects: Option<u16>,
    #[arg(long)]
    pub per_subject: Option<u32>,
    /// Pixel noise standard deviation in gray levels.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to score. Required unless `--constant` is given.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score the predictor that always answers straight ahead.
    #[arg(long)]
    pub constant: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Op-level relative tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Model-level relative tolerance.
    #[arg(long)]
    pub model_tol: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Flip the sign of one op's backward pass (test fixture).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

/// Contents of a `--config` file. Unknown keys are rejected at every level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub hold_out_subject: Option<u16>,
    /// Variants compared by `ablate`; all ten when absent.
    pub variants: Option<Vec<VariantKind>>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_json(&read_text(path)?)
    }

    /// File values (or defaults) with the common flags applied on top.
    pub fn resolve(common: &Common) -> CliResult<Self> {
        let mut cfg = match &common.config {
            Some(p) => Self::load(p)?,
            None => RunConfig {
                train: TrainConfig::toy(VariantKind::Canet, 0),
                ..RunConfig::default()
            },
        };
        if let Some(s) = common.seed {
            cfg.synth.seed = s;
            cfg.train.seed = s;
        }
        if let Some(s) = common.scale {
            cfg.train.width_scale = s;
        }
        if let Some(v) = common.variant {
            cfg.train.variant = v;
        }
        if common.hold_out_subject.is_some() {
            cfg.hold_out_subject = common.hold_out_subject;
        }
        Ok(cfg)
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.into(), source })
}

fn out_dir(common: &Common) -> CliResult<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    match Dataset::load(path) {
        Err(Error::Io(source)) => Err(CliError::Io { path: path.into(), source }),
        other => Ok(other?),
    }
}

/// Training and test views: all-but-one / one subject when a subject is
/// held out, otherwise the whole set for both.
fn views(ds: &Dataset, hold_out: Option<u16>) -> CliResult<(DatasetView<'_>, DatasetView<'_>)> {
    Ok(match hold_out {
        Some(s) => split_leave_one_subject_out(ds, s)?,
        None => (DatasetView::all(ds), DatasetView::all(ds)),
    })
}

fn print_report(label: &str, r: &EvalReport) {
    println!("{label}: {} samples, basic {:.3} deg, refined {:.3} deg", r.count, r.basic_deg, r.refined_deg);
    if let Some(w) = r.w_l {
        println!("  w_l mean {:.4}, std {:.4}", w.mean, w.std);
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let mut cfg = RunConfig::resolve(&a.common)?.synth;
    if let Some(n) = a.subjects {
        cfg.subjects = n;
    }
    if let Some(n) = a.per_subject {
        cfg.samples_per_subject = n;
    }
    if let Some(n) = a.noise {
        cfg.noise = n;
    }
    cfg.validate()?;
    let path = a.common.out.clone().unwrap_or_else(|| PathBuf::from("synth.gzds"));
    let ds = match write_synth(&cfg, &path) {
        Err(Error::Io(source)) => return Err(CliError::Io { path, source }),
        other => other?,
    };
    let size = fs::metadata(&path).map_err(|source| CliError::Io { path: path.clone(), source })?.len();
    println!("wrote {} samples ({size} bytes) to {}", ds.len(), path.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let run = RunConfig::resolve(&a.common)?;
    let mut cfg = run.train;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    let dir = out_dir(&a.common)?;
    let ds = load_dataset(&a.data)?;
    let (train_view, _) = views(&ds, run.hold_out_subject)?;
    let (model, mut store) = Model::build::<f32>(&cfg.model_config(ds.geometry()))?;
    println!(
        "training {} (scale {}) on {} samples for {} epochs",
        cfg.variant,
        cfg.width_scale,
        train_view.len(),
        cfg.epochs
    );
    let start = Instant::now();
    let curve = train_with(&model, &mut store, &train_view, &cfg, |s, _| {
        println!("epoch {:>3}  loss {:.5}  {:.0}s", s.epoch, s.mean_loss, start.elapsed().as_secs_f64());
    })?;
    write_file(&dir.join(LOSS_FILE), loss_curve_csv(&curve))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    match model.save_checkpoint(&store, &ckpt) {
        Err(Error::Io(source)) => return Err(CliError::Io { path: ckpt, source }),
        other => other?,
    }
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let run = RunConfig::resolve(&a.common)?;
    let dir = out_dir(&a.common)?;
    let ds = load_dataset(&a.data)?;
    let (_, test_view) = views(&ds, run.hold_out_subject)?;
    let report = if a.constant {
        let r = evaluate_constant(&test_view, pitchyaw_to_vector(0.0, 0.0)?)?;
        print_report("constant", &r);
        r
    } else {
        let path = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Config("eval needs --checkpoint or --constant".into()))?;
        let (model, store) = match Model::load_checkpoint::<f32>(path) {
            Err(Error::Io(source)) => return Err(CliError::Io { path: path.clone(), source }),
            other => other?,
        };
        let r = evaluate(&model, &store, &test_view)?;
        print_report(model.kind().name(), &r);
        r
    };
    write_file(&dir.join(REPORT_FILE), report.to_csv())?;
    Ok(())
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let run = RunConfig::resolve(&a.common)?;
    let mut cfg = AblationConfig {
        train: run.train,
        held_out: run.hold_out_subject.unwrap_or(0),
        variants: run.variants.unwrap_or_else(|| VariantKind::ALL.to_vec()),
    };
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.validate()?;
    let dir = out_dir(&a.common)?;
    let ds = load_dataset(&a.data)?;
    let table = run_ablation_suite(&ds, &cfg, |v, s| {
        if s.epoch == cfg.train.epochs {
            println!("{v}: final loss {:.5}", s.mean_loss);
        }
    })?;
    for r in &table.rows {
        println!("{:<20} refined {:.3} deg  basic {:.3} deg", r.variant.name(), r.report.refined_deg, r.report.basic_deg);
    }
    write_file(&dir.join(ABLATION_FILE), table.to_csv())?;
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let defaults = SuiteOptions::default();
    let opts = SuiteOptions {
        op_tol: a.tol.unwrap_or(defaults.op_tol),
        model_tol: a.model_tol.unwrap_or(defaults.model_tol),
        trials: a.trials.unwrap_or(defaults.trials),
        seed: a.common.seed.unwrap_or(defaults.seed),
        fault: a.inject_fault.clone(),
        ..defaults
    };
    if !(opts.op_tol > 0.0 && opts.model_tol > 0.0) || opts.trials == 0 {
        return Err(CliError::Config("tolerances must be positive and trials at least 1".into()));
    }
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut ops = run_op_suite(&opts)?;
    ops.push(check_head(&opts)?);
    for c in &ops {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<16} worst rel err {:.3e} (tol {:.0e}) {status}", c.op, c.max_rel_error, c.tol);
        if !c.passed() {
            failed.push(c.op.to_string());
        }
    }
    let variant = a.common.variant.unwrap_or(VariantKind::Canet);
    let model = run_model_check(variant, &opts)?;
    let worst = model.worst().map_or_else(|| "-".into(), |w| w.name.clone());
    let status = if model.passed() { "ok" } else { "FAIL" };
    println!(
        "model {variant:<10} worst rel err {:.3e} at {worst} (tol {:.0e}, {} coords, {} kinks skipped) {status}",
        model.max_rel_error(),
        opts.model_tol,
        model.coords_checked(),
        model.kinks_skipped()
    );
    if !model.passed() {
        failed.push(format!("model:{variant}"));
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}
