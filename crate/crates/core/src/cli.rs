//! Batch command-line interface: train, evaluate, the rotation/ablation
//! experiment grid, and the gradient-check suite.
//!
//! Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or data
//! error. Every command is deterministic given `--seed`.

use crate::augment::{MixConfig, MixScheme};
use crate::data::{load_csv, Split, TabularDataset, Task, TaskKind};
use crate::error::{Error, Result};
use crate::model::{gradcheck_suite, Checkpoint, Model, ModelConfig};
use crate::preprocess::FittedPipeline;
use crate::rotation::{gen_synthetic, run_rotation_experiment, ExperimentConfig, SyntheticKind, Variant};
use crate::train::{evaluate_metric, fit, split, PreparedDataset, TrainConfig, TrainingLog};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const RESULTS_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "tabspa",
    version,
    about = "Tabular prediction with importance-gated (semi-permeable) attention"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Preprocess a CSV, train a model, evaluate it on the held-out test split
    Train(TrainArgs),
    /// Evaluate a trained checkpoint on a CSV with the stored transforms
    Evaluate(EvaluateArgs),
    /// Run the rotation/ablation grid and emit plot-ready tables
    RotateExp(RotateArgs),
    /// Run the finite-difference gradient check suite
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Input CSV (first row is the header)
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction task: binary, multiclass or regression
    #[arg(long)]
    pub task: String,
    /// Name of the target column
    #[arg(long)]
    pub target: String,
    /// Augmentation scheme: none, hid, feat, both, mixup or cutmix
    #[arg(long, default_value = "none")]
    pub mix: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Flat JSON config; command-line flags override file values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for model.ckpt, log.jsonl and results.json
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated column names to force categorical
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train` (model.ckpt)
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the same feature columns and target as at training time
    #[arg(long)]
    pub data: PathBuf,
    /// Optional task check; must match the checkpoint when given
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Args)]
pub struct RotateArgs {
    /// Input CSV (alternative to --synthetic)
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Target column (required with --data)
    #[arg(long)]
    pub target: Option<String>,
    /// Task for --data (binary, multiclass, regression)
    #[arg(long)]
    pub task: Option<String>,
    /// Synthetic dataset kind: linear, xor or piecewise
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Rows for the synthetic dataset
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    /// Informative features for the synthetic dataset
    #[arg(long, default_value_t = 2)]
    pub informative: usize,
    /// Noise features for the synthetic dataset (defaults to --informative)
    #[arg(long)]
    pub noise: Option<usize>,
    /// Seed for the synthetic dataset generator
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model variants to run
    #[arg(long, value_delimiter = ',', default_value = "full,no-spa,no-iai,vanilla")]
    pub variants: Vec<String>,
    /// Seeds per grid cell
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Flat JSON config for the harness architecture and training budget
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for rotation_results.csv and summary.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test hook: corrupt one gradient so the suite must fail
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

/// Flat JSON config mirroring the model, training and mixing knobs.
/// Absent fields keep their defaults; command-line flags win over the file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub layers: Option<usize>,
    pub dim: Option<usize>,
    pub heads: Option<usize>,
    pub attn_dropout: Option<f64>,
    pub gamma: Option<f64>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub mix: Option<String>,
    pub alpha_h: Option<f64>,
    pub alpha_f: Option<f64>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Usage(format!("bad config file {}: {e}", p.display())))
            }
        }
    }

    fn apply_model(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.attn_dropout {
            cfg.attn_dropout = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
    }

    fn apply_train(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = &self.mix {
            cfg.mix.scheme = v.parse()?;
        }
        if let Some(v) = self.alpha_h {
            cfg.mix.alpha_h = v;
        }
        if let Some(v) = self.alpha_f {
            cfg.mix.alpha_f = v;
        }
        Ok(())
    }
}

/// Everything `evaluate` needs: the model checkpoint plus the fitted
/// preprocessing transforms and the data schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelBundle {
    pub checkpoint: Checkpoint,
    pub pipeline: FittedPipeline,
    pub target: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct TrainResults<'a> {
    version: u32,
    seed: u64,
    task: String,
    metric: &'a str,
    test_metric: f64,
    best_epoch: usize,
    best_val_metric: f64,
    epochs_run: usize,
    splits: SplitCounts,
    importance: &'a [f64],
    model_config: &'a ModelConfig,
    train_config: &'a TrainConfig,
}

#[derive(Serialize)]
struct SplitCounts {
    train: usize,
    val: usize,
    test: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::RotateExp(args) => cmd_rotate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn task_kind(s: &str) -> Result<TaskKind> {
    s.parse()
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let kind = task_kind(&args.task)?;
    let mix_scheme: MixScheme = args.mix.parse()?;
    let file_cfg = FileConfig::load(args.config.as_deref())?;

    let mut dataset = load_csv(&args.data, &args.target, kind, &args.categorical)?;
    split(&mut dataset, args.seed)?;
    let (prepared, pipeline) = PreparedDataset::prepare(&dataset)?;

    let mut model_cfg = ModelConfig::default_for(dataset.task);
    file_cfg.apply_model(&mut model_cfg);
    let mut train_cfg = TrainConfig {
        seed: args.seed,
        mix: MixConfig { scheme: mix_scheme, ..Default::default() },
        ..Default::default()
    };
    file_cfg.apply_train(&mut train_cfg)?;
    // the --mix flag wins over the config file
    train_cfg.mix.scheme = mix_scheme;
    train_cfg.seed = args.seed;

    let mut model = Model::new(model_cfg.clone(), prepared.importance.clone(), args.seed)?;
    let log = fit(&mut model, &prepared, &train_cfg)?;

    let test_rows = prepared.rows_in(Split::Test);
    let (tx, ty) = prepared.gather(&test_rows);
    let test_metric = evaluate_metric(&model, &tx, &ty, dataset.task)?;

    std::fs::create_dir_all(&args.out)?;
    write_log(&args.out.join("log.jsonl"), &log)?;
    let bundle = ModelBundle {
        checkpoint: model.to_checkpoint(),
        pipeline,
        target: args.target.clone(),
        seed: args.seed,
    };
    std::fs::write(args.out.join("model.ckpt"), serde_json::to_string(&bundle)?)?;

    let results = TrainResults {
        version: RESULTS_VERSION,
        seed: args.seed,
        task: dataset.task.to_string(),
        metric: dataset.task.metric_name(),
        test_metric,
        best_epoch: log.best_epoch,
        best_val_metric: log.best_val,
        epochs_run: log.epochs.len(),
        splits: SplitCounts {
            train: prepared.rows_in(Split::Train).len(),
            val: prepared.rows_in(Split::Val).len(),
            test: test_rows.len(),
        },
        importance: &prepared.importance.values,
        model_config: &model_cfg,
        train_config: &train_cfg,
    };
    std::fs::write(args.out.join("results.json"), serde_json::to_string_pretty(&results)?)?;
    println!(
        "{}",
        serde_json::json!({ "metric": dataset.task.metric_name(), "test_metric": test_metric })
    );
    Ok(())
}

fn write_log(path: &Path, log: &TrainingLog) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for e in &log.epochs {
        writeln!(f, "{}", serde_json::to_string(e)?)?;
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.model)?;
    let bundle: ModelBundle =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad checkpoint: {e}")))?;
    let model = Model::from_checkpoint(bundle.checkpoint.clone())?;

    let ck_kind = match model.config.task {
        Task::Binary => TaskKind::Binary,
        Task::Multiclass(_) => TaskKind::Multiclass,
        Task::Regression => TaskKind::Regression,
    };
    if let Some(flag) = &args.task {
        if task_kind(flag)? != ck_kind {
            return Err(Error::Usage(format!(
                "--task {flag} does not match the checkpoint task {}",
                model.config.task
            )));
        }
    }

    let force_cat: Vec<String> = bundle
        .pipeline
        .feature_names
        .iter()
        .zip(&bundle.pipeline.encoders)
        .filter(|(_, enc)| enc.is_some())
        .map(|(name, _)| name.clone())
        .collect();
    let dataset = load_csv(&args.data, &bundle.target, ck_kind, &force_cat)?;
    let columns = align_columns(&dataset, &bundle.pipeline.feature_names)?;
    if let Task::Multiclass(c) = model.config.task {
        if dataset.task != Task::Multiclass(c) {
            return Err(Error::Data(format!(
                "checkpoint expects {} classes but the data has task {}",
                c, dataset.task
            )));
        }
    }

    let features = bundle.pipeline.transform(&columns, dataset.n_rows())?;
    let metric = evaluate_metric(&model, &features, &dataset.labels, model.config.task)?;
    println!(
        "{}",
        serde_json::json!({
            "metric": model.config.task.metric_name(),
            "value": metric,
            "n_rows": dataset.n_rows(),
        })
    );
    Ok(())
}

/// Reorders the loaded columns to the fitted schema, failing loudly on any
/// mismatch between expected and found feature columns.
fn align_columns(
    dataset: &TabularDataset,
    expected: &[String],
) -> Result<Vec<crate::data::Column>> {
    let found = &dataset.feature_names;
    let missing: Vec<&String> = expected.iter().filter(|e| !found.contains(e)).collect();
    let extra: Vec<&String> = found.iter().filter(|f| !expected.contains(f)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Data(format!(
            "feature columns do not match the checkpoint; expected [{}], found [{}]",
            expected.join(", "),
            found.join(", ")
        )));
    }
    Ok(expected
        .iter()
        .map(|name| {
            let idx = found.iter().position(|f| f == name).expect("checked above");
            dataset.columns[idx].clone()
        })
        .collect())
}

fn cmd_rotate(args: RotateArgs) -> Result<()> {
    let variants: Vec<Variant> = args
        .variants
        .iter()
        .map(|v| v.parse())
        .collect::<Result<_>>()?;

    let dataset = match (&args.data, &args.synthetic) {
        (Some(path), None) => {
            let target = args
                .target
                .as_deref()
                .ok_or_else(|| Error::Usage("--target is required with --data".into()))?;
            let task = args
                .task
                .as_deref()
                .ok_or_else(|| Error::Usage("--task is required with --data".into()))?;
            load_csv(path, target, task_kind(task)?, &[])?
        }
        (None, Some(kind)) => {
            let kind: SyntheticKind = kind.parse()?;
            let noise = args.noise.unwrap_or(args.informative);
            gen_synthetic(kind, args.n, args.informative, noise, Task::Binary, args.seed)?
        }
        _ => {
            return Err(Error::Usage(
                "rotate-exp needs exactly one of --data or --synthetic".into(),
            ))
        }
    };

    let file_cfg = FileConfig::load(args.config.as_deref())?;
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = file_cfg.layers {
        cfg.layers = v;
    }
    if let Some(v) = file_cfg.dim {
        cfg.dim = v;
    }
    if let Some(v) = file_cfg.heads {
        cfg.heads = v;
    }
    if let Some(v) = file_cfg.attn_dropout {
        cfg.attn_dropout = v;
    }
    if let Some(v) = file_cfg.gamma {
        cfg.gamma = v;
    }
    file_cfg.apply_train(&mut cfg.train)?;

    let results = run_rotation_experiment(&dataset, &variants, args.seeds, &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("rotation_results.csv"), results.to_csv())?;
    let summary = serde_json::json!({
        "metric": results.metric_name,
        "per_variant": results.summary(),
    });
    std::fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let suite = gradcheck_suite(args.seed, args.corrupt)?;
    let mut all_ok = true;
    for (name, err) in &suite {
        let ok = *err < 1e-4;
        all_ok &= ok;
        println!("{name:<20} max_rel_err {err:>12.3e}  {}", if ok { "ok" } else { "FAIL" });
    }
    if all_ok {
        Ok(())
    } else {
        Err(Error::Numeric("gradient check failed".into()))
    }
}
