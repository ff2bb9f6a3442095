//! Command-line interface: `generate`, `train`, `sweep`, `gridsearch`,
//! `eval` and `report`.
//!
//! Exit status: 0 success, 1 usage or output error, 2 invalid input data,
//! 3 training divergence.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::{self, CheckpointError};
use crate::data::{generate_synthetic, load_dataset, make_folds, write_dataset, Dataset, DataError, FoldSplit, ParcelNetworkMap, SyntheticConfig};
use crate::eval::{emit_heatmap, network_report, sweep_csv, ReportError};
use crate::mask::read_binary_mask_csv;
use crate::train::{
    cross_validate, eval_report, grid_search, occlusion_sweep, run_variant, table_csv, variant_table, GridSpec, MethodVariant,
    ReportOptions, TrainConfig, TrainError, TrainedModel,
};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Diverged(String),
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Output(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Diverged(m) | CliError::Output(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::InvalidConfig(_) | TrainError::UnknownVariant(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sparg", version, about = "Sparse mask + VAE + GCN classification of connectivity matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic site-shifted dataset.
    Generate(GenerateArgs),
    /// Train one variant on one fold, every fold (--cv), or every variant (--variant all).
    Train(TrainArgs),
    /// Occlusion sweep CSV from a checkpoint.
    Sweep(SweepArgs),
    /// Grid search over loss weights and occlusion ratios on one fold.
    Gridsearch(GridArgs),
    /// Evaluation report JSON from a checkpoint.
    Eval(EvalArgs),
    /// Network-level counts and heatmap of a binary mask.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Synthetic-data config JSON; the desk-scale config when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Seed of the cross-validation split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args, Debug)]
struct TrainOpts {
    /// Training config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// λ1..λ4 (sparsity, MSE, KL, CE), comma separated.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    lambdas: Option<Vec<f64>>,
    /// ElasticNet mixing weight.
    #[arg(long)]
    lambda_mix: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Occlusion grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Fine-tune classifier and VAE after binarizing the mask.
    #[arg(long)]
    fine_tune: bool,
    /// Reconstruction loss on kept edges only.
    #[arg(long)]
    masked_residual_mse: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Method variant, or `all` for the comparison table.
    #[arg(long, default_value = "sparg")]
    variant: String,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    out: PathBuf,
    /// Train and evaluate every fold.
    #[arg(long)]
    cv: bool,
    /// Binarize at this ratio instead of selecting one by validation.
    #[arg(long)]
    ratio: Option<f64>,
    /// Worker threads for --cv and --variant all.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Checkpoint path, with or without the .ckpt extension.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Ratios, comma separated; the checkpoint's grid when omitted.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, default_value = "sparg")]
    variant: String,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    opts: TrainOpts,
    /// Candidate values shared by λ1..λ4, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Use one value for all four weights.
    #[arg(long)]
    tied: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Binarization ratio; selected by validation when omitted.
    #[arg(long)]
    ratio: Option<f64>,
    /// Sweep ratios, comma separated; the checkpoint's grid when omitted.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Parcel-to-network map CSV (`parcel,network`).
    #[arg(long)]
    map: Option<PathBuf>,
    /// Report JSON; stdout when omitted. A confusion CSV is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Binary mask CSV (`i,j,kept`).
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Runs the CLI on `argv` (program name first) and returns the exit status.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_cli_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a, out),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Eval(a) => eval(a, out),
        Command::Report(a) => report(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<SyntheticConfig>(p)?,
        None => SyntheticConfig::desk_scale(0),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dataset = generate_synthetic(&cfg)?;
    create_dir(&a.out)?;
    write_dataset(&dataset, &a.out)?;
    write_file(&a.out.join("generate_config.json"), pretty(&cfg))?;
    let summary = json!({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "command": "generate",
        "config": cfg,
        "subjects": dataset.subjects.len(),
        "k": dataset.k,
    });
    write_file(&a.out.join("summary.json"), pretty(&summary))
}

fn load_fold(d: &DataArgs) -> Result<(Dataset, FoldSplit, Vec<FoldSplit>), CliError> {
    let dataset = load_dataset(&d.data)?;
    let folds = make_folds(&dataset, d.split_seed)?;
    let fold = folds
        .get(d.fold)
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("fold {} out of range 0..{}", d.fold, folds.len())))?;
    Ok((dataset, fold, folds))
}

fn resolve_config(opts: &TrainOpts, variant: MethodVariant) -> Result<TrainConfig, CliError> {
    let mut c = match &opts.config {
        Some(p) => read_json::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    c.variant = variant;
    if let Some(s) = opts.seed {
        c.seed = s;
    }
    if let Some(l) = &opts.lambdas {
        c.weights = c.weights.with_lambdas([l[0], l[1], l[2], l[3]]);
    }
    if let Some(m) = opts.lambda_mix {
        c.weights.lambda_mix = m;
    }
    if let Some(v) = opts.lr {
        c.lr = v;
    }
    if let Some(v) = opts.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = opts.max_epochs {
        c.max_epochs = v;
    }
    if let Some(v) = opts.patience {
        c.patience = v;
    }
    if let Some(v) = &opts.ratios {
        c.occlusion_grid = v.clone();
    }
    if let Some(v) = opts.latent_dim {
        c.latent_dim = v;
    }
    c.fine_tune_after_binarize |= opts.fine_tune;
    c.masked_residual_mse |= opts.masked_residual_mse;
    c.validate()?;
    Ok(c)
}

fn parse_variant(s: &str) -> Result<MethodVariant, CliError> {
    s.parse().map_err(|e: TrainError| CliError::Usage(e.to_string()))
}

/// Writes checkpoint, history and mask CSVs of a model into `dir`.
fn write_run(dir: &Path, trained: &TrainedModel) -> Result<(), CliError> {
    create_dir(dir)?;
    write_file(&dir.join("config.json"), pretty(&trained.config))?;
    checkpoint::save(trained, dir.join("best")).map_err(|e| CliError::Output(e.to_string()))?;
    write_file(&dir.join("history.csv"), trained.history.to_csv())?;
    if let Some(mask) = &trained.model.mask {
        let name = if mask.is_binary() { "mask_binary.csv" } else { "mask_continuous.csv" };
        let path = dir.join(name);
        mask.write_csv(&path).map_err(|e| CliError::Output(e.to_string()))?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let (dataset, fold, folds) = load_fold(&a.data)?;
    if a.variant == "all" {
        if a.cv {
            return Err(CliError::Usage("--variant all runs a single fold; drop --cv".into()));
        }
        let base = resolve_config(&a.opts, MethodVariant::Sparg)?;
        let rows = variant_table(&base, &MethodVariant::ALL, &fold, &dataset, a.jobs)?;
        create_dir(&a.out)?;
        write_file(&a.out.join("table.csv"), table_csv(&rows))?;
        let summary = json!({
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "command": "train",
            "variant": "all",
            "fold": fold.fold,
            "split_seed": a.data.split_seed,
            "config": base,
            "rows": rows,
        });
        return write_file(&a.out.join("summary.json"), pretty(&summary));
    }
    let config = resolve_config(&a.opts, parse_variant(&a.variant)?)?;
    if let Some(r) = a.ratio {
        if !(0.0..1.0).contains(&r) {
            return Err(CliError::Usage(format!("--ratio {r} outside [0, 1)")));
        }
    }
    create_dir(&a.out)?;
    if a.cv {
        let cv = cross_validate(&config, &dataset, &folds, a.ratio, a.jobs)?;
        let mut per_fold = Vec::new();
        for f in &cv.folds {
            write_run(&a.out.join(format!("fold{}", f.fold)), &f.model)?;
            per_fold.push(json!({
                "fold": f.fold,
                "best_epoch": f.model.best_epoch,
                "selected": f.entry,
            }));
        }
        let summary = json!({
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "command": "train",
            "variant": config.variant,
            "cv": true,
            "split_seed": a.data.split_seed,
            "config": config,
            "folds": per_fold,
            "id_balacc": cv.id,
            "ood_balacc": cv.ood,
        });
        return write_file(&a.out.join("summary.json"), pretty(&summary));
    }

    let trained = run_variant(&config, &fold, &dataset)?;
    write_run(&a.out, &trained)?;
    let opts = ReportOptions {
        ratio: a.ratio,
        sweep_ratios: &config.occlusion_grid,
        map: None,
    };
    let (evaluated, report) = eval_report(&trained, &fold, &dataset, &opts)?;
    if !report.sweep.is_empty() {
        write_file(&a.out.join("sweep.csv"), sweep_csv(&report.sweep))?;
    }
    if let Some(mask) = evaluated.model.mask.as_ref().filter(|m| m.is_binary()) {
        mask.write_csv(a.out.join("mask_binary.csv"))
            .map_err(|e| CliError::Output(e.to_string()))?;
    }
    let summary = json!({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "command": "train",
        "variant": config.variant,
        "fold": fold.fold,
        "split_seed": a.data.split_seed,
        "config": config,
        "best_epoch": trained.best_epoch,
        "epochs_run": trained.history.epochs.len(),
        "initial_loss": trained.initial_loss,
        "final_loss": trained.final_loss,
        "evaluation": report,
    });
    write_file(&a.out.join("summary.json"), pretty(&summary))
}

fn check_k(trained: &TrainedModel, dataset: &Dataset) -> Result<(), CliError> {
    if trained.model.k != dataset.k {
        return Err(CliError::Data(format!(
            "checkpoint is for k={}, dataset has k={}",
            trained.model.k, dataset.k
        )));
    }
    Ok(())
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let trained = checkpoint::load(&a.checkpoint)?;
    let (dataset, fold, _) = load_fold(&a.data)?;
    check_k(&trained, &dataset)?;
    let ratios = a.ratios.unwrap_or_else(|| trained.config.occlusion_grid.clone());
    if trained.model.mask.as_ref().is_none_or(|m| m.is_binary()) {
        return Err(CliError::Usage("sweep needs a checkpoint with a continuous mask".into()));
    }
    let rows = occlusion_sweep(&trained, &ratios, &fold, &dataset)?;
    let csv = sweep_csv(&rows);
    match &a.out {
        Some(p) => write_file(p, csv),
        None => out.write_all(csv.as_bytes()).map_err(|e| CliError::Output(e.to_string())),
    }
}

fn gridsearch(a: GridArgs) -> Result<(), CliError> {
    let (dataset, fold, _) = load_fold(&a.data)?;
    let base = resolve_config(&a.opts, parse_variant(&a.variant)?)?;
    let mut spec = GridSpec::default_with_ratios(base.occlusion_grid.clone());
    if let Some(g) = &a.grid {
        spec.lambda1 = g.clone();
        spec.lambda2 = g.clone();
        spec.lambda3 = g.clone();
        spec.lambda4 = g.clone();
    }
    spec.tied = a.tied;
    let outcome = grid_search(&base, &spec, &fold, &dataset, a.jobs)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("grid.csv"), outcome.to_csv())?;
    write_file(&a.out.join("best_config.json"), pretty(&outcome.best_config))?;
    let summary = json!({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "command": "gridsearch",
        "fold": fold.fold,
        "split_seed": a.data.split_seed,
        "config": base,
        "grid": spec,
        "evaluations": outcome.rows.len(),
        "best": outcome.best,
    });
    write_file(&a.out.join("summary.json"), pretty(&summary))
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let trained = checkpoint::load(&a.checkpoint)?;
    let (dataset, fold, _) = load_fold(&a.data)?;
    check_k(&trained, &dataset)?;
    let map = a.map.as_ref().map(ParcelNetworkMap::load).transpose()?;
    let ratios = a.ratios.unwrap_or_else(|| trained.config.occlusion_grid.clone());
    let opts = ReportOptions {
        ratio: a.ratio,
        sweep_ratios: &ratios,
        map: map.as_ref(),
    };
    let (_, report) = eval_report(&trained, &fold, &dataset, &opts)?;
    let text = pretty(&report);
    match &a.out {
        Some(p) => {
            write_file(p, &text)?;
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
            write_file(&p.with_file_name(format!("{stem}_confusion.csv")), report.confusion_csv())
        }
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::Output(e.to_string())),
    }
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let mask = read_binary_mask_csv(&a.mask)?;
    let map = ParcelNetworkMap::load(&a.map)?;
    let counts = network_report(&mask, &map)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("network_counts.csv"), counts.to_csv())?;
    let matrix: Vec<Vec<f64>> = counts.counts.iter().map(|r| r.iter().map(|&c| c as f64).collect()).collect();
    emit_heatmap(&matrix, &counts.networks, &counts.networks, a.out.join("heatmap.svg"))?;
    let summary = json!({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "command": "report",
        "kept_edges": mask.kept_edges().map_or(0, <[usize]>::len),
        "total": counts.total(),
        "network_counts": counts,
    });
    write_file(&a.out.join("summary.json"), pretty(&summary))
}
