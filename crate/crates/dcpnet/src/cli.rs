//! The `dcpnet` command line.
//!
//! Exit status is 0 on success, 2 on a usage error and 1 when the command
//! itself fails.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use dcpnet_core::config::NetConfig;
use dcpnet_core::model::{init_params, Method, Supervision};
use dcpnet_core::optim::AdamConfig;
use dcpnet_core::protocol::Accounting;
use dcpnet_core::scene::{generate_dataset, Mode, SceneConfig};

use crate::error::Result;
use crate::eval::{
    default_size_grid, default_threshold_grid, evaluate, record, size_csv, sweep_request_size, sweep_request_threshold,
    threshold_csv, EvalConfig, MetricsRecord,
};
use crate::io::{load_checkpoint, load_dataset, save_checkpoint, save_dataset, Checkpoint, Dataset};
use crate::report::{emit_report, read_metrics, FrameDump};
use crate::train::{curve_csv, train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "dcpnet", version, about = "Collaborative perception experiments on a synthetic multi-platform world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset directory.
    Gen(GenArgs),
    /// Train one method on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Run distributed inference and write a report.
    Eval(EvalArgs),
    /// Request-threshold or request-size ablation.
    Sweep(SweepArgs),
    /// Merge metrics.json files into one report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: Mode,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub platforms: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Method to train; DCP-Net unless a baseline is named.
    #[arg(long, value_parser = parse_method, default_value = "dcp-net")]
    pub baseline: Method,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub request_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, value_enum, default_value_t = SupervisionArg::VictimOnly)]
    pub supervision: SupervisionArg,
    /// Validation dataset; adds a val_miou column to the loss curve.
    #[arg(long)]
    pub val: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SupervisionArg {
    VictimOnly,
    AllPlatforms,
}

impl From<SupervisionArg> for Supervision {
    fn from(s: SupervisionArg) -> Self {
        match s {
            SupervisionArg::VictimOnly => Supervision::VictimOnly,
            SupervisionArg::AllPlatforms => Supervision::AllPlatforms,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferenceArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub request_threshold: Option<f64>,
    #[arg(long, value_parser = parse_accounting, default_value = "feature_only")]
    pub comm_accounting: Accounting,
    /// Seeds the random-selection baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// No-Interaction checkpoint used as the CE reference.
    #[arg(long)]
    pub reference_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: InferenceArgs,
    /// Trained checkpoint; without one, freshly initialised parameters of
    /// `--baseline` are evaluated.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub baseline: Option<Method>,
    /// Number of leading frames to dump as images.
    #[arg(long, default_value_t = 0)]
    pub dump: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepKind {
    Threshold,
    Size,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: InferenceArgs,
    #[arg(long, value_enum, default_value_t = SweepKind::Threshold)]
    pub kind: SweepKind,
    /// DCP-Net checkpoint (threshold sweep).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Training set (size sweep).
    #[arg(long)]
    pub train_dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Request sizes for the size sweep; defaults to 2,8,32,128.
    #[arg(long, value_delimiter = ',')]
    pub request_dim: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// metrics.json files to merge.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: dcpnet_core::Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: dcpnet_core::Error| e.to_string())
}

fn parse_accounting(s: &str) -> std::result::Result<Accounting, String> {
    s.parse().map_err(|e: dcpnet_core::Error| e.to_string())
}

/// Parse `args` (program name first) and run; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = SceneConfig { platforms: a.platforms, ..SceneConfig::default() };
    let samples = generate_dataset(&cfg, a.mode, a.seed, a.samples)?;
    save_dataset(&samples, cfg.world.num_classes, &a.out)?;
    eprintln!("wrote {} {} samples to {}", samples.len(), a.mode, a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = load_dataset(&a.dataset)?;
    let mut cfg = TrainConfig {
        method: a.baseline,
        epochs: a.epochs,
        seed: a.seed,
        supervision: a.supervision.into(),
        net: NetConfig { num_classes: data.classes, ..NetConfig::default() },
        ..TrainConfig::default()
    };
    if let Some(r) = a.request_dim {
        cfg.net.request_dim = r;
    }
    if let Some(lr) = a.lr {
        cfg.adam = AdamConfig { lr, ..cfg.adam };
    }
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    cfg.net.validate()?;
    let val = a.val.as_deref().map(load_dataset).transpose()?;
    let eval_cfg = EvalConfig::new(data.classes);
    let out = train(&data.samples, val.as_ref().map(|v| (&v.samples[..], &eval_cfg)), &cfg, None)?;
    let platforms = data.samples.first().map_or(4, |s| s.platforms());
    save_checkpoint(&Checkpoint { method: cfg.method, net: cfg.net, platforms, params: out.params }, &a.ckpt)?;
    let path = a.ckpt.join("curve.csv");
    std::fs::write(&path, curve_csv(&out.curve)).map_err(|e| crate::Error::io(&path, e))?;
    if let Some(last) = out.curve.last() {
        eprintln!("trained {} for {} steps, final loss {:.4}", cfg.method, last.step, last.loss);
    }
    Ok(())
}

fn eval_config(a: &InferenceArgs, classes: usize) -> Result<EvalConfig> {
    let mut cfg = EvalConfig::new(classes);
    cfg.accounting = a.comm_accounting;
    cfg.seed = a.seed;
    if let Some(t) = a.request_threshold {
        cfg = cfg.with_threshold(t);
    }
    cfg.inference.smim.validate()?;
    Ok(cfg)
}

fn check_platforms(ckpt: &Checkpoint, data: &Dataset) -> Result<()> {
    match data.samples.first() {
        Some(s) if s.platforms() != ckpt.platforms => Err(dcpnet_core::Error::Config(format!(
            "checkpoint was trained for {} platforms, dataset has {}",
            ckpt.platforms,
            s.platforms()
        ))
        .into()),
        _ => Ok(()),
    }
}

fn reference_avg(path: Option<&Path>, data: &Dataset, cfg: &EvalConfig) -> Result<Option<f64>> {
    let Some(path) = path else { return Ok(None) };
    let ckpt = load_checkpoint(path)?;
    check_platforms(&ckpt, data)?;
    if ckpt.method != Method::NoInteraction {
        return Err(dcpnet_core::Error::Config(format!("reference checkpoint is {}, not no-interaction", ckpt.method)).into());
    }
    Ok(Some(evaluate(Method::NoInteraction, &data.samples, &ckpt.params, cfg)?.split.avg))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let data = load_dataset(&a.common.dataset)?;
    let cfg = eval_config(&a.common, data.classes)?;
    let ckpt = match (&a.ckpt, a.baseline) {
        (Some(path), method) => {
            let ckpt = load_checkpoint(path)?;
            if let Some(m) = method.filter(|&m| m != ckpt.method) {
                return Err(dcpnet_core::Error::Config(format!("checkpoint holds {}, not {m}", ckpt.method)).into());
            }
            check_platforms(&ckpt, &data)?;
            ckpt
        }
        (None, Some(method)) => {
            eprintln!("note: no checkpoint given, evaluating untrained {method}");
            let net = NetConfig { num_classes: data.classes, ..NetConfig::default() };
            let platforms = data.samples.first().map_or(4, |s| s.platforms());
            let params = init_params(method, &net, platforms, a.common.seed)?;
            Checkpoint { method, net, platforms, params }
        }
        (None, None) => {
            return Err(dcpnet_core::Error::Config("eval needs --ckpt or --baseline".into()).into());
        }
    };
    let run = evaluate(ckpt.method, &data.samples, &ckpt.params, &cfg)?;
    let mut rec = record(&run, &data.samples, &cfg)?;
    if ckpt.method == Method::NoInteraction {
        let avg = rec.avg;
        rec = rec.with_reference(avg);
    } else if let Some(r) = reference_avg(a.common.reference_ckpt.as_deref(), &data, &cfg)? {
        rec = rec.with_reference(r);
    }
    let dumps: Vec<FrameDump> = data
        .samples
        .iter()
        .zip(&run.predictions)
        .take(a.dump)
        .map(|(s, p)| FrameDump {
            index: s.index,
            view: s.views[s.victim].clone(),
            truth: s.masks[s.victim].clone(),
            prediction: p.clone(),
        })
        .collect();
    emit_report(std::slice::from_ref(&rec), &dumps, data.classes, &a.common.out)?;
    println!("{}", crate::report::table_csv(std::slice::from_ref(&rec)).trim_end());
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let data = load_dataset(&a.common.dataset)?;
    let cfg = eval_config(&a.common, data.classes)?;
    let reference = reference_avg(a.common.reference_ckpt.as_deref(), &data, &cfg)?;
    let out = &a.common.out;
    std::fs::create_dir_all(out).map_err(|e| crate::Error::io(out, e))?;
    let (name, csv) = match a.kind {
        SweepKind::Threshold => {
            let path = a.ckpt.as_deref().ok_or_else(|| dcpnet_core::Error::Config("threshold sweep needs --ckpt".into()))?;
            let ckpt = load_checkpoint(path)?;
            check_platforms(&ckpt, &data)?;
            if ckpt.method != Method::DcpNet {
                return Err(dcpnet_core::Error::Config(format!("threshold sweep needs a dcp-net checkpoint, got {}", ckpt.method)).into());
            }
            let rows = sweep_request_threshold(&data.samples, &ckpt.params, &default_threshold_grid(), &cfg, reference)?;
            ("threshold.csv", threshold_csv(&rows))
        }
        SweepKind::Size => {
            let path = a
                .train_dataset
                .as_deref()
                .ok_or_else(|| dcpnet_core::Error::Config("size sweep needs --train-dataset".into()))?;
            let train_set = load_dataset(path)?;
            let grid = if a.request_dim.is_empty() { default_size_grid() } else { a.request_dim.clone() };
            let tc = TrainConfig {
                epochs: a.epochs,
                seed: a.common.seed,
                net: NetConfig { num_classes: data.classes, ..NetConfig::default() },
                ..TrainConfig::default()
            };
            let rows = sweep_request_size(&train_set.samples, &data.samples, &grid, &tc, &cfg, reference)?;
            ("size.csv", size_csv(&rows))
        }
    };
    let path = out.join(name);
    std::fs::write(&path, &csv).map_err(|e| crate::Error::io(&path, e))?;
    print!("{csv}");
    Ok(())
}

/// Merge records; CE is recomputed against a No-Interaction row of the same
/// mode when one is present.
pub fn merge_records(inputs: Vec<MetricsRecord>) -> Vec<MetricsRecord> {
    let reference = |mode: &str| {
        inputs.iter().find(|r| r.mode == mode && r.method == Method::NoInteraction.title()).map(|r| r.avg)
    };
    inputs
        .iter()
        .map(|r| match reference(&r.mode) {
            Some(avg) => r.clone().with_reference(avg),
            None => r.clone(),
        })
        .collect()
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let mut all = Vec::new();
    for p in &a.inputs {
        all.extend(read_metrics(p)?);
    }
    let merged = merge_records(all);
    let classes = NetConfig::default().num_classes;
    emit_report(&merged, &[], classes, &a.out)?;
    print!("{}", crate::report::table_csv(&merged));
    Ok(())
}

