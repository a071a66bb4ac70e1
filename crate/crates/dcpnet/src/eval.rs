//! Distributed-inference evaluation, baselines and ablation sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dcpnet_core::config::SmimConfig;
use dcpnet_core::metrics::{collaboration_efficiency, selection_accuracy, SplitAccumulator, SplitMiou, VictimDecision};
use dcpnet_core::model::Method;
use dcpnet_core::params::ParamSet;
use dcpnet_core::protocol::{mbpf, run_baseline_frame, run_frame, Accounting, CommLedger, Executor, InferenceConfig, Serial};
use dcpnet_core::scene::{Mode, SceneSample};
use dcpnet_core::ClassMask;

use crate::error::Result;

/// Runs per-platform protocol phases on the current rayon pool.
#[derive(Clone, Copy, Debug, Default)]
pub struct Threads;

impl Executor for Threads {
    fn map<T, F>(&self, n: usize, f: F) -> std::result::Result<Vec<T>, dcpnet_core::Error>
    where
        T: Send,
        F: Fn(usize) -> std::result::Result<T, dcpnet_core::Error> + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub inference: InferenceConfig,
    pub accounting: Accounting,
    /// Seeds the random-selection draws.
    pub seed: u64,
    pub classes: usize,
}

impl EvalConfig {
    pub fn new(classes: usize) -> Self {
        EvalConfig { inference: InferenceConfig::default(), accounting: Accounting::FeatureOnly, seed: 0, classes }
    }

    pub fn with_threshold(&self, t: f64) -> Self {
        let mut c = self.clone();
        c.inference.smim = SmimConfig { request_threshold: t, ..c.inference.smim };
        c
    }
}

/// Everything one evaluation pass produced, per frame in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRun {
    pub method: Method,
    pub split: SplitMiou,
    pub ledger: CommLedger,
    pub frames: usize,
    /// The victim's prediction in every frame.
    pub predictions: Vec<ClassMask>,
    /// The victim's request decision and supporters (DCP-Net only).
    pub decisions: Vec<VictimDecision>,
}

impl EvalRun {
    pub fn mbpf(&self, accounting: Accounting) -> f64 {
        mbpf(&self.ledger, self.frames, accounting).unwrap_or(0.0)
    }
}

fn frame_id(s: &SceneSample, k: usize) -> u32 {
    u32::try_from(s.index).unwrap_or(k as u32)
}

/// One frame from the victim's point of view.
pub fn eval_frame<E: Executor + ?Sized>(
    exec: &E,
    method: Method,
    s: &SceneSample,
    k: usize,
    params: &ParamSet,
    cfg: &EvalConfig,
) -> Result<(ClassMask, CommLedger, VictimDecision)> {
    let frame = frame_id(s, k);
    if method == Method::DcpNet {
        let out = run_frame(exec, s, params, &cfg.inference, frame)?;
        let d = &out.decisions[s.victim];
        let decision = VictimDecision { requested: d.requested, supporters: d.supporters.clone() };
        Ok((out.predictions[s.victim].clone(), out.ledger, decision))
    } else {
        let mut rng = dcpnet_core::scene::sample_rng(cfg.seed, s.index);
        let (pred, ledger) = run_baseline_frame(method, s, params, s.victim, frame, &mut rng)?;
        let requested = !ledger.entries.is_empty();
        let supporters = ledger.entries.iter().map(|e| e.src as usize).collect();
        Ok((pred, ledger, VictimDecision { requested, supporters }))
    }
}

/// Evaluate `method` on every sample, frames in parallel, results in order.
pub fn evaluate(method: Method, samples: &[SceneSample], params: &ParamSet, cfg: &EvalConfig) -> Result<EvalRun> {
    let per_frame: Vec<_> = samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| eval_frame(&Serial, method, s, k, params, cfg))
        .collect::<Result<_>>()?;
    collect_run(method, samples, per_frame, cfg)
}

/// Evaluate frames one after another, fanning out platforms within a frame
/// over `exec`.
pub fn evaluate_with<E: Executor + ?Sized>(
    exec: &E,
    method: Method,
    samples: &[SceneSample],
    params: &ParamSet,
    cfg: &EvalConfig,
) -> Result<EvalRun> {
    let per_frame: Vec<_> =
        samples.iter().enumerate().map(|(k, s)| eval_frame(exec, method, s, k, params, cfg)).collect::<Result<_>>()?;
    collect_run(method, samples, per_frame, cfg)
}

fn collect_run(
    method: Method,
    samples: &[SceneSample],
    per_frame: Vec<(ClassMask, CommLedger, VictimDecision)>,
    cfg: &EvalConfig,
) -> Result<EvalRun> {
    let mut acc = SplitAccumulator::new(cfg.classes);
    let mut ledger = CommLedger::new();
    let mut predictions = Vec::with_capacity(samples.len());
    let mut decisions = Vec::with_capacity(samples.len());
    for (s, (pred, l, d)) in samples.iter().zip(per_frame) {
        acc.add(&pred, &s.masks[s.victim], s.victim_degraded())?;
        ledger.extend(l);
        predictions.push(pred);
        decisions.push(d);
    }
    Ok(EvalRun { method, split: acc.finish(), ledger, frames: samples.len(), predictions, decisions })
}

/// One row of results. mIoU values are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub group: String,
    pub mode: String,
    pub frames: usize,
    pub noisy: f64,
    pub normal: f64,
    pub avg: f64,
    pub noisy_frames: usize,
    pub normal_frames: usize,
    /// MBpf under `accounting`.
    pub comm_cost_mbpf: f64,
    pub accounting: String,
    pub mbpf_feature_only: f64,
    pub mbpf_total: f64,
    /// mIoU points over the reference per MBpf; `None` when nothing was sent
    /// or no reference was given.
    pub ce: Option<f64>,
    pub reference_avg: Option<f64>,
    pub degradation_detection_accuracy: Option<f64>,
    pub selection_accuracy: Option<f64>,
    pub request_threshold: Option<f64>,
}

impl MetricsRecord {
    /// Fill in `ce` against a reference average mIoU.
    pub fn with_reference(mut self, reference_avg: f64) -> Self {
        self.reference_avg = Some(reference_avg);
        self.ce = collaboration_efficiency(self.avg, reference_avg, self.comm_cost_mbpf);
        self
    }
}

/// Summarise an evaluation run.
pub fn record(run: &EvalRun, samples: &[SceneSample], cfg: &EvalConfig) -> Result<MetricsRecord> {
    let mode = samples.first().map_or(Mode::HomoCis, |s| s.mode);
    let (detect, select) = if mode == Mode::HomoCis && run.method == Method::DcpNet && !samples.is_empty() {
        let (d, s) = selection_accuracy(&run.decisions, samples)?;
        (Some(d), s)
    } else {
        (None, None)
    };
    Ok(MetricsRecord {
        method: run.method.title().to_string(),
        group: run.method.group().to_string(),
        mode: mode.name().to_string(),
        frames: run.frames,
        noisy: run.split.noisy,
        normal: run.split.normal,
        avg: run.split.avg,
        noisy_frames: run.split.noisy_frames,
        normal_frames: run.split.normal_frames,
        comm_cost_mbpf: run.mbpf(cfg.accounting),
        accounting: cfg.accounting.name().to_string(),
        mbpf_feature_only: run.mbpf(Accounting::FeatureOnly),
        mbpf_total: run.mbpf(Accounting::Total),
        ce: None,
        reference_avg: None,
        degradation_detection_accuracy: detect,
        selection_accuracy: select,
        request_threshold: (run.method == Method::DcpNet).then_some(cfg.inference.smim.request_threshold),
    })
}

/// Evaluate one method and summarise it.
pub fn run_baseline(method: Method, samples: &[SceneSample], params: &ParamSet, cfg: &EvalConfig) -> Result<MetricsRecord> {
    let run = evaluate(method, samples, params, cfg)?;
    record(&run, samples, cfg)
}

/// Random draws of the random-selection baseline, for reproducibility checks.
pub fn random_picks(samples: &[SceneSample], seed: u64) -> Vec<usize> {
    samples
        .iter()
        .map(|s| {
            let mut rng = dcpnet_core::scene::sample_rng(seed, s.index);
            dcpnet_core::model::random_candidate(&mut rng, s.platforms(), s.victim)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub avg_miou: f64,
    pub mbpf: f64,
    pub ce: Option<f64>,
}

/// `{0, 0.1, …, 1.0}`.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// One DCP-Net inference pass per request threshold with shared parameters.
/// CE is taken against `reference_avg` when given.
pub fn sweep_request_threshold(
    samples: &[SceneSample],
    params: &ParamSet,
    grid: &[f64],
    cfg: &EvalConfig,
    reference_avg: Option<f64>,
) -> Result<Vec<ThresholdRow>> {
    grid.iter()
        .map(|&t| {
            if !(0.0..=1.0).contains(&t) {
                return Err(dcpnet_core::Error::Config(format!("threshold {t} outside [0, 1]")).into());
            }
            let run = evaluate(Method::DcpNet, samples, params, &cfg.with_threshold(t))?;
            let m = run.mbpf(cfg.accounting);
            Ok(ThresholdRow {
                threshold: t,
                avg_miou: run.split.avg,
                mbpf: m,
                ce: reference_avg.and_then(|r| collaboration_efficiency(run.split.avg, r, m)),
            })
        })
        .collect()
}

pub fn threshold_csv(rows: &[ThresholdRow]) -> String {
    let mut out = String::from("threshold,avg_miou,mbpf,ce\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.threshold, r.avg_miou, r.mbpf, fmt_opt(r.ce)));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub request_dim: usize,
    pub request_bytes: usize,
    pub avg_miou: f64,
    pub mbpf: f64,
    pub ce: Option<f64>,
}

/// `{2, 8, 32, 128}`.
pub fn default_size_grid() -> Vec<usize> {
    vec![2, 8, 32, 128]
}

/// Retrain DCP-Net for each request size and evaluate it on `val`.
pub fn sweep_request_size(
    train_set: &[SceneSample],
    val: &[SceneSample],
    grid: &[usize],
    train_cfg: &crate::train::TrainConfig,
    cfg: &EvalConfig,
    reference_avg: Option<f64>,
) -> Result<Vec<SizeRow>> {
    grid.iter()
        .map(|&r| {
            let mut tc = train_cfg.clone();
            tc.method = Method::DcpNet;
            tc.net.request_dim = r;
            tc.net.validate()?;
            let out = crate::train::train(train_set, None, &tc, None)?;
            let run = evaluate(Method::DcpNet, val, &out.params, cfg)?;
            let m = run.mbpf(cfg.accounting);
            Ok(SizeRow {
                request_dim: r,
                request_bytes: 4 * r,
                avg_miou: run.split.avg,
                mbpf: m,
                ce: reference_avg.and_then(|x| collaboration_efficiency(run.split.avg, x, m)),
            })
        })
        .collect()
}

pub fn size_csv(rows: &[SizeRow]) -> String {
    let mut out = String::from("request_dim,request_bytes,avg_miou,mbpf,ce\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.request_dim, r.request_bytes, r.avg_miou, r.mbpf, fmt_opt(r.ce)));
    }
    out
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x}"))
}
