//! Centralised training: every feature map is available to the loss and
//! DCP-Net fuses softly over all candidates.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use dcpnet_core::config::NetConfig;
use dcpnet_core::gradcheck::value_and_grad;
use dcpnet_core::graph::Graph;
use dcpnet_core::model::{centralized_loss, init_params, LossConfig, Method, Supervision};
use dcpnet_core::optim::{adam_step, AdamConfig, AdamState};
use dcpnet_core::params::ParamSet;
use dcpnet_core::scene::{sample_rng, SceneSample};

use crate::error::Result;
use crate::eval::{evaluate, EvalConfig};
use crate::io::{save_checkpoint, Checkpoint};

const GATE_STREAM: u64 = 0x6761_7465;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub net: NetConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub supervision: Supervision,
    /// Epochs at the start during which DCP-Net's confidence is replaced by a
    /// fair coin per sample, so the decoder learns both the local and the
    /// collaborative path before the gate is trained.
    pub gate_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::DcpNet,
            net: NetConfig::default(),
            adam: AdamConfig { lr: 2e-3, ..AdamConfig::default() },
            epochs: 20,
            batch_size: 8,
            seed: 0,
            supervision: Supervision::VictimOnly,
            gate_warmup_epochs: 4,
        }
    }
}

/// One optimizer step of the loss curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Victim-platform mIoU on the validation set, at the last step of an epoch.
    pub val_miou: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub curve: Vec<CurvePoint>,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,loss,val_miou\n");
    for p in curve {
        let v = p.val_miou.map_or(String::new(), |v| format!("{v}"));
        out.push_str(&format!("{},{},{}\n", p.step, p.loss, v));
    }
    out
}

/// Loss and gradients of one sample. `draw` seeds the random-selection pick.
pub fn sample_gradient(
    params: &ParamSet,
    method: Method,
    sample: &SceneSample,
    loss_cfg: LossConfig,
    draw: (u64, u64),
) -> Result<(f64, ParamSet)> {
    let names: Vec<String> = params.names().cloned().collect();
    let tensors: Vec<_> = params.iter().map(|(_, t)| t.clone()).collect();
    let (loss, grads) = value_and_grad(
        |g: &mut Graph, vars| {
            let bound = dcpnet_core::params::bound_from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let mut rng = sample_rng(draw.0, draw.1);
            centralized_loss(g, &bound, method, sample, loss_cfg, &mut rng)
        },
        &tensors,
    )?;
    let mut out = ParamSet::new();
    for (name, g) in names.into_iter().zip(grads) {
        out.insert(name, g);
    }
    Ok((loss, out))
}

/// Mean loss and gradient over a batch; per-sample work runs in parallel and
/// is reduced in batch order. With `gate_warmup` each sample draws its
/// confidence from {0, 1}.
pub fn batch_gradient(
    params: &ParamSet,
    method: Method,
    batch: &[&SceneSample],
    supervision: Supervision,
    gate_warmup: bool,
    draw_seed: u64,
) -> Result<(f64, ParamSet)> {
    let parts: Vec<(f64, ParamSet)> = batch
        .par_iter()
        .map(|s| {
            let mut loss_cfg = LossConfig::new(supervision);
            if gate_warmup {
                let coin = sample_rng(draw_seed ^ GATE_STREAM, s.index).gen_bool(0.5);
                loss_cfg.fixed_confidence = Some(if coin { 1.0 } else { 0.0 });
            }
            sample_gradient(params, method, s, loss_cfg, (draw_seed, s.index))
        })
        .collect::<Result<_>>()?;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (name, t) in total.iter_mut() {
            let src = g.get(name).unwrap().data();
            t.data_mut().iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for (_, t) in total.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, total))
}

/// Train from fresh parameters. With `val`, each epoch ends with a
/// distributed-inference pass; with `ckpt_dir`, each epoch writes
/// `epoch-{e}` there.
pub fn train(
    data: &[SceneSample],
    val: Option<(&[SceneSample], &EvalConfig)>,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.adam.validate()?;
    let platforms = data.first().map_or(4, |s| s.platforms());
    let params = init_params(cfg.method, &cfg.net, platforms, cfg.seed)?;
    train_from(params, data, val, cfg, ckpt_dir, |_| {})
}

/// [`train`] from given parameters, calling `progress` after every step.
pub fn train_from(
    mut params: ParamSet,
    data: &[SceneSample],
    val: Option<(&[SceneSample], &EvalConfig)>,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
    mut progress: impl FnMut(&CurvePoint),
) -> Result<TrainOutcome> {
    cfg.adam.validate()?;
    let mut curve = Vec::new();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, curve });
    }
    if data.is_empty() {
        return Err(dcpnet_core::Error::Input("training set is empty".into()).into());
    }
    if cfg.batch_size == 0 {
        return Err(dcpnet_core::Error::Config("batch size must be positive".into()).into());
    }
    let platforms = data[0].platforms();
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let last = batches.len() - 1;
        for (b, idx) in batches.into_iter().enumerate() {
            let batch: Vec<&SceneSample> = idx.iter().map(|&i| &data[i]).collect();
            let draw_seed = cfg.seed ^ ((epoch as u64) << 32 | b as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let warmup = epoch < cfg.gate_warmup_epochs;
            let (loss, grads) = batch_gradient(&params, cfg.method, &batch, cfg.supervision, warmup, draw_seed)?;
            adam_step(&mut params, &grads, &mut state, &cfg.adam)?;
            step += 1;
            let val_miou = match (b == last, val) {
                (true, Some((vs, ec))) => Some(evaluate(cfg.method, vs, &params, ec)?.split.avg),
                _ => None,
            };
            let point = CurvePoint { step, epoch, loss, val_miou };
            progress(&point);
            curve.push(point);
        }
        if let Some(dir) = ckpt_dir {
            let ckpt = Checkpoint { method: cfg.method, net: cfg.net.clone(), platforms, params: params.clone() };
            save_checkpoint(&ckpt, &dir.join(format!("epoch-{}", epoch + 1)))?;
        }
    }
    Ok(TrainOutcome { params, curve })
}
