//! Segmentation and collaboration metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::scene::{Mode, SceneSample};
use crate::tensor::ClassMask;

/// `K×K` pixel counts, rows = ground truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn add(&mut self, pred: &ClassMask, target: &ClassMask) -> Result<(), Error> {
        if (pred.height, pred.width) != (target.height, target.width) {
            return Err(Error::Shape(format!(
                "prediction {}×{} vs target {}×{}",
                pred.height, pred.width, target.height, target.width
            )));
        }
        let k = self.classes;
        for (&p, &t) in pred.labels.iter().zip(&target.labels) {
            if p as usize >= k || t as usize >= k {
                return Err(Error::Input(format!("class id {} out of range for K = {k}", p.max(t))));
            }
        }
        for (&p, &t) in pred.labels.iter().zip(&target.labels) {
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), Error> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!("merging K = {} into K = {}", other.classes, self.classes)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Per-class IoU, `None` for classes absent from both targets and predictions.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        let k = self.classes;
        (0..k)
            .map(|c| {
                let tp = self.counts[c * k + c];
                let fn_: u64 = (0..k).map(|p| self.counts[c * k + p]).sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|t| self.counts[t * k + c]).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over present classes; 0 for an empty matrix.
    pub fn miou(&self) -> f64 {
        let present: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

/// mIoU pooled over a set of mask pairs.
pub fn miou(preds: &[ClassMask], targets: &[ClassMask], classes: usize) -> Result<f64, Error> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (p, t) in preds.iter().zip(targets) {
        cm.add(p, t)?;
    }
    Ok(cm.miou())
}

/// mIoU points gained per MBpf; `None` when nothing was transmitted.
pub fn collaboration_efficiency(miou_collab: f64, miou_baseline: f64, mbpf: f64) -> Option<f64> {
    (mbpf > 0.0).then(|| (miou_collab - miou_baseline) * 100.0 / mbpf)
}

/// mIoU on frames with a degraded victim, on the rest, and their frame-weighted mean.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitMiou {
    pub noisy: f64,
    pub normal: f64,
    pub avg: f64,
    pub noisy_frames: usize,
    pub normal_frames: usize,
}

/// Accumulates per-frame victim predictions into the noisy/normal split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitAccumulator {
    pub noisy: ConfusionMatrix,
    pub normal: ConfusionMatrix,
    pub noisy_frames: usize,
    pub normal_frames: usize,
}

impl SplitAccumulator {
    pub fn new(classes: usize) -> Self {
        SplitAccumulator {
            noisy: ConfusionMatrix::new(classes),
            normal: ConfusionMatrix::new(classes),
            noisy_frames: 0,
            normal_frames: 0,
        }
    }

    pub fn add(&mut self, pred: &ClassMask, target: &ClassMask, degraded: bool) -> Result<(), Error> {
        if degraded {
            self.noisy.add(pred, target)?;
            self.noisy_frames += 1;
        } else {
            self.normal.add(pred, target)?;
            self.normal_frames += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> SplitMiou {
        let (a, b) = (self.noisy_frames, self.normal_frames);
        let noisy = self.noisy.miou();
        let normal = self.normal.miou();
        let avg = if a + b == 0 { 0.0 } else { (a as f64 * noisy + b as f64 * normal) / (a + b) as f64 };
        SplitMiou { noisy, normal, avg, noisy_frames: a, normal_frames: b }
    }
}

/// What the victim did in one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VictimDecision {
    pub requested: bool,
    pub supporters: Vec<usize>,
}

/// `(detection, selection)` accuracy against Homo-CIS ground truth:
/// requesting exactly when degraded, and including the clean twin among the
/// supporters on degraded frames. Selection is `None` without degraded frames.
pub fn selection_accuracy(decisions: &[VictimDecision], samples: &[SceneSample]) -> Result<(f64, Option<f64>), Error> {
    if decisions.len() != samples.len() || samples.is_empty() {
        return Err(Error::Input(format!("{} decisions for {} samples", decisions.len(), samples.len())));
    }
    if let Some(s) = samples.iter().find(|s| s.mode != Mode::HomoCis) {
        return Err(Error::Input(format!("selection accuracy needs a homo-cis dataset, got {}", s.mode)));
    }
    let mut detect = 0usize;
    let (mut hits, mut degraded) = (0usize, 0usize);
    for (d, s) in decisions.iter().zip(samples) {
        let truth = s.victim_degraded();
        if d.requested == truth {
            detect += 1;
        }
        if truth {
            degraded += 1;
            let twin = s.clean_twin.ok_or_else(|| Error::Input(format!("degraded sample {} has no clean twin", s.index)))?;
            if d.supporters.contains(&twin) {
                hits += 1;
            }
        }
    }
    let select = (degraded > 0).then(|| hits as f64 / degraded as f64);
    Ok((detect as f64 / samples.len() as f64, select))
}
