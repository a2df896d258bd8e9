//! Binarization and overlap scores.
//!
//! With smoothing `eps`:
//!
//! ```text
//! dice = (2 TP + eps) / (2 TP + FP + FN + eps)
//! iou  = (TP + eps)   / (TP + FP + FN + eps)
//! ```
//!
//! The smoothing term sits in both numerator and denominator so that two
//! empty masks score 1. [`Smoothing::Strict`] puts it in the denominator
//! only.

use std::path::Path;

use crate::arch::ULite;
use crate::atomic::write_atomic;
use crate::data::SamplePair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f32 = 0.5;
pub const DEFAULT_EPS: f64 = 1e-5;

/// `pred >= threshold` becomes 1, everything else 0.
pub fn binarize(pred: &Tensor, threshold: f32) -> Tensor {
    crate::ops::map_unary(pred, |v| if v >= threshold { 1.0 } else { 0.0 })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Smoothing {
    #[default]
    Symmetric,
    /// Denominator only; two empty masks score 0.
    Strict,
}

fn check_binary(t: &Tensor, what: &str) -> Result<()> {
    match t.data().iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(k) => Err(Error::input(format!("{what} value {} at {k} is not binary", t.data()[k]))),
        None => Ok(()),
    }
}

impl ConfusionCounts {
    pub fn from_masks(pred: &Tensor, gt: &Tensor) -> Result<Self> {
        if pred.dims() != gt.dims() {
            return Err(Error::shape(format!("prediction {} vs ground truth {}", pred.dims(), gt.dims())));
        }
        check_binary(pred, "prediction")?;
        check_binary(gt, "ground truth")?;
        let mut c = Self::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p == 1.0, g == 1.0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    pub fn dice(&self, eps: f64, smoothing: Smoothing) -> f64 {
        let tp = self.tp as f64;
        let num = 2.0 * tp + if smoothing == Smoothing::Symmetric { eps } else { 0.0 };
        num / (2.0 * tp + self.fp as f64 + self.fn_ as f64 + eps)
    }

    pub fn iou(&self, eps: f64, smoothing: Smoothing) -> f64 {
        let tp = self.tp as f64;
        let num = tp + if smoothing == Smoothing::Symmetric { eps } else { 0.0 };
        num / (tp + self.fp as f64 + self.fn_ as f64 + eps)
    }
}

/// `(dice, iou)` of two binary masks with symmetric smoothing.
pub fn dice_iou(pred: &Tensor, gt: &Tensor, eps: f64) -> Result<(f64, f64)> {
    let c = ConfusionCounts::from_masks(pred, gt)?;
    Ok((c.dice(eps, Smoothing::Symmetric), c.iou(eps, Smoothing::Symmetric)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub threshold: f32,
    pub eps: f64,
    pub smoothing: Smoothing,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            eps: DEFAULT_EPS,
            smoothing: Smoothing::Symmetric,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub id: String,
    pub dice: f64,
    pub iou: f64,
    pub counts: ConfusionCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: Vec<SampleScore>,
    pub mean_dice: f64,
    pub mean_iou: f64,
    /// Scores of the pooled counts over all samples.
    pub global_dice: f64,
    pub global_iou: f64,
}

impl EvalReport {
    pub fn from_scores(samples: Vec<SampleScore>, opts: &EvalOptions) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input("cannot evaluate an empty dataset"));
        }
        let k = samples.len() as f64;
        let pooled = samples
            .iter()
            .fold(ConfusionCounts::default(), |acc, s| acc.merge(&s.counts));
        Ok(Self {
            mean_dice: samples.iter().map(|s| s.dice).sum::<f64>() / k,
            mean_iou: samples.iter().map(|s| s.iou).sum::<f64>() / k,
            global_dice: pooled.dice(opts.eps, opts.smoothing),
            global_iou: pooled.iou(opts.eps, opts.smoothing),
            samples,
        })
    }

    /// `(dice, iou)`: per-sample mean, or pooled when `global`.
    pub fn summary(&self, global: bool) -> (f64, f64) {
        if global {
            (self.global_dice, self.global_iou)
        } else {
            (self.mean_dice, self.mean_iou)
        }
    }

    /// `sample_id,dice,iou` rows followed by a `mean` row.
    pub fn to_csv(&self, global: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sample_id", "dice", "iou"])?;
        for s in &self.samples {
            w.write_record([s.id.clone(), s.dice.to_string(), s.iou.to_string()])?;
        }
        let (d, i) = self.summary(global);
        let label = if global { "global" } else { "mean" };
        w.write_record([label.to_string(), d.to_string(), i.to_string()])?;
        let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, global: bool) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv(global)?.as_bytes())
    }
}

/// Scores binary predictions against the samples' masks.
pub fn score(predictions: &[Tensor], samples: &[SamplePair], opts: &EvalOptions) -> Result<EvalReport> {
    if predictions.len() != samples.len() {
        return Err(Error::input(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    let scores = predictions
        .iter()
        .zip(samples)
        .map(|(p, s)| {
            let counts = ConfusionCounts::from_masks(p, &s.mask)?;
            Ok(SampleScore {
                id: s.id.clone(),
                dice: counts.dice(opts.eps, opts.smoothing),
                iou: counts.iou(opts.eps, opts.smoothing),
                counts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores(scores, opts)
}

/// Evaluation-mode binary masks, one `(1, 1, H, W)` tensor per sample.
pub fn predict_masks(model: &ULite, samples: &[SamplePair], threshold: f32) -> Result<Vec<Tensor>> {
    samples
        .iter()
        .map(|s| Ok(binarize(&model.infer(&s.image)?, threshold)))
        .collect()
}

/// Pure evaluation: batch norm uses running statistics and the model is
/// only borrowed immutably.
pub fn evaluate(model: &ULite, samples: &[SamplePair], opts: &EvalOptions) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::input("cannot evaluate an empty dataset"));
    }
    score(&predict_masks(model, samples, opts.threshold)?, samples, opts)
}
