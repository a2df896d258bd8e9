//! The operator x kernel x bottleneck ablation grid.

use std::fmt::Write as _;

use crate::arch::{count_config, list_variants, ModelConfig, ULite, Variant};
use crate::data::SamplePair;
use crate::error::Result;
use crate::metrics::{evaluate, EvalOptions};
use crate::train::{train_loop, TrainConfig};

pub const ABLATION_HEADER: &str = "variant,operator,n,addc,params,dice,iou";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub dice: f64,
    pub iou: f64,
}

impl AblationRow {
    pub fn csv_row(&self) -> String {
        let v = &self.variant;
        format!(
            "{v},{},{},{},{},{},{}",
            v.dw_variant, v.n, v.addc, self.params, self.dice, self.iou
        )
    }
}

/// Trains every variant of `base` from the same initial seed and scores it
/// on `val` (or on `train` when `val` is empty). Checkpoints and logs in
/// `train_cfg` are ignored.
pub fn run_ablation(
    base: &ModelConfig,
    train: &[SamplePair],
    val: &[SamplePair],
    train_cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let cfg = TrainConfig {
        checkpoint: None,
        log: None,
        ..train_cfg.clone()
    };
    let score_set = if val.is_empty() { train } else { val };
    list_variants()
        .into_iter()
        .map(|variant| {
            let model_cfg = variant.apply(base);
            let (model, _) = train_loop(ULite::new(&model_cfg)?, train, val, cfg.clone())?;
            let report = evaluate(&model, score_set, &EvalOptions::default())?;
            Ok(AblationRow {
                variant,
                params: count_config(&model_cfg).total(),
                dice: report.mean_dice,
                iou: report.mean_iou,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{ABLATION_HEADER}").unwrap();
    for r in rows {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}
