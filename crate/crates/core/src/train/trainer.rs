//! The training loop: shuffle, augment, forward, Dice loss, backward, Adam.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::adam::Adam;
use super::augment::{augment, AugmentConfig};
use super::checkpoint::save_checkpoint;
use super::loss::{dice_loss, DiceLossConfig};
use crate::arch::ULite;
use crate::data::{collate, SamplePair};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions};
use crate::nn::Mode;
use crate::rng::Rng;

pub const LOG_HEADER: &str = "epoch,loss,dice,iou,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Drives shuffling and augmentation; model initialisation is seeded
    /// by the model config.
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    /// Evaluate every this many epochs (and always after the last).
    pub eval_every: usize,
    pub augment: AugmentConfig,
    pub loss: DiceLossConfig,
    /// Write the seconds column as 0 so logs are reproducible byte for byte.
    pub no_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            checkpoint: None,
            log: None,
            eval_every: 1,
            augment: AugmentConfig::default(),
            loss: DiceLossConfig::default(),
            no_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::input("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::input("eval-every must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::input(format!("learning rate {} is invalid", self.lr)));
        }
        Ok(())
    }

    /// Where the best-validation checkpoint goes: `<stem>.best.<ext>`.
    pub fn best_path(&self) -> Option<PathBuf> {
        self.checkpoint.as_ref().map(|p| best_path(p))
    }
}

fn best_path(p: &Path) -> PathBuf {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match p.extension() {
        Some(ext) => format!("{stem}.best.{}", ext.to_string_lossy()),
        None => format!("{stem}.best"),
    };
    p.with_file_name(name)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Present on evaluation epochs.
    pub scores: Option<(f64, f64)>,
    pub seconds: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let (d, i) = match self.scores {
            Some((d, i)) => (d.to_string(), i.to_string()),
            None => (String::new(), String::new()),
        };
        format!("{},{},{},{},{:.3}", self.epoch, self.loss, d, i, self.seconds)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs: Vec<EpochLog>,
    pub best_dice: f64,
    pub best_epoch: usize,
}

/// Owns the model, optimizer and the data-order generator.
pub struct Trainer {
    pub model: ULite,
    pub adam: Adam,
    pub config: TrainConfig,
    rng: Rng,
}

impl Trainer {
    pub fn new(model: ULite, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: Adam::new(config.lr),
            rng: Rng::new(config.seed),
            model,
            config,
        })
    }

    /// Names the first tensor holding a NaN or infinity: the prediction,
    /// then each parameter and its gradient.
    fn diagnose(&self, pred: &crate::tensor::Tensor) -> Error {
        if let Err(e) = pred.ensure_finite("prediction") {
            return e;
        }
        for (name, p) in self.model.named_params() {
            if let Err(e) = p.value.ensure_finite(&name) {
                return e;
            }
            if let Err(e) = p.grad.ensure_finite(&format!("{name}.grad")) {
                return e;
            }
        }
        Error::NonFinite {
            tensor: "loss".into(),
            index: 0,
        }
    }

    /// One optimisation step on a batch; returns the loss.
    pub fn step(&mut self, batch: &[&SamplePair]) -> Result<f64> {
        let (x, y) = collate(batch)?;
        self.model.zero_grad();
        let cache = self.model.forward(&x, Mode::Train)?;
        let (loss, grad) = dice_loss(cache.output(), &y, &self.config.loss)?;
        if !loss.is_finite() {
            return Err(self.diagnose(cache.output()));
        }
        self.model.backward(&cache, &grad)?;
        self.adam.step(self.model.named_params_mut())?;
        Ok(loss)
    }

    /// One pass over `data` in a fresh shuffled order; returns the mean
    /// batch loss. The final batch may be short.
    pub fn run_epoch(&mut self, data: &[SamplePair]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::input("training set is empty"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let augmented = chunk
                .iter()
                .map(|&i| augment(&data[i], &self.config.augment, &mut self.rng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&SamplePair> = augmented.iter().collect();
            total += self.step(&refs)?;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.model, Some(&self.adam))
    }

    /// Trains for `config.epochs` epochs. Validation scores come from
    /// `val`, or from `train` when `val` is empty. Appends one log row per
    /// epoch, saves the best-scoring model next to the checkpoint and the
    /// final model at the checkpoint path.
    pub fn fit(&mut self, train: &[SamplePair], val: &[SamplePair]) -> Result<TrainSummary> {
        let score_set = if val.is_empty() { train } else { val };
        let mut log = match &self.config.log {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let mut f = File::create(p).map_err(|e| Error::io(p, e))?;
                writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(p, e))?;
                Some((p.clone(), f))
            }
            None => None,
        };
        let mut summary = TrainSummary {
            epochs: Vec::new(),
            best_dice: f64::NEG_INFINITY,
            best_epoch: 0,
        };
        for epoch in 1..=self.config.epochs {
            let start = Instant::now();
            let loss = self.run_epoch(train)?;
            let scores = if epoch % self.config.eval_every == 0 || epoch == self.config.epochs {
                let r = evaluate(&self.model, score_set, &EvalOptions::default())?;
                Some((r.mean_dice, r.mean_iou))
            } else {
                None
            };
            if let Some((dice, _)) = scores {
                if dice > summary.best_dice {
                    summary.best_dice = dice;
                    summary.best_epoch = epoch;
                    if let Some(best) = self.config.best_path() {
                        self.save(&best)?;
                    }
                }
            }
            let seconds = if self.config.no_timing {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            };
            let row = EpochLog {
                epoch,
                loss,
                scores,
                seconds,
            };
            if let Some((p, f)) = &mut log {
                writeln!(f, "{}", row.csv_row()).map_err(|e| Error::io(&*p, e))?;
                f.flush().map_err(|e| Error::io(&*p, e))?;
            }
            summary.epochs.push(row);
        }
        if let Some(p) = &self.config.checkpoint {
            self.save(p)?;
        }
        Ok(summary)
    }
}

/// Convenience wrapper: builds a [`Trainer`] and runs [`Trainer::fit`].
pub fn train_loop(
    model: ULite,
    train: &[SamplePair],
    val: &[SamplePair],
    config: TrainConfig,
) -> Result<(ULite, TrainSummary)> {
    let mut trainer = Trainer::new(model, config)?;
    let summary = trainer.fit(train, val)?;
    Ok((trainer.model, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ModelConfig;
    use crate::data::{synth_dataset, SynthConfig};

    fn tiny() -> ModelConfig {
        ModelConfig {
            widths: [4, 4, 4, 4, 4, 4],
            bottleneck_width: 4,
            n: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_invariants() {
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        let cfg = TrainConfig {
            checkpoint: Some("out/m.ckpt".into()),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.best_path().unwrap(), PathBuf::from("out/m.best.ckpt"));
    }

    #[test]
    fn writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(3, 1, &SynthConfig::with_size(64)).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            checkpoint: Some(dir.path().join("m.ckpt")),
            log: Some(dir.path().join("log.csv")),
            no_timing: true,
            ..TrainConfig::default()
        };
        let (_, summary) = train_loop(ULite::new(&tiny()).unwrap(), &data, &[], cfg).unwrap();
        assert_eq!(summary.epochs.len(), 2);
        assert!(summary.epochs.iter().all(|e| e.loss.is_finite()));
        let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], LOG_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2,") && lines[2].ends_with(",0.000"));
        assert!(dir.path().join("m.ckpt").is_file());
        assert!(dir.path().join("m.best.ckpt").is_file());
    }

    #[test]
    fn non_finite_loss_names_a_tensor() {
        let data = synth_dataset(2, 1, &SynthConfig::with_size(64)).unwrap();
        let mut model = ULite::new(&tiny()).unwrap();
        model.head.weight.value.data_mut()[0] = f32::NAN;
        let mut t = Trainer::new(model, TrainConfig::default()).unwrap();
        let err = t.run_epoch(&data).unwrap_err();
        match err {
            Error::NonFinite { tensor, .. } => assert_eq!(tensor, "prediction"),
            other => panic!("unexpected {other}"),
        }
    }
}
