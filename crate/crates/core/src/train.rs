//! Mini-batch training with periodic checkpoints and validation.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, Progress};
use crate::data::{batch_pad, EncodedDialog, PaddedBatch};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, Report};
use crate::model::{loss_total, mix_seed, DialogGold, LossBreakdown, Model};
use crate::optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_main: f64,
    pub lr_word: f64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub max_epochs: u64,
    /// Stop after this many optimizer steps in total, if set.
    pub max_steps: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_main: 1e-3,
            lr_word: 1e-4,
            batch_size: 32,
            checkpoint_every: 16,
            max_epochs: 30,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_main > 0.0 && self.lr_word > 0.0) {
            return Err(Error::Usage("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::Usage(
                "batch size and checkpoint interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Scores `model` on `dialogs` without dropout.
pub fn evaluate(model: &Model, dialogs: &[EncodedDialog]) -> Result<(Report, LossBreakdown)> {
    let schema = &model.config().schema;
    let mut utt = ConfusionMatrix::new(schema.emotions.len());
    let mut sat = ConfusionMatrix::new(schema.satisfaction.len());
    let mut curve = ConfusionMatrix::new(schema.curves.len());
    let mut preds = Vec::with_capacity(dialogs.len());
    for d in dialogs {
        let p = model.forward_dialog(&d.utterances)?;
        for (probs, &gold) in p.utterance_probs.iter().zip(&d.emotions) {
            utt.accumulate_probs(gold, probs)?;
        }
        if let Some(s) = d.satisfaction {
            sat.accumulate_probs(s, &p.satisfaction)?;
        }
        if let Some(c) = d.curve {
            curve.accumulate_probs(c, &p.curve)?;
        }
        preds.push(p);
    }
    let golds: Vec<DialogGold> = dialogs.iter().map(DialogGold::from).collect();
    let loss = loss_total(&preds, &golds)?;
    Ok((Report::from_matrices(&utt, &sat, &curve, dialogs.len())?, loss))
}

/// Summary of a [`Trainer::run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    /// Training loss (with dropout) of every step taken in this call.
    pub losses: Vec<f64>,
    /// Final validation report, when validation data was given.
    pub validation: Option<Report>,
}

/// Owns the model and optimizer for one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: Adam,
    pub progress: Progress,
    pub config: TrainConfig,
    /// Run description embedded in every checkpoint.
    pub echo: serde_json::Value,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(model.params(), config.lr_main, config.lr_word)?;
        let echo = serde_json::to_value(&config).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Trainer {
            model,
            optimizer,
            progress: Progress::start(),
            config,
            echo,
            out_dir: None,
        })
    }

    /// Continues from a checkpoint that carries optimizer state.
    pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = ckpt
            .optimizer
            .ok_or_else(|| Error::Usage("checkpoint has no optimizer state".into()))?;
        let echo = serde_json::to_value(&config).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Trainer {
            model: ckpt.model,
            optimizer,
            progress: ckpt.progress.unwrap_or_else(Progress::start),
            config,
            echo,
            out_dir: None,
        })
    }

    /// Directory for checkpoints and the metrics log; created if missing.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    /// The batches of `epoch`, in training order.
    pub fn epoch_batches(&self, data: &[EncodedDialog], epoch: u64) -> Vec<PaddedBatch> {
        batch_pad(data, self.config.batch_size, mix_seed(self.config.seed, epoch))
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &PaddedBatch) -> Result<LossBreakdown> {
        let seed = mix_seed(self.config.seed ^ 0x5DEE_CE66, self.progress.step);
        let loss = self.model.accumulate_batch_gradients(batch, Some(seed))?;
        if !loss.total().is_finite() {
            self.model.params_mut().clear_grads();
            return Err(Error::Numeric(format!(
                "loss is {} at step {} (utterance part {}, dialog part {})",
                loss.total(),
                self.progress.step,
                loss.j,
                loss.u
            )));
        }
        self.optimizer.step(self.model.params_mut())?;
        self.progress.step += 1;
        Ok(loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(
            path,
            &self.model,
            Some(&self.optimizer),
            Some(&self.progress),
            Some(&self.echo),
        )
    }

    fn log(&self, line: &str) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        let path = dir.join("metrics.log");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }

    /// Validates, logs, and keeps the best checkpoint by utterance macro-F1.
    fn checkpoint_and_validate(&mut self, valid: Option<&[EncodedDialog]>) -> Result<Option<Report>> {
        let step = self.progress.step;
        let mut report = None;
        if let Some(valid) = valid.filter(|v| !v.is_empty()) {
            let (r, loss) = evaluate(&self.model, valid)?;
            let f = |p: Option<crate::metrics::Prf>| p.map_or("-".to_string(), |p| format!("{:.4}", p.f1));
            self.log(&format!(
                "{step}, validation, {:.6}, {:.4}, {}, {}",
                loss.total(),
                r.utterance.f1,
                f(r.satisfaction),
                f(r.curve)
            ))?;
            if self.progress.best_f1.is_none_or(|b| r.utterance.f1 > b) {
                self.progress.best_f1 = Some(r.utterance.f1);
                self.progress.best_step = Some(step);
                if let Some(dir) = &self.out_dir {
                    self.save(&dir.join("best.ckpt"))?;
                }
            }
            report = Some(r);
        }
        if let Some(dir) = &self.out_dir {
            self.save(&dir.join(format!("step-{step:06}.ckpt")))?;
        }
        Ok(report)
    }

    fn done(&self) -> bool {
        self.progress.epoch >= self.config.max_epochs
            || self.config.max_steps.is_some_and(|m| self.progress.step >= m)
    }

    /// Trains until `max_epochs` (or `max_steps`) is reached, resuming from
    /// the recorded progress. `on_step` sees the step number and its loss.
    pub fn run(
        &mut self,
        train: &[EncodedDialog],
        valid: Option<&[EncodedDialog]>,
        mut on_step: impl FnMut(u64, &LossBreakdown),
    ) -> Result<RunSummary> {
        if train.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        let mut losses = Vec::new();
        let mut window = Vec::new();
        let mut last = None;
        while !self.done() {
            let batches = self.epoch_batches(train, self.progress.epoch);
            if self.progress.batch >= batches.len() {
                return Err(Error::Usage(format!(
                    "recorded batch {} does not exist in an epoch of {} batches",
                    self.progress.batch,
                    batches.len()
                )));
            }
            let epoch = self.progress.epoch;
            while self.progress.epoch == epoch && !self.done() {
                let loss = self.step(&batches[self.progress.batch])?;
                self.progress.batch += 1;
                if self.progress.batch == batches.len() {
                    self.progress.batch = 0;
                    self.progress.epoch += 1;
                }
                losses.push(loss.total());
                window.push(loss.total());
                on_step(self.progress.step, &loss);
                if self.progress.step.is_multiple_of(self.config.checkpoint_every) {
                    let mean = window.iter().sum::<f64>() / window.len() as f64;
                    window.clear();
                    self.log(&format!("{}, train, {mean:.6}, -, -, -", self.progress.step))?;
                    last = Some(self.checkpoint_and_validate(valid)?);
                } else {
                    last = None;
                }
            }
        }
        let validation = match last {
            Some(report) => report,
            None => {
                if !window.is_empty() {
                    let mean = window.iter().sum::<f64>() / window.len() as f64;
                    self.log(&format!("{}, train, {mean:.6}, -, -, -", self.progress.step))?;
                }
                self.checkpoint_and_validate(valid)?
            }
        };
        if let Some(dir) = &self.out_dir {
            self.save(&dir.join("last.ckpt"))?;
        }
        Ok(RunSummary { losses, validation })
    }
}
