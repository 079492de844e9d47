use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
use super::{adam_step, mse_loss, plateau_schedule, AdamState, Moments, TrainConfig};
use crate::data::{Batch, Dataset, Split, WindowSpec, HORIZON_LABELS, HORIZON_OFFSETS};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::layers::Module;
use crate::model::{ModelConfig, SedUNet};
use crate::tensor::{BnMode, Prng, Tensor};

pub const METRICS_HEADER: &str = "epoch,lr,train_mse,val_mse,val_mse_u8,h5,h10,h15,h30,h45,h60,seconds";

const U8_SCALE: f64 = 255.0 * 255.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub horizons: Vec<f64>,
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{},{},{}", self.epoch, self.lr, self.train_mse, self.val_mse, self.val_mse * U8_SCALE);
        for h in &self.horizons {
            row += &format!(",{h}");
        }
        row + &format!(",{:.3}", self.seconds)
    }
}

/// Per-horizon and overall MSE over a set of windows, on the [0, 1] scale.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub horizons: Vec<f64>,
    pub overall: f64,
    pub windows: usize,
}

impl EvalReport {
    pub fn overall_u8(&self) -> f64 {
        self.overall * U8_SCALE
    }

    /// `split,windows,mse,mse_u8,h5,...,h60`
    pub fn csv_header() -> String {
        format!("split,windows,mse,mse_u8,{}", HORIZON_LABELS.join(","))
    }

    pub fn csv_row(&self, split: &str) -> String {
        let hs: Vec<String> = self.horizons.iter().map(|h| h.to_string()).collect();
        format!("{split},{},{},{},{}", self.windows, self.overall, self.overall_u8(), hs.join(","))
    }
}

/// Evenly spaced subset of at most `max` windows, order preserved.
pub fn select_windows<T: Clone>(all: &[T], max: Option<usize>) -> Vec<T> {
    match max {
        Some(m) if m < all.len() => (0..m).map(|i| all[i * all.len() / m].clone()).collect(),
        _ => all.to_vec(),
    }
}

/// Scores any forecaster returning `[N, F, 8, H, W]` for a batch.
pub fn evaluate_with(
    dataset: &Dataset,
    windows: &[(usize, WindowSpec)],
    batch_size: usize,
    mut forecast: impl FnMut(&Batch) -> Result<Tensor>,
) -> Result<EvalReport> {
    if windows.is_empty() {
        return arg_err("cannot evaluate an empty split");
    }
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for chunk in windows.chunks(batch_size.max(1)) {
        let batch = dataset.batch(chunk)?;
        let pred = forecast(&batch)?;
        if pred.shape() != batch.target.shape() {
            return shape_err(format!("forecast {:?} vs target {:?}", pred.shape(), batch.target.shape()));
        }
        let s = pred.shape();
        let (n, f, per) = (s[0], s[1], s[2..].iter().product::<usize>());
        sums.resize(f, 0.0);
        counts.resize(f, 0);
        for i in 0..n {
            for h in 0..f {
                let at = (i * f + h) * per;
                let p = &pred.data()[at..at + per];
                let t = &batch.target.data()[at..at + per];
                sums[h] += p.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>();
                counts[h] += per;
            }
        }
    }
    let horizons: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let overall = horizons.iter().sum::<f64>() / horizons.len() as f64;
    if !overall.is_finite() {
        return Err(Error::NonFinite(format!("evaluation MSE is {overall}")));
    }
    Ok(EvalReport { horizons, overall, windows: windows.len() })
}

/// Eval-mode scoring of a model.
pub fn evaluate(model: &mut SedUNet, dataset: &Dataset, windows: &[(usize, WindowSpec)], batch_size: usize) -> Result<EvalReport> {
    evaluate_with(dataset, windows, batch_size, |b| model.predict(&b.static_input, &b.dynamic))
}

/// Model, optimizer state and training history.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: SedUNet,
    pub config: TrainConfig,
    pub adam: AdamState,
    /// Learning rate for the next epoch.
    pub lr: f64,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    /// Loss of every optimization step taken by this trainer instance.
    pub step_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = SedUNet::new(model_config, &mut Prng::new(config.seed).derive(0))?;
        Ok(Self {
            model,
            lr: config.lr_init,
            config,
            adam: AdamState::default(),
            epoch: 0,
            history: Vec::new(),
            best_epoch: None,
            step_losses: Vec::new(),
        })
    }

    /// One forward/backward/update on a batch; returns the loss before the update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let out = self.model.forward(&batch.static_input, &batch.dynamic, BnMode::Train)?;
        let pred = self.model.select(&out)?;
        let (loss, grad) = mse_loss(&pred, &batch.target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {loss}")));
        }
        self.model.zero_grad();
        self.model.backward(&self.model.select_backward(&grad)?)?;
        let mut params = Vec::new();
        self.model.params_mut("", &mut params);
        adam_step(&mut params, &mut self.adam, self.lr, &self.config.adam())?;
        self.step_losses.push(loss);
        Ok(loss)
    }

    pub fn train_windows(&self, dataset: &Dataset) -> Vec<(usize, WindowSpec)> {
        let all = dataset.windows(Split::Train, &HORIZON_OFFSETS, self.config.window_stride);
        select_windows(&all, self.config.max_train_windows)
    }

    pub fn val_windows(&self, dataset: &Dataset) -> Vec<(usize, WindowSpec)> {
        let all = dataset.windows(Split::Val, &HORIZON_OFFSETS, self.config.window_stride);
        select_windows(&all, self.config.max_val_windows)
    }

    /// Shuffles the windows with a stream tied to the seed and epoch number, then
    /// steps through them in batches. Returns the mean step loss.
    pub fn train_epoch(&mut self, dataset: &Dataset, windows: &[(usize, WindowSpec)]) -> Result<f64> {
        if windows.is_empty() {
            return arg_err("no training windows");
        }
        let mut order: Vec<usize> = (0..windows.len()).collect();
        Prng::new(self.config.seed).derive(1 + self.epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        let mut steps = 0;
        for idx in order.chunks(self.config.batch_size) {
            let chunk: Vec<_> = idx.iter().map(|&i| windows[i].clone()).collect();
            total += self.train_step(&dataset.batch(&chunk)?)?;
            steps += 1;
        }
        Ok(total / steps as f64)
    }

    /// Runs epochs until `max_epochs`, writing `metrics.csv`, `last.ckpt` and
    /// `best.ckpt` to `out_dir` when given. Resumes from `self.epoch`.
    pub fn fit(&mut self, dataset: &Dataset, out_dir: Option<&Path>) -> Result<()> {
        self.fit_with(dataset, out_dir, |_| {})
    }

    /// [`Trainer::fit`] with a callback after every epoch.
    pub fn fit_with(
        &mut self,
        dataset: &Dataset,
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<()> {
        let model_out = self.model.config().frames_out;
        if model_out != HORIZON_OFFSETS.len() {
            return arg_err(format!("model predicts {model_out} frames, the dataset windows have {}", HORIZON_OFFSETS.len()));
        }
        self.model.config().check_spatial(dataset.manifest.height, dataset.manifest.width)?;
        let train = self.train_windows(dataset);
        let val = self.val_windows(dataset);
        if val.is_empty() {
            return arg_err("the validation split has no windows");
        }
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir)?;
            let path = dir.join("metrics.csv");
            if self.epoch == 0 || !path.exists() {
                let mut text = format!("{METRICS_HEADER}\n");
                for m in &self.history {
                    text += &(m.csv_row() + "\n");
                }
                fs::write(&path, text)?;
            }
        }
        while self.epoch < self.config.max_epochs {
            let started = Instant::now();
            let train_mse = match self.train_epoch(dataset, &train) {
                Err(e @ Error::NonFinite(_)) => {
                    if let Some(dir) = out_dir {
                        self.checkpoint().save(dir.join("diverged.ckpt"))?;
                    }
                    return Err(e);
                }
                other => other?,
            };
            let report = evaluate(&mut self.model, dataset, &val, self.config.batch_size)?;
            let metrics = EpochMetrics {
                epoch: self.epoch + 1,
                lr: self.lr,
                train_mse,
                val_mse: report.overall,
                horizons: report.horizons.clone(),
                seconds: started.elapsed().as_secs_f64(),
            };
            self.epoch += 1;
            let improved = self
                .best_epoch
                .map_or(true, |b| metrics.val_mse < self.history[b - 1].val_mse);
            self.history.push(metrics);
            let val_history: Vec<f64> = self.history.iter().map(|m| m.val_mse).collect();
            self.lr = plateau_schedule(&val_history, self.lr, &self.config);
            if improved {
                self.best_epoch = Some(self.epoch);
            }
            if let Some(dir) = out_dir {
                let mut f = OpenOptions::new().append(true).open(dir.join("metrics.csv"))?;
                writeln!(f, "{}", self.history.last().expect("just pushed").csv_row())?;
                let ckpt = self.checkpoint();
                ckpt.save(dir.join("last.ckpt"))?;
                if improved {
                    ckpt.save(dir.join("best.ckpt"))?;
                }
            }
            on_epoch(self.history.last().expect("just pushed"));
        }
        Ok(())
    }

    pub fn checkpoint(&mut self) -> Checkpoint {
        let mut tensors = Vec::new();
        let mut params = Vec::new();
        self.model.params_mut("", &mut params);
        for (name, p) in params {
            if let Some(mo) = self.adam.moments.get(&name) {
                tensors.push((format!("adam.m/{name}"), mo.m.clone()));
                tensors.push((format!("adam.v/{name}"), mo.v.clone()));
            }
            tensors.push((format!("param/{name}"), p.value.clone()));
        }
        let mut buffers = Vec::new();
        self.model.buffers_mut("", &mut buffers);
        tensors.extend(buffers.into_iter().map(|(name, b)| (format!("buffer/{name}"), b.clone())));
        Checkpoint {
            tensors,
            meta: CheckpointMeta {
                format_version: CHECKPOINT_VERSION,
                model: self.model.config().clone(),
                train: self.config.clone(),
                epoch: self.epoch,
                lr: self.lr,
                adam_step: self.adam.step,
                best_epoch: self.best_epoch,
                history: self.history.clone(),
            },
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = &ckpt.meta;
        let mut trainer = Self::new(meta.model.clone(), meta.train.clone())?;
        let mut params = Vec::new();
        trainer.model.params_mut("", &mut params);
        for (name, p) in params {
            p.value = shaped(ckpt.get(&format!("param/{name}"))?, p.value.shape(), &name)?;
            if meta.adam_step > 0 {
                let m = shaped(ckpt.get(&format!("adam.m/{name}"))?, p.value.shape(), &name)?;
                let v = shaped(ckpt.get(&format!("adam.v/{name}"))?, p.value.shape(), &name)?;
                trainer.adam.moments.insert(name, Moments { m, v });
            }
        }
        let mut buffers = Vec::new();
        trainer.model.buffers_mut("", &mut buffers);
        for (name, b) in buffers {
            *b = shaped(ckpt.get(&format!("buffer/{name}"))?, b.shape(), &name)?;
        }
        trainer.adam.step = meta.adam_step;
        trainer.lr = meta.lr;
        trainer.epoch = meta.epoch;
        trainer.history = meta.history.clone();
        trainer.best_epoch = meta.best_epoch;
        Ok(trainer)
    }

    /// Loads only the model from a checkpoint.
    pub fn load_model(path: impl AsRef<Path>) -> Result<SedUNet> {
        Ok(Self::from_checkpoint(&Checkpoint::load(path)?)?.model)
    }
}

fn shaped(t: &Tensor, shape: &[usize], name: &str) -> Result<Tensor> {
    if t.shape() != shape {
        return shape_err(format!("checkpoint tensor `{name}` is {:?}, model expects {shape:?}", t.shape()));
    }
    Ok(t.clone())
}
