//! Loss, optimizer, learning-rate schedule, checkpoints and the training loop.

mod checkpoint;
mod fit;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use fit::{evaluate, evaluate_with, select_windows, EpochMetrics, EvalReport, Trainer, METRICS_HEADER};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::layers::Param;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_floor: f64,
    pub lr_factor: f64,
    /// Epochs without sufficient improvement before the learning rate drops.
    pub plateau_patience: usize,
    /// Relative improvement a validation loss needs to count as progress.
    pub plateau_min_delta: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Keep every n-th sliding window of each day.
    pub window_stride: usize,
    pub max_train_windows: Option<usize>,
    pub max_val_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 1e-4,
            lr_floor: 1e-6,
            lr_factor: 0.1,
            plateau_patience: 5,
            plateau_min_delta: 1e-3,
            batch_size: 8,
            max_epochs: 10,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            window_stride: 1,
            max_train_windows: None,
            max_val_windows: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_floor > 0.0 && self.lr_floor <= self.lr_init && self.lr_init.is_finite()) {
            return arg_err(format!("need 0 < lr_floor <= lr_init, got {} and {}", self.lr_floor, self.lr_init));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return arg_err(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor));
        }
        if self.plateau_patience == 0 {
            return arg_err("plateau_patience must be positive");
        }
        if !(self.plateau_min_delta >= 0.0 && self.plateau_min_delta < 1.0) {
            return arg_err("plateau_min_delta must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.window_stride == 0 {
            return arg_err("batch_size and window_stride must be positive");
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return arg_err(format!("{name} must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return arg_err("adam_eps must be positive");
        }
        if self.max_train_windows == Some(0) || self.max_val_windows == Some(0) {
            return arg_err("window limits must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return shape_err(format!("mse_loss: prediction {:?} vs target {:?}", pred.shape(), target.shape()));
    }
    if pred.is_empty() {
        return arg_err("mse_loss on an empty tensor");
    }
    let n = pred.len() as f64;
    let mut sum = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p as f64 - t as f64;
        sum += d * d;
        grad.push((2.0 * d / n) as f32);
    }
    Ok((sum / n, Tensor::from_vec(pred.shape(), grad)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment buffers keyed by parameter name, plus the shared step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// One bias-corrected Adam update. Every gradient is checked before any
/// parameter changes, so a non-finite gradient leaves the state untouched.
pub fn adam_step(params: &mut [(String, &mut Param)], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    for (name, p) in params.iter() {
        if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of `{name}` at element {i} is {} (step {})",
                p.grad.data()[i],
                state.step + 1
            )));
        }
        if let Some(mo) = state.moments.get(name) {
            if mo.m.shape() != p.value.shape() {
                return shape_err(format!("moment buffer of `{name}` is {:?}, parameter is {:?}", mo.m.shape(), p.value.shape()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let mo = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: Tensor::zeros(p.value.shape()),
            v: Tensor::zeros(p.value.shape()),
        });
        let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
        for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
            let g = g as f64;
            let m1 = cfg.beta1 * *m as f64 + (1.0 - cfg.beta1) * g;
            let v1 = cfg.beta2 * *v as f64 + (1.0 - cfg.beta2) * g * g;
            *m = m1 as f32;
            *v = v1 as f32;
            let update = lr * (m1 / c1) / ((v1 / c2).sqrt() + cfg.eps);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Learning rate after an epoch, given every validation loss so far.
///
/// An epoch counts as progress when its loss is below `best * (1 - min_delta)`.
/// Once `patience` epochs pass without progress the rate is multiplied by
/// `lr_factor`, and again after every further `patience` epochs.
pub fn plateau_schedule(history: &[f64], current_lr: f64, cfg: &TrainConfig) -> f64 {
    let Some((&first, rest)) = history.split_first() else {
        return current_lr;
    };
    let (mut best, mut best_at) = (first, 0);
    for (i, &h) in rest.iter().enumerate() {
        if h < best * (1.0 - cfg.plateau_min_delta) {
            best = h;
            best_at = i + 1;
        }
    }
    let stale = history.len() - 1 - best_at;
    if stale == 0 || stale % cfg.plateau_patience != 0 {
        return current_lr;
    }
    let next = current_lr * cfg.lr_factor;
    // products like 1e-5 * 0.1 land one ulp above the floor
    if next <= cfg.lr_floor * (1.0 + 1e-9) {
        cfg.lr_floor.min(current_lr)
    } else {
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32, g: f32) -> Param {
        let mut p = Param::new(Tensor::from_vec(&[1], vec![v]).unwrap());
        p.grad = Tensor::from_vec(&[1], vec![g]).unwrap();
        p
    }

    fn step(p: &mut Param, state: &mut AdamState, lr: f64) -> Result<()> {
        let mut ps = vec![("w".to_string(), p)];
        adam_step(&mut ps, state, lr, &AdamConfig::default())
    }

    #[test]
    fn mse_values() {
        let a = Tensor::full(&[2, 3], 1.0);
        let (l, g) = mse_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
        let (l, _) = mse_loss(&Tensor::full(&[2, 3], 0.5), &Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(l, 0.25);
        assert!(mse_loss(&a, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut p = scalar_param(0.0, 1.0);
        let mut s = AdamState::default();
        step(&mut p, &mut s, 1e-3).unwrap();
        assert!((p.value.data()[0] as f64 + 1e-3).abs() < 1e-6);
        let d1 = p.value.data()[0] as f64;
        step(&mut p, &mut s, 1e-3).unwrap();
        let d2 = p.value.data()[0] as f64 - d1;
        assert!(d2.abs() <= d1.abs() * (1.0 + 1e-6));
    }

    #[test]
    fn adam_zero_gradient_decays_moments() {
        let mut p = scalar_param(0.5, 1.0);
        let mut s = AdamState::default();
        step(&mut p, &mut s, 1e-3).unwrap();
        let before = p.value.data()[0];
        let m0 = s.moments["w"].m.data()[0];
        p.grad.fill(0.0);
        // a decayed first moment still moves the weight; compare the moments
        step(&mut p, &mut s, 0.0).unwrap();
        assert_eq!(p.value.data()[0], before);
        assert!((s.moments["w"].m.data()[0] - 0.9 * m0).abs() <= 1e-6 * m0.abs());
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = scalar_param(0.5, f32::NAN);
        let mut s = AdamState::default();
        let err = step(&mut p, &mut s, 1e-3).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(s.step, 0);
        assert_eq!(p.value.data()[0], 0.5);
    }

    #[test]
    fn adam_long_run_step_approaches_lr() {
        let mut p = scalar_param(0.0, 3.0);
        let mut s = AdamState::default();
        let mut last = 0.0;
        for _ in 0..20_000 {
            let before = p.value.data()[0] as f64;
            step(&mut p, &mut s, 1e-3).unwrap();
            last = p.value.data()[0] as f64 - before;
        }
        assert!((last.abs() - 1e-3).abs() < 1e-5);
    }

    #[test]
    fn plateau_rule() {
        let cfg = TrainConfig::default();
        let improving: Vec<f64> = (0..20).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(plateau_schedule(&improving, 1e-4, &cfg), 1e-4);
        assert_eq!(plateau_schedule(&[1.0; 5], 1e-4, &cfg), 1e-4);
        let lr = plateau_schedule(&[1.0; 6], 1e-4, &cfg);
        assert!((lr - 1e-5).abs() < 1e-18);
        // tiny improvements below min_delta do not reset patience
        let creeping: Vec<f64> = (0..6).map(|i| 1.0 - 1e-5 * i as f64).collect();
        assert!(plateau_schedule(&creeping, 1e-4, &cfg) < 1e-4);
        assert_eq!(plateau_schedule(&[], 1e-4, &cfg), 1e-4);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr_floor: 1e-3, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr_factor: 1.0, ..Default::default() }.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"batch_size": 2}"#).unwrap();
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.lr_init, 1e-4);
    }
}
