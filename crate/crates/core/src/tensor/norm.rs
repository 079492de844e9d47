//! Per-channel batch normalization over `[N, C, H, W]`.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{arg_err, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: Tensor::zeros(&[channels]), var: Tensor::full(&[channels], 1.0) }
    }
}

#[derive(Clone, Debug)]
pub struct BnCache {
    shape: [usize; 4],
    x_hat: Tensor,
    inv_std: Vec<f64>,
    gamma: Vec<f32>,
    mode: BnMode,
}

pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &mut RunningStats,
    mode: BnMode,
    momentum: f32,
    eps: f32,
) -> Result<(Tensor, BnCache)> {
    let [n, c, h, w] = input.dims4("batchnorm input")?;
    if eps <= 0.0 {
        return arg_err(format!("batchnorm eps must be positive, got {eps}"));
    }
    for (t, what) in [(gamma, "gamma"), (beta, "beta"), (&running.mean, "running mean"), (&running.var, "running var")] {
        if t.shape() != [c] {
            return shape_err(format!("batchnorm {what} has shape {:?}, input has {c} channels", t.shape()));
        }
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let mut x_hat = Tensor::zeros(input.shape());
    let mut inv_std = vec![0.0f64; c];

    for ch in 0..c {
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut sum = 0.0f64;
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    sum += x[base..base + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    sq += x[base..base + plane].iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
                }
                let var = sq / count as f64;
                let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
                let m = momentum as f64;
                let rm = &mut running.mean.data_mut()[ch];
                *rm = ((1.0 - m) * *rm as f64 + m * mean) as f32;
                let rv = &mut running.var.data_mut()[ch];
                *rv = ((1.0 - m) * *rv as f64 + m * unbiased) as f32;
                (mean, var)
            }
            BnMode::Eval => (running.mean.data()[ch] as f64, running.var.data()[ch] as f64),
        };
        let is = 1.0 / (var + eps as f64).sqrt();
        inv_std[ch] = is;
        let (g, bt) = (gamma.data()[ch] as f64, beta.data()[ch] as f64);
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                let xh = (x[i] as f64 - mean) * is;
                x_hat.data_mut()[i] = xh as f32;
                out.data_mut()[i] = (g * xh + bt) as f32;
            }
        }
    }
    let cache = BnCache { shape: [n, c, h, w], x_hat, inv_std, gamma: gamma.data().to_vec(), mode };
    Ok((out, cache))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(cache: &BnCache, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    grad_out.ensure_shape(&cache.shape, "batchnorm grad_out")?;
    let [n, c, h, w] = cache.shape;
    let plane = h * w;
    let count = (n * plane) as f64;
    let g = grad_out.data();
    let xh = cache.x_hat.data();
    let mut grad_in = Tensor::zeros(&cache.shape);
    let mut grad_gamma = Tensor::zeros(&[c]);
    let mut grad_beta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                sg += g[i] as f64;
                sgx += g[i] as f64 * xh[i] as f64;
            }
        }
        grad_beta.data_mut()[ch] = sg as f32;
        grad_gamma.data_mut()[ch] = sgx as f32;
        let scale = cache.gamma[ch] as f64 * cache.inv_std[ch];
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                let v = match cache.mode {
                    BnMode::Train => scale * (g[i] as f64 - sg / count - xh[i] as f64 * sgx / count),
                    BnMode::Eval => scale * g[i] as f64,
                };
                grad_in.data_mut()[i] = v as f32;
            }
        }
    }
    Ok((grad_in, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Prng;

    fn channel_stats(t: &Tensor, ch: usize) -> (f64, f64) {
        let [n, c, h, w] = t.dims4("t").unwrap();
        let mut vals = Vec::new();
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    vals.push(t.get(&[b, ch, y, x]) as f64);
                }
            }
        }
        let _ = c;
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn standardized_input_passes_through() {
        // +1/-1 checkerboard has mean 0 and variance 1
        let data: Vec<f32> = (0..32).map(|i| if (i + i / 4) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = Tensor::from_vec(&[2, 1, 4, 4], data).unwrap();
        let mut rs = RunningStats::new(1);
        let (y, _) = batchnorm_forward(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &mut rs, BnMode::Train, 0.1, 1e-5).unwrap();
        assert!(y.max_abs_diff(&x) <= 1e-5);
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut rng = Prng::new(2);
        let x = Tensor::from_vec(&[2, 3, 2, 2], (0..24).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
        let mut rs = RunningStats::new(3);
        let (y, _) = batchnorm_forward(&x, &Tensor::zeros(&[3]), &Tensor::full(&[3], 5.0), &mut rs, BnMode::Train, 0.1, 1e-5).unwrap();
        assert!(y.data().iter().all(|v| *v == 5.0));
    }

    #[test]
    fn train_mode_statistics() {
        let mut rng = Prng::new(11);
        let x = Tensor::from_vec(&[4, 3, 5, 5], (0..300).map(|_| rng.uniform(-3.0, 7.0)).collect()).unwrap();
        let mut rs = RunningStats::new(3);
        let (y, _) = batchnorm_forward(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), &mut rs, BnMode::Train, 0.1, 1e-5).unwrap();
        for ch in 0..3 {
            let (m, v) = channel_stats(&y, ch);
            assert!(m.abs() <= 1e-5, "mean {m}");
            assert!((1.0 - 1e-3..=1.0 + 1e-3).contains(&v), "var {v}");
            let (xm, _) = channel_stats(&x, ch);
            assert!((rs.mean.data()[ch] as f64 - 0.1 * xm).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let x = Tensor::full(&[1, 1, 2, 2], 3.0);
        let mut rs = RunningStats { mean: Tensor::full(&[1], 1.0), var: Tensor::full(&[1], 4.0) };
        let (y, _) = batchnorm_forward(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &mut rs, BnMode::Eval, 0.1, 1e-12).unwrap();
        assert!(y.data().iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert_eq!(rs.mean.data(), &[1.0]);
    }

    #[test]
    fn errors() {
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        let mut rs = RunningStats::new(2);
        let ones = Tensor::full(&[2], 1.0);
        assert!(batchnorm_forward(&x, &ones, &ones, &mut rs, BnMode::Train, 0.1, 0.0).is_err());
        assert!(batchnorm_forward(&x, &Tensor::full(&[3], 1.0), &ones, &mut rs, BnMode::Train, 0.1, 1e-5).is_err());
        let (_, cache) = batchnorm_forward(&x, &ones, &ones, &mut rs, BnMode::Train, 0.1, 1e-5).unwrap();
        assert!(batchnorm_backward(&cache, &Tensor::zeros(&[1, 2, 2, 3])).is_err());
    }

    #[test]
    fn backward_zero_and_beta() {
        let mut rng = Prng::new(5);
        let x = Tensor::from_vec(&[2, 2, 3, 3], (0..36).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let g = Tensor::from_vec(&[2, 2, 3, 3], (0..36).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let mut rs = RunningStats::new(2);
        let ones = Tensor::full(&[2], 1.0);
        let (_, cache) = batchnorm_forward(&x, &ones, &Tensor::zeros(&[2]), &mut rs, BnMode::Train, 0.1, 1e-5).unwrap();
        let (gi, gg, gb) = batchnorm_backward(&cache, &Tensor::zeros(x.shape())).unwrap();
        assert_eq!(gi.max_abs() + gg.max_abs() + gb.max_abs(), 0.0);
        let (_, _, gb) = batchnorm_backward(&cache, &g).unwrap();
        for ch in 0..2 {
            let expect: f32 = g.channel_slice(ch, 1).unwrap().data().iter().sum();
            assert!((gb.data()[ch] - expect).abs() < 1e-5);
        }
    }
}
