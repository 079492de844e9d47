//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library's algebra or convolution code.
#![allow(dead_code)]

pub mod grad;

use hxnet::layers::{HxConv2d, Module};
use hxnet::tensor::{Conv2dSpec, Prng};
use hxnet::Tensor;

pub fn conj(x: &[f64]) -> Vec<f64> {
    x.iter().enumerate().map(|(i, &v)| if i == 0 { v } else { -v }).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Recursive doubling product `(a, b)(c, d) = (ac - conj(d) b, d a + b conj(c))`.
pub fn cd_mul(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, y.len());
    if n == 1 {
        return vec![x[0] * y[0]];
    }
    let h = n / 2;
    let (a, b) = x.split_at(h);
    let (c, d) = y.split_at(h);
    let mut out = sub(&cd_mul(a, c), &cd_mul(&conj(d), b));
    out.extend(add(&cd_mul(d, a), &cd_mul(b, &conj(c))));
    out
}

pub fn basis(dim: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    v
}

/// `entries[r][c] = (i, s)` such that `(w x)_r` contains `s * w_i * x_c`.
pub fn oracle_table(dim: usize) -> Vec<Vec<(usize, f64)>> {
    let mut t = vec![vec![(usize::MAX, 0.0); dim]; dim];
    for i in 0..dim {
        for c in 0..dim {
            let p = cd_mul(&basis(dim, i), &basis(dim, c));
            let nz: Vec<usize> = (0..dim).filter(|&r| p[r] != 0.0).collect();
            assert_eq!(nz.len(), 1, "basis product must be a signed unit");
            let r = nz[0];
            assert_eq!(t[r][c].0, usize::MAX, "two weights land in one entry");
            t[r][c] = (i, p[r]);
        }
    }
    t
}

pub fn random_vec(n: usize, rng: &mut Prng, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

pub fn random_tensor(shape: &[usize], rng: &mut Prng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, random_vec(n, rng, -1.0, 1.0)).unwrap()
}

/// Plain nested-loop convolution in f64. `input` is `[n, ci, h, w]`, `weight`
/// is `[co, ci, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv_f64(
    input: &[f64],
    (n, ci, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.map_or(0.0, |bs| bs[o]);
                    for i in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += weight[((o * ci + i) * kh + ky) * kw + kx]
                                    * input[((b * ci + i) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((b * co + o) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Real `[16co, 16ci, kh, kw]` weight whose block `(r, c)` is `s * bank[i]`
/// for the oracle table entry `(i, s)`.
pub fn block_matrix(banks: &[Tensor], co: usize, ci: usize, k2: usize) -> Vec<f64> {
    let table = oracle_table(16);
    let mut w = vec![0.0; 256 * co * ci * k2];
    for r in 0..16 {
        for c in 0..16 {
            let (i, s) = table[r][c];
            let bank = banks[i].data();
            for o in 0..co {
                for j in 0..ci {
                    for k in 0..k2 {
                        let dst = (((r * co + o) * 16 * ci) + c * ci + j) * k2 + k;
                        w[dst] = s * bank[(o * ci + j) * k2 + k] as f64;
                    }
                }
            }
        }
    }
    w
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// `sum(a * b)` in f64.
pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) == 0.0 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

/// Central differences of `f` at the listed coordinates of `x`.
pub fn numeric_grad(x: &mut [f32], coords: &[usize], eps: f32, mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let keep = x[i];
            x[i] = keep + eps;
            let up = f(x);
            x[i] = keep - eps;
            let down = f(x);
            x[i] = keep;
            (up - down) / (2.0 * eps as f64)
        })
        .collect()
}

/// The sedenion convolution against the explicit block-matrix real convolution.
pub fn block_matrix_diff(n: usize, ci: usize, co: usize, k: usize, h: usize, w: usize, stride: usize, rng: &mut Prng) -> f64 {
    let spec = Conv2dSpec::new(ci, co, k, stride, k / 2);
    let mut layer = HxConv2d::new(spec, true, rng);
    let bias: Vec<f32> = (0..16 * co).map(|_| rng.uniform(-0.5, 0.5)).collect();
    let mut ps = Vec::new();
    layer.params_mut("", &mut ps);
    ps.last_mut().unwrap().1.value = Tensor::from_vec(&[16 * co], bias.clone()).unwrap();
    drop(ps);
    let x = random_tensor(&[n, 16 * ci, h, w], rng);
    let got = layer.infer(&x).unwrap();

    let mut banks = Vec::new();
    let mut ps = Vec::new();
    layer.params_mut("", &mut ps);
    for (name, p) in &ps {
        if name.starts_with("bank") {
            banks.push(p.value.clone());
        }
    }
    assert_eq!(banks.len(), 16);
    let big = block_matrix(&banks, co, ci, k * k);
    let bias64: Vec<f64> = bias.iter().map(|&b| b as f64).collect();
    let (want, oh, ow) = conv_f64(&to_f64(&x), (n, 16 * ci, h, w), &big, (16 * co, k, k), Some(&bias64), stride, k / 2);
    assert_eq!(got.shape(), &[n, 16 * co, oh, ow]);
    got.data().iter().zip(&want).map(|(&a, &b)| (a as f64 - b).abs()).fold(0.0, f64::max)
}
