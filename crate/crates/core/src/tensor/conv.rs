//! Real 2-D cross-correlation with zero padding, lowered to GEMM through im2col.

use serde::{Deserialize, Serialize};

use super::gemm::{matmul, MatRef};
use super::Tensor;
use crate::error::{arg_err, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self { in_channels, out_channels, kernel_h: kernel, kernel_w: kernel, stride, padding }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    /// `floor((H + 2p - k) / s) + 1` per axis.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return arg_err("convolution stride must be at least 1");
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return arg_err("convolution kernel must be non-empty");
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel_h || pw < self.kernel_w {
            return shape_err(format!(
                "{}x{} kernel does not fit a {h}x{w} input with padding {}",
                self.kernel_h, self.kernel_w, self.padding
            ));
        }
        Ok(((ph - self.kernel_h) / self.stride + 1, (pw - self.kernel_w) / self.stride + 1))
    }

    fn check(&self, input: &Tensor, weight: &Tensor) -> Result<Geometry> {
        let [n, c, h, w] = input.dims4("conv2d input")?;
        if c != self.in_channels {
            return shape_err(format!("conv2d expects {} input channels, got {c}", self.in_channels));
        }
        weight.ensure_shape(&self.weight_shape(), "conv2d weight")?;
        let (oh, ow) = self.output_size(h, w)?;
        Ok(Geometry { n, c, h, w, oh, ow, spec: *self })
    }
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c * self.spec.kernel_h * self.spec.kernel_w
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// Visits every (col row, output pixel, input pixel) triple that lies inside the image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let s = &self.spec;
        let pad = s.padding as isize;
        for ch in 0..self.c {
            for ki in 0..s.kernel_h {
                for kj in 0..s.kernel_w {
                    let row = (ch * s.kernel_h + ki) * s.kernel_w + kj;
                    for oy in 0..self.oh {
                        let iy = (oy * s.stride + ki) as isize - pad;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * s.stride + kj) as isize - pad;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row, oy * self.ow + ox, (ch * self.h + iy as usize) * self.w + ix as usize);
                        }
                    }
                }
            }
        }
    }

    /// `[K, N*P]` patch matrix, column `n*P + p`.
    fn im2col(&self, input: &[f32]) -> Vec<f32> {
        let (k, p) = (self.k(), self.p());
        let np = self.n * p;
        let mut cols = vec![0.0f32; k * np];
        let img = self.c * self.h * self.w;
        for b in 0..self.n {
            let x = &input[b * img..(b + 1) * img];
            self.for_each_tap(|row, out_px, in_px| {
                cols[row * np + b * p + out_px] = x[in_px];
            });
        }
        cols
    }

    fn col2im(&self, cols: &[f32]) -> Vec<f32> {
        let p = self.p();
        let np = self.n * p;
        let img = self.c * self.h * self.w;
        let mut out = vec![0.0f32; self.n * img];
        for b in 0..self.n {
            let x = &mut out[b * img..(b + 1) * img];
            self.for_each_tap(|row, out_px, in_px| {
                x[in_px] += cols[row * np + b * p + out_px];
            });
        }
        out
    }
}

/// Cross-correlation (no kernel flip) of `[N, Ci, H, W]` with `[Co, Ci, kh, kw]`.
pub fn conv2d(input: &Tensor, weight: &Tensor, spec: &Conv2dSpec) -> Result<Tensor> {
    let g = spec.check(input, weight)?;
    let (k, p, co) = (g.k(), g.p(), spec.out_channels);
    let cols = g.im2col(input.data());
    let np = g.n * p;
    let wm = MatRef::row_major(weight.data(), co, k);
    let mut out = Tensor::zeros(&[g.n, co, g.oh, g.ow]);
    for b in 0..g.n {
        let view = MatRef { data: &cols[b * p..], rows: k, cols: p, rs: np, cs: 1 };
        matmul(wm, view, &mut out.data_mut()[b * co * p..(b + 1) * co * p], false);
    }
    Ok(out)
}

/// Gradients of `sum(conv2d(input, weight) * grad_out)` with respect to input and weight.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    spec: &Conv2dSpec,
) -> Result<(Tensor, Tensor)> {
    let g = spec.check(input, weight)?;
    let (k, p, co) = (g.k(), g.p(), spec.out_channels);
    grad_out.ensure_shape(&[g.n, co, g.oh, g.ow], "conv2d grad_out")?;
    let np = g.n * p;
    // [Co, N*P]
    let mut g_cm = vec![0.0f32; co * np];
    for b in 0..g.n {
        for o in 0..co {
            let src = &grad_out.data()[(b * co + o) * p..(b * co + o + 1) * p];
            g_cm[o * np + b * p..o * np + (b + 1) * p].copy_from_slice(src);
        }
    }
    let cols = g.im2col(input.data());
    let g_mat = MatRef::row_major(&g_cm, co, np);

    let mut grad_w = Tensor::zeros(&spec.weight_shape());
    matmul(g_mat, MatRef::row_major(&cols, k, np).t(), grad_w.data_mut(), false);

    let mut gcols = vec![0.0f32; k * np];
    matmul(MatRef::row_major(weight.data(), co, k).t(), g_mat, &mut gcols, false);
    let grad_in = Tensor::from_vec(input.shape(), g.col2im(&gcols))?;
    Ok((grad_in, grad_w))
}

/// Direct nested-loop convolution accumulated in f64. Slow; used as a reference.
pub fn conv2d_naive(input: &Tensor, weight: &Tensor, spec: &Conv2dSpec) -> Result<Tensor> {
    let g = spec.check(input, weight)?;
    let co = spec.out_channels;
    let mut out = Tensor::zeros(&[g.n, co, g.oh, g.ow]);
    let pad = spec.padding as isize;
    for b in 0..g.n {
        for o in 0..co {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0f64;
                    for c in 0..g.c {
                        for ki in 0..spec.kernel_h {
                            for kj in 0..spec.kernel_w {
                                let iy = (oy * spec.stride + ki) as isize - pad;
                                let ix = (ox * spec.stride + kj) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += input.get(&[b, c, iy as usize, ix as usize]) as f64
                                    * weight.get(&[o, c, ki, kj]) as f64;
                            }
                        }
                    }
                    out.set(&[b, o, oy, ox], acc as f32);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Prng;

    fn random(shape: &[usize], rng: &mut Prng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_1x1() {
        let mut rng = Prng::new(1);
        let x = random(&[2, 3, 4, 5], &mut rng);
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for i in 0..3 {
            w.set(&[i, i, 0, 0], 1.0);
        }
        let y = conv2d(&x, &w, &Conv2dSpec::new(3, 3, 1, 1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn box_filter_constant_input() {
        let x = Tensor::full(&[1, 1, 5, 5], 0.75);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, &Conv2dSpec::new(1, 1, 3, 1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|v| (v - 9.0 * 0.75).abs() < 1e-6));
    }

    #[test]
    fn matches_nested_loops() {
        let mut rng = Prng::new(7);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (2, 0)] {
            let x = random(&[2, 2, 5, 5], &mut rng);
            let w = random(&[3, 2, 3, 3], &mut rng);
            let spec = Conv2dSpec::new(2, 3, 3, stride, pad);
            let fast = conv2d(&x, &w, &spec).unwrap();
            let slow = conv2d_naive(&x, &w, &spec).unwrap();
            assert!(fast.max_abs_diff(&slow) < 1e-5);
        }
    }

    #[test]
    fn stride2_shape_formula() {
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        for h in 1..=9 {
            for wd in 1..=9 {
                let spec = Conv2dSpec::new(1, 1, 3, 2, 1);
                let y = conv2d(&Tensor::zeros(&[1, 1, h, wd]), &w, &spec).unwrap();
                assert_eq!(y.shape(), &[1, 1, (h + 2 - 3) / 2 + 1, (wd + 2 - 3) / 2 + 1]);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let spec = Conv2dSpec::new(2, 1, 3, 1, 0);
        assert!(conv2d(&Tensor::zeros(&[1, 3, 4, 4]), &Tensor::zeros(&[1, 2, 3, 3]), &spec).is_err());
        assert!(conv2d(&Tensor::zeros(&[1, 2, 2, 2]), &Tensor::zeros(&[1, 2, 3, 3]), &spec).is_err());
        assert!(conv2d(&Tensor::zeros(&[1, 2, 4, 4]), &Tensor::zeros(&[1, 2, 1, 1]), &spec).is_err());
    }

    #[test]
    fn backward_zero_and_scalar() {
        let spec = Conv2dSpec::new(1, 1, 1, 1, 0);
        let x = Tensor::full(&[1, 1, 1, 1], 3.0);
        let w = Tensor::full(&[1, 1, 1, 1], -2.0);
        let (gi, gw) = conv2d_backward(&x, &w, &Tensor::zeros(&[1, 1, 1, 1]), &spec).unwrap();
        assert_eq!(gi.max_abs(), 0.0);
        assert_eq!(gw.max_abs(), 0.0);
        let (gi, gw) = conv2d_backward(&x, &w, &Tensor::full(&[1, 1, 1, 1], 0.5), &spec).unwrap();
        assert_eq!(gw.data(), &[1.5]);
        assert_eq!(gi.data(), &[-1.0]);
    }
}
