use super::Tensor;
use crate::error::{shape_err, Result};

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes the gradient where the input is strictly positive; zero at the tie.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_with(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Nearest-neighbour 2× upsampling of `[N, C, H, W]`.
pub fn upsample2x(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("upsample2x input")?;
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..2 * h {
            for x in 0..2 * w {
                d[y * 2 * w + x] = s[(y / 2) * w + x / 2];
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`upsample2x`]: sums each 2×2 fan-out block.
pub fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h2, w2] = grad_out.dims4("upsample2x grad")?;
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return shape_err(format!("upsample2x gradient has odd spatial dims {h2}x{w2}"));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let src = grad_out.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h2 * w2..(plane + 1) * h2 * w2];
        let d = &mut dst[plane * h * w..(plane + 1) * h * w];
        for y in 0..h2 {
            for x in 0..w2 {
                d[(y / 2) * w + x / 2] += s[y * w2 + x];
            }
        }
    }
    Ok(out)
}

/// 2×2 average pooling with stride 2.
pub fn avgpool2x(input: &Tensor) -> Result<Tensor> {
    let mut out = upsample2x_backward(input)?;
    out.data_mut().iter_mut().for_each(|v| *v *= 0.25);
    Ok(out)
}
