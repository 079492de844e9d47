//! Dense row-major tensors and the numerical kernels the layers are built from.
//!
//! Every kernel comes with an explicit backward; there is no autodiff tape.

mod activation;
mod conv;
mod gemm;
mod norm;
mod rng;

pub use activation::{avgpool2x, relu, relu_backward, upsample2x, upsample2x_backward};
pub use conv::{conv2d, conv2d_backward, conv2d_naive, Conv2dSpec};
pub use norm::{batchnorm_backward, batchnorm_forward, BnCache, BnMode, RunningStats};
pub use rng::Prng;

use crate::error::{shape_err, Error, Result};

/// Element types a tensor can hold. The code is the dtype byte of the file format.
pub trait Element: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const DTYPE_CODE: u8;
    const NAME: &'static str;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for u8 {
    const DTYPE_CODE: u8 = 0;
    const NAME: &'static str = "u8";
    const SIZE: usize = 1;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

impl Element for f32 {
    const DTYPE_CODE: u8 = 1;
    const NAME: &'static str = "f32";
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

/// Row-major (last axis fastest) dense tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor<{}>{:?}", T::NAME, self.shape)
    }
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::default(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    /// Shape as `[N, C, H, W]`, or an error naming `what`.
    pub fn dims4(&self, what: &str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => shape_err(format!("{what} must be rank 4, got {:?}", self.shape)),
        }
    }

    pub fn ensure_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return shape_err(format!("{what}: expected {shape:?}, got {:?}", self.shape));
        }
        Ok(())
    }
}

impl Tensor<f32> {
    pub fn scalar_fill(shape: &[usize], value: f32) -> Self {
        Self::full(shape, value)
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f32) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("elementwise op on {:?} and {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!("accumulate {:?} into {:?}", other.shape, self.shape));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Adds `s * other` in place.
    pub fn axpy(&mut self, s: f32, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!("accumulate {:?} into {:?}", other.shape, self.shape));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += s * b);
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Fails on the first NaN or infinity.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!("{what}: element {i} is {}", self.data[i]))),
        }
    }

    /// Channels `[start, start + count)` of an `[N, C, H, W]` tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Self> {
        let [n, c, h, w] = self.dims4("channel_slice input")?;
        if start + count > c {
            return shape_err(format!("channels [{start}, {}) out of {c}", start + count));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * count * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Ok(Self {
            shape: vec![n, count, h, w],
            data,
        })
    }

    /// Writes `src` into channels `[start, start + src_channels)`, adding when `accumulate`.
    pub fn put_channels(&mut self, start: usize, src: &Self, accumulate: bool) -> Result<()> {
        let [n, c, h, w] = self.dims4("put_channels target")?;
        let [sn, sc, sh, sw] = src.dims4("put_channels source")?;
        if sn != n || sh != h || sw != w || start + sc > c {
            return shape_err(format!(
                "cannot place {:?} at channel {start} of {:?}",
                src.shape, self.shape
            ));
        }
        let plane = h * w;
        for b in 0..n {
            let dst = (b * c + start) * plane;
            let s = b * sc * plane;
            let block = &src.data[s..s + sc * plane];
            let out = &mut self.data[dst..dst + sc * plane];
            if accumulate {
                out.iter_mut().zip(block).for_each(|(a, v)| *a += v);
            } else {
                out.copy_from_slice(block);
            }
        }
        Ok(())
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let [n, _, h, w] = first.dims4("concat part")?;
        let mut total = 0;
        for p in parts {
            let [pn, pc, ph, pw] = p.dims4("concat part")?;
            if (pn, ph, pw) != (n, h, w) {
                return shape_err(format!("concat {:?} with {:?}", first.shape, p.shape));
            }
            total += pc;
        }
        let mut out = Self::zeros(&[n, total, h, w]);
        let mut at = 0;
        for p in parts {
            out.put_channels(at, p, false)?;
            at += p.shape[1];
        }
        Ok(out)
    }

    /// Index `i` along the leading axis, dropping that axis.
    pub fn index_first(&self, i: usize) -> Result<Self> {
        if self.shape.is_empty() || i >= self.shape[0] {
            return shape_err(format!("index {i} along first axis of {:?}", self.shape));
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return shape_err(format!("stack {:?} with {:?}", first.shape, p.shape));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }
}
