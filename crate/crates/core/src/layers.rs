//! Trainable layers. Each layer caches what its backward needs during
//! `forward` and accumulates parameter gradients during `backward`.
//!
//! [`HxConv2d`] is the sedenion convolution: sixteen real kernel banks shared
//! across the 16×16 component pairs according to the signed index table.

use std::ops::Range;

use crate::algebra::{sedenion_table, SignedIndexTable};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    batchnorm_backward, batchnorm_forward, conv2d, conv2d_backward, relu, relu_backward, BnCache,
    BnMode, Conv2dSpec, Prng, RunningStats, Tensor,
};

/// Number of sedenion components.
pub const COMPONENTS: usize = 16;

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Named access to parameters and non-trainable buffers.
pub trait Module {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);

    fn buffers_mut<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<(String, &'a mut Tensor)>) {}

    fn zero_grad(&mut self) {
        let mut ps = Vec::new();
        self.params_mut("", &mut ps);
        ps.into_iter().for_each(|(_, p)| p.zero_grad());
    }

    fn num_params(&mut self) -> usize {
        let mut ps = Vec::new();
        self.params_mut("", &mut ps);
        ps.iter().map(|(_, p)| p.value.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn missing_cache(layer: &str) -> Error {
    Error::InvalidArgument(format!("{layer}: backward called without a matching forward"))
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f64).sqrt() as f32
}

fn uniform_tensor(shape: &[usize], bound: f32, rng: &mut Prng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

fn add_channel_bias(out: &mut Tensor, bias: &Tensor) -> Result<()> {
    let [n, c, h, w] = out.dims4("bias target")?;
    if bias.shape() != [c] {
        return shape_err(format!("bias of shape {:?} for {c} channels", bias.shape()));
    }
    let plane = h * w;
    let data = out.data_mut();
    for b in 0..n {
        for (ch, &bv) in bias.data().iter().enumerate() {
            let base = (b * c + ch) * plane;
            data[base..base + plane].iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(())
}

fn channel_sums(grad: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = grad.dims4("bias gradient")?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut s = 0.0f64;
        for b in 0..n {
            let base = (b * c + ch) * plane;
            s += grad.data()[base..base + plane].iter().map(|&v| v as f64).sum::<f64>();
        }
        out.data_mut()[ch] = s as f32;
    }
    Ok(out)
}

/// Plain real-valued convolution.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: Conv2dSpec,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<Tensor>,
}

impl Conv2d {
    pub fn new(spec: Conv2dSpec, bias: bool, rng: &mut Prng) -> Self {
        let k2 = spec.kernel_h * spec.kernel_w;
        let bound = glorot_bound(spec.in_channels * k2, spec.out_channels * k2);
        Self {
            spec,
            weight: Param::new(uniform_tensor(&spec.weight_shape(), bound, rng)),
            bias: bias.then(|| Param::new(Tensor::zeros(&[spec.out_channels]))),
            cache: None,
        }
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut out = conv2d(input, &self.weight.value, &self.spec)?;
        if let Some(b) = &self.bias {
            add_channel_bias(&mut out, &b.value)?;
        }
        Ok(out)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cache.as_ref().ok_or_else(|| missing_cache("conv2d"))?;
        let (gi, gw) = conv2d_backward(input, &self.weight.value, grad_out, &self.spec)?;
        self.weight.grad.add_assign(&gw)?;
        if let Some(b) = &mut self.bias {
            b.grad.add_assign(&channel_sums(grad_out)?)?;
        }
        Ok(gi)
    }

    pub fn param_count(spec: &Conv2dSpec, bias: bool) -> usize {
        spec.weight_shape().iter().product::<usize>() + if bias { spec.out_channels } else { 0 }
    }
}

impl Module for Conv2d {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}

pub const BN_MOMENTUM: f32 = 0.1;
pub const BN_EPS: f32 = 1e-5;

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running: RunningStats,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running: RunningStats::new(channels),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, input: &Tensor, mode: BnMode) -> Result<Tensor> {
        let (out, cache) = batchnorm_forward(
            input,
            &self.gamma.value,
            &self.beta.value,
            &mut self.running,
            mode,
            self.momentum,
            self.eps,
        )?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("batchnorm"))?;
        let (gi, gg, gb) = batchnorm_backward(cache, grad_out)?;
        self.gamma.grad.add_assign(&gg)?;
        self.beta.grad.add_assign(&gb)?;
        Ok(gi)
    }
}

impl Module for BatchNorm2d {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "running_mean"), &mut self.running.mean));
        out.push((join(prefix, "running_var"), &mut self.running.var));
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    cache: Option<Tensor>,
}

impl Relu {
    pub fn forward(&mut self, input: &Tensor) -> Tensor {
        self.cache = Some(input.clone());
        relu(input)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cache.as_ref().ok_or_else(|| missing_cache("relu"))?;
        relu_backward(input, grad_out)
    }
}

/// Channel grouping of a sedenion feature map: block `[k*Cg, (k+1)*Cg)` holds component `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComponentLayout {
    pub per_component: usize,
}

impl ComponentLayout {
    pub fn new(per_component: usize) -> Self {
        Self { per_component }
    }

    /// Layout of a tensor with `channels` channels; fails unless divisible by 16.
    pub fn of_channels(channels: usize) -> Result<Self> {
        if channels == 0 || channels % COMPONENTS != 0 {
            return shape_err(format!("{channels} channels cannot be split into {COMPONENTS} components"));
        }
        Ok(Self::new(channels / COMPONENTS))
    }

    pub fn channels(&self) -> usize {
        COMPONENTS * self.per_component
    }

    pub fn block(&self, k: usize) -> Range<usize> {
        k * self.per_component..(k + 1) * self.per_component
    }

    pub fn component(&self, t: &Tensor, k: usize) -> Result<Tensor> {
        t.channel_slice(k * self.per_component, self.per_component)
    }
}

/// Concatenates two sedenion feature maps component by component: component `k`
/// of the result is `[a_k, b_k]`.
pub fn concat_components(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let la = ComponentLayout::of_channels(a.dims4("concat input")?[1])?;
    let lb = ComponentLayout::of_channels(b.dims4("concat input")?[1])?;
    let mut parts = Vec::with_capacity(2 * COMPONENTS);
    for k in 0..COMPONENTS {
        parts.push(la.component(a, k)?);
        parts.push(lb.component(b, k)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat_channels(&refs)
}

/// Adjoint of [`concat_components`] given the first operand's per-component width.
pub fn split_components(t: &Tensor, first_per_component: usize) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = t.dims4("split input")?;
    let total = ComponentLayout::of_channels(c)?.per_component;
    if first_per_component > total {
        return shape_err(format!("cannot split {first_per_component} of {total} channels per component"));
    }
    let second = total - first_per_component;
    let mut a = Tensor::zeros(&[n, COMPONENTS * first_per_component, h, w]);
    let mut b = Tensor::zeros(&[n, COMPONENTS * second, h, w]);
    for k in 0..COMPONENTS {
        a.put_channels(k * first_per_component, &t.channel_slice(k * total, first_per_component)?, false)?;
        b.put_channels(k * second, &t.channel_slice(k * total + first_per_component, second)?, false)?;
    }
    Ok((a, b))
}

/// Gradients produced by [`HxConv2d::gradients`].
#[derive(Clone, Debug)]
pub struct HxConvGrads {
    pub input: Tensor,
    pub banks: Vec<Tensor>,
    pub bias: Option<Tensor>,
}

/// Sedenion convolution mapping `16*Ci` to `16*Co` channels.
///
/// `spec` describes one bank (`Ci -> Co`). Output component `r` is
/// `sum_c sign(r, c) * conv(x_c, bank[index(r, c)])`, which is a real
/// convolution whose weight has the block structure of left multiplication by
/// a sedenion. Every bank is used by exactly sixteen `(r, c)` pairs.
#[derive(Clone, Debug)]
pub struct HxConv2d {
    pub spec: Conv2dSpec,
    pub banks: Vec<Param>,
    pub bias: Option<Param>,
    table: &'static SignedIndexTable,
    cache: Option<Tensor>,
}

impl HxConv2d {
    /// Banks drawn from `U(-b, b)`, `b = sqrt(6 / (fan_in + fan_out))` with the
    /// sixteen-fold combination included in both fan terms. Bias starts at zero.
    pub fn new(spec: Conv2dSpec, bias: bool, rng: &mut Prng) -> Self {
        let k2 = spec.kernel_h * spec.kernel_w;
        let bound = glorot_bound(COMPONENTS * spec.in_channels * k2, COMPONENTS * spec.out_channels * k2);
        let banks = (0..COMPONENTS)
            .map(|_| Param::new(uniform_tensor(&spec.weight_shape(), bound, rng)))
            .collect();
        Self::from_banks_unchecked(spec, banks, bias)
    }

    /// Layer with explicit bank values (bias, if any, starts at zero).
    pub fn from_banks(spec: Conv2dSpec, banks: Vec<Tensor>, bias: bool) -> Result<Self> {
        if banks.len() != COMPONENTS {
            return shape_err(format!("sedenion convolution needs {COMPONENTS} banks, got {}", banks.len()));
        }
        for b in &banks {
            b.ensure_shape(&spec.weight_shape(), "sedenion bank")?;
        }
        Ok(Self::from_banks_unchecked(spec, banks.into_iter().map(Param::new).collect(), bias))
    }

    fn from_banks_unchecked(spec: Conv2dSpec, banks: Vec<Param>, bias: bool) -> Self {
        Self {
            spec,
            banks,
            bias: bias.then(|| Param::new(Tensor::zeros(&[COMPONENTS * spec.out_channels]))),
            table: sedenion_table(),
            cache: None,
        }
    }

    pub fn table(&self) -> &SignedIndexTable {
        self.table
    }

    /// Spec of the equivalent real convolution over all `16*Ci` channels.
    pub fn real_spec(&self) -> Conv2dSpec {
        Conv2dSpec {
            in_channels: COMPONENTS * self.spec.in_channels,
            out_channels: COMPONENTS * self.spec.out_channels,
            ..self.spec
        }
    }

    /// The `[16Co, 16Ci, kh, kw]` real weight: block `(r, c)` is `sign(r, c) * bank[index(r, c)]`.
    pub fn expanded_weight(&self) -> Tensor {
        let (co, ci) = (self.spec.out_channels, self.spec.in_channels);
        let k2 = self.spec.kernel_h * self.spec.kernel_w;
        let big = self.real_spec();
        let mut w = Tensor::zeros(&big.weight_shape());
        let row_len = COMPONENTS * ci * k2;
        let dst = w.data_mut();
        for r in 0..COMPONENTS {
            for c in 0..COMPONENTS {
                let bank = self.banks[self.table.index(r, c)].value.data();
                let s = self.table.sign(r, c) as f32;
                for o in 0..co {
                    let src = &bank[o * ci * k2..(o + 1) * ci * k2];
                    let start = (r * co + o) * row_len + c * ci * k2;
                    dst[start..start + ci * k2].iter_mut().zip(src).for_each(|(d, v)| *d = s * v);
                }
            }
        }
        w
    }

    /// Sums the signed blocks of a full real-weight gradient back onto the banks.
    fn fold_weight_grad(&self, full: &Tensor) -> Vec<Tensor> {
        let (co, ci) = (self.spec.out_channels, self.spec.in_channels);
        let k2 = self.spec.kernel_h * self.spec.kernel_w;
        let row_len = COMPONENTS * ci * k2;
        let mut banks = vec![Tensor::zeros(&self.spec.weight_shape()); COMPONENTS];
        let src = full.data();
        for r in 0..COMPONENTS {
            for c in 0..COMPONENTS {
                let bank = banks[self.table.index(r, c)].data_mut();
                let s = self.table.sign(r, c) as f32;
                for o in 0..co {
                    let start = (r * co + o) * row_len + c * ci * k2;
                    bank[o * ci * k2..(o + 1) * ci * k2]
                        .iter_mut()
                        .zip(&src[start..start + ci * k2])
                        .for_each(|(d, v)| *d += s * v);
                }
            }
        }
        banks
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let c = input.dims4("sedenion conv input")?[1];
        let layout = ComponentLayout::of_channels(c)?;
        if layout.per_component != self.spec.in_channels {
            return shape_err(format!(
                "sedenion conv expects {} channels per component, input has {}",
                self.spec.in_channels, layout.per_component
            ));
        }
        Ok(())
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut out = conv2d(input, &self.expanded_weight(), &self.real_spec())?;
        if let Some(b) = &self.bias {
            add_channel_bias(&mut out, &b.value)?;
        }
        Ok(out)
    }

    /// Reference path: 256 small convolutions combined with the table signs.
    pub fn infer_componentwise(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let in_layout = ComponentLayout::new(self.spec.in_channels);
        let parts: Vec<Tensor> = (0..COMPONENTS)
            .map(|c| in_layout.component(input, c))
            .collect::<Result<_>>()?;
        let mut outs = Vec::with_capacity(COMPONENTS);
        for r in 0..COMPONENTS {
            let mut acc: Option<Tensor> = None;
            for (c, part) in parts.iter().enumerate() {
                let y = conv2d(part, &self.banks[self.table.index(r, c)].value, &self.spec)?;
                let s = self.table.sign(r, c) as f32;
                match &mut acc {
                    None => acc = Some(y.scale(s)),
                    Some(a) => a.axpy(s, &y)?,
                }
            }
            outs.push(acc.expect("sixteen components"));
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        let mut out = Tensor::concat_channels(&refs)?;
        if let Some(b) = &self.bias {
            add_channel_bias(&mut out, &b.value)?;
        }
        Ok(out)
    }

    /// Pure backward: gradients of `sum(forward(input) * grad_out)`.
    pub fn gradients(&self, input: &Tensor, grad_out: &Tensor) -> Result<HxConvGrads> {
        self.check_input(input)?;
        let (gi, gw) = conv2d_backward(input, &self.expanded_weight(), grad_out, &self.real_spec())?;
        let bias = match &self.bias {
            Some(_) => Some(channel_sums(grad_out)?),
            None => None,
        };
        Ok(HxConvGrads { input: gi, banks: self.fold_weight_grad(&gw), bias })
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.cache.take().ok_or_else(|| missing_cache("sedenion conv"))?;
        let grads = self.gradients(&input, grad_out);
        self.cache = Some(input);
        let grads = grads?;
        for (p, g) in self.banks.iter_mut().zip(&grads.banks) {
            p.grad.add_assign(g)?;
        }
        if let (Some(p), Some(g)) = (&mut self.bias, &grads.bias) {
            p.grad.add_assign(g)?;
        }
        Ok(grads.input)
    }
}

impl Module for HxConv2d {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (k, b) in self.banks.iter_mut().enumerate() {
            out.push((join(prefix, &format!("bank{k:02}")), b));
        }
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}

/// Number of `(r, c)` pairs that read each weight component.
pub fn bank_usage(table: &SignedIndexTable) -> Vec<usize> {
    let mut counts = vec![0; table.dim()];
    for r in 0..table.dim() {
        for c in 0..table.dim() {
            counts[table.index(r, c)] += 1;
        }
    }
    counts
}

/// Trainable parameters of a sedenion convolution: `16*Co*Ci*kh*kw` (+ `16*Co` bias).
pub fn hxconv_param_count(spec: &Conv2dSpec, bias: bool) -> usize {
    COMPONENTS * spec.weight_shape().iter().product::<usize>()
        + if bias { COMPONENTS * spec.out_channels } else { 0 }
}

/// Parameters of the real convolution mapping `16*Ci` to `16*Co` channels.
pub fn equivalent_real_param_count(spec: &Conv2dSpec, bias: bool) -> usize {
    let big = Conv2dSpec {
        in_channels: COMPONENTS * spec.in_channels,
        out_channels: COMPONENTS * spec.out_channels,
        ..*spec
    };
    Conv2d::param_count(&big, bias)
}
