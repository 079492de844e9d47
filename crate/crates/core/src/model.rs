//! Sedenion U-Net.
//!
//! The 7-channel static map is lifted to 9 channels by a small real-valued
//! block and becomes sedenion component 0; the twelve 9-channel input frames
//! become components 1..=12 (oldest first); components 13..=15 are zero. The
//! network output has 16 components of 8 channels each, and the predicted
//! frames are read from a configured list of components.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::layers::{
    concat_components, hxconv_param_count, join, split_components, BatchNorm2d, ComponentLayout,
    Conv2d, HxConv2d, Module, Param, Relu, COMPONENTS,
};
use crate::tensor::{upsample2x, upsample2x_backward, BnMode, Conv2dSpec, Prng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsample {
    Nearest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_dynamic_channels: usize,
    pub in_static_channels: usize,
    pub out_channels_per_frame: usize,
    pub frames_in: usize,
    pub frames_out: usize,
    pub depth: usize,
    pub per_component_widths: Vec<usize>,
    pub blocks_per_group: usize,
    pub upsample: Upsample,
    pub output_components: Vec<usize>,
    /// Bias on the final sedenion convolution (the only one not followed by BN).
    pub final_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_dynamic_channels: 9,
            in_static_channels: 7,
            out_channels_per_frame: 8,
            frames_in: 12,
            frames_out: 6,
            depth: 3,
            per_component_widths: vec![16, 32, 64, 64],
            blocks_per_group: 1,
            upsample: Upsample::Nearest,
            output_components: DEFAULT_OUTPUT_COMPONENTS.to_vec(),
            final_bias: true,
        }
    }
}

/// Components read out for the +5, +10, +15, +30, +45 and +60 minute frames.
pub const DEFAULT_OUTPUT_COMPONENTS: [usize; 6] = [1, 2, 3, 6, 9, 12];

impl ModelConfig {
    /// Depth 2, widths `[8, 16, 16]`: the desk-scale configuration.
    pub fn tiny() -> Self {
        Self { depth: 2, per_component_widths: vec![8, 16, 16], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_in != 12 {
            return arg_err(format!("frames_in must be 12 (got {})", self.frames_in));
        }
        if self.depth == 0 {
            return arg_err("depth must be at least 1");
        }
        if self.per_component_widths.len() != self.depth + 1 {
            return arg_err(format!(
                "per_component_widths needs depth + 1 = {} entries, got {}",
                self.depth + 1,
                self.per_component_widths.len()
            ));
        }
        if self.per_component_widths.contains(&0) || self.blocks_per_group == 0 {
            return arg_err("widths and blocks_per_group must be positive");
        }
        if self.in_dynamic_channels == 0 || self.in_static_channels == 0 || self.out_channels_per_frame == 0 {
            return arg_err("channel counts must be positive");
        }
        if self.out_channels_per_frame > self.in_dynamic_channels {
            return arg_err("out_channels_per_frame cannot exceed in_dynamic_channels");
        }
        if self.output_components.len() != self.frames_out {
            return arg_err(format!(
                "frames_out is {} but {} output components are listed",
                self.frames_out,
                self.output_components.len()
            ));
        }
        if let Some(k) = self.output_components.iter().find(|&&k| k == 0 || k > self.frames_in) {
            return arg_err(format!("output component {k} outside 1..={}", self.frames_in));
        }
        Ok(())
    }

    /// Input height and width must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let m = self.spatial_multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return shape_err(format!("spatial size {h}x{w} not divisible by {m} (depth {})", self.depth));
        }
        Ok(())
    }
}

fn hx3(cin: usize, cout: usize, stride: usize) -> Conv2dSpec {
    Conv2dSpec::new(cin, cout, 3, stride, 1)
}

/// Real conv3×3 (7→9) → BN → ReLU → conv3×3 (9→9, with bias).
#[derive(Clone, Debug)]
pub struct LearnVectorBlock {
    conv1: Conv2d,
    bn: BatchNorm2d,
    relu: Relu,
    conv2: Conv2d,
}

impl LearnVectorBlock {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut Prng) -> Self {
        Self {
            conv1: Conv2d::new(Conv2dSpec::new(in_channels, out_channels, 3, 1, 1), false, rng),
            bn: BatchNorm2d::new(out_channels),
            relu: Relu::default(),
            conv2: Conv2d::new(Conv2dSpec::new(out_channels, out_channels, 3, 1, 1), true, rng),
        }
    }

    pub fn param_count(in_channels: usize, out_channels: usize) -> usize {
        Conv2d::param_count(&Conv2dSpec::new(in_channels, out_channels, 3, 1, 1), false)
            + 2 * out_channels
            + Conv2d::param_count(&Conv2dSpec::new(out_channels, out_channels, 3, 1, 1), true)
    }

    pub fn forward(&mut self, input: &Tensor, mode: BnMode) -> Result<Tensor> {
        let c = input.dims4("static input")?[1];
        if c != self.conv1.spec.in_channels {
            return shape_err(format!("static input has {c} channels, expected {}", self.conv1.spec.in_channels));
        }
        let h = self.conv1.forward(input)?;
        let h = self.bn.forward(&h, mode)?;
        let h = self.relu.forward(&h);
        self.conv2.forward(&h)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.conv2.backward(grad)?;
        let g = self.relu.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.conv1.backward(&g)
    }
}

impl Module for LearnVectorBlock {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv1.params_mut(&join(prefix, "conv1"), out);
        self.bn.params_mut(&join(prefix, "bn"), out);
        self.conv2.params_mut(&join(prefix, "conv2"), out);
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.bn.buffers_mut(&join(prefix, "bn"), out);
    }
}

/// Pre-activation residual block of sedenion convolutions.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    bn1: BatchNorm2d,
    relu1: Relu,
    conv1: HxConv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    conv2: HxConv2d,
    shortcut: Option<HxConv2d>,
}

impl ResidualBlock {
    pub fn new(cin: usize, cout: usize, rng: &mut Prng) -> Self {
        Self {
            bn1: BatchNorm2d::new(COMPONENTS * cin),
            relu1: Relu::default(),
            conv1: HxConv2d::new(hx3(cin, cout, 1), false, rng),
            bn2: BatchNorm2d::new(COMPONENTS * cout),
            relu2: Relu::default(),
            conv2: HxConv2d::new(hx3(cout, cout, 1), false, rng),
            shortcut: (cin != cout).then(|| HxConv2d::new(Conv2dSpec::new(cin, cout, 1, 1, 0), false, rng)),
        }
    }

    pub fn param_count(cin: usize, cout: usize) -> usize {
        2 * COMPONENTS * cin
            + hxconv_param_count(&hx3(cin, cout, 1), false)
            + 2 * COMPONENTS * cout
            + hxconv_param_count(&hx3(cout, cout, 1), false)
            + if cin != cout { hxconv_param_count(&Conv2dSpec::new(cin, cout, 1, 1, 0), false) } else { 0 }
    }

    pub fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<Tensor> {
        let h = self.bn1.forward(x, mode)?;
        let h = self.relu1.forward(&h);
        let h = self.conv1.forward(&h)?;
        let h = self.bn2.forward(&h, mode)?;
        let h = self.relu2.forward(&h);
        let mut h = self.conv2.forward(&h)?;
        match &mut self.shortcut {
            Some(s) => h.add_assign(&s.forward(x)?)?,
            None => h.add_assign(x)?,
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut gx = match &mut self.shortcut {
            Some(s) => s.backward(grad)?,
            None => grad.clone(),
        };
        let g = self.conv2.backward(grad)?;
        let g = self.relu2.backward(&g)?;
        let g = self.bn2.backward(&g)?;
        let g = self.conv1.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        gx.add_assign(&self.bn1.backward(&g)?)?;
        Ok(gx)
    }
}

impl Module for ResidualBlock {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.bn1.params_mut(&join(prefix, "bn1"), out);
        self.conv1.params_mut(&join(prefix, "conv1"), out);
        self.bn2.params_mut(&join(prefix, "bn2"), out);
        self.conv2.params_mut(&join(prefix, "conv2"), out);
        if let Some(s) = &mut self.shortcut {
            s.params_mut(&join(prefix, "shortcut"), out);
        }
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.bn1.buffers_mut(&join(prefix, "bn1"), out);
        self.bn2.buffers_mut(&join(prefix, "bn2"), out);
    }
}

/// Residual blocks followed by a stride-2 sedenion convolution.
#[derive(Clone, Debug)]
pub struct EncoderGroup {
    blocks: Vec<ResidualBlock>,
    down: HxConv2d,
}

impl EncoderGroup {
    pub fn new(cin: usize, width: usize, next_width: usize, blocks: usize, rng: &mut Prng) -> Self {
        let blocks = (0..blocks)
            .map(|b| ResidualBlock::new(if b == 0 { cin } else { width }, width, rng))
            .collect();
        Self { blocks, down: HxConv2d::new(hx3(width, next_width, 2), false, rng) }
    }

    pub fn param_count(cin: usize, width: usize, next_width: usize, blocks: usize) -> usize {
        (0..blocks)
            .map(|b| ResidualBlock::param_count(if b == 0 { cin } else { width }, width))
            .sum::<usize>()
            + hxconv_param_count(&hx3(width, next_width, 2), false)
    }

    /// Returns `(pooled, skip)`; the skip is the activation before pooling.
    pub fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<(Tensor, Tensor)> {
        let [_, _, h, w] = x.dims4("encoder input")?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("encoder input {h}x{w} cannot be halved"));
        }
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        let pooled = self.down.forward(&h)?;
        Ok((pooled, h))
    }

    pub fn backward(&mut self, grad_pooled: &Tensor, grad_skip: &Tensor) -> Result<Tensor> {
        let mut g = self.down.backward(grad_pooled)?;
        g.add_assign(grad_skip)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        Ok(g)
    }
}

impl Module for EncoderGroup {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&join(prefix, &format!("block{i}")), out);
        }
        self.down.params_mut(&join(prefix, "down"), out);
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.buffers_mut(&join(prefix, &format!("block{i}")), out);
        }
    }
}

/// BN → ReLU → sedenion conv3×3. Used as the bottleneck block and (with a 1×1
/// kernel) as the output head.
#[derive(Clone, Debug)]
pub struct NormActConv {
    bn: BatchNorm2d,
    relu: Relu,
    conv: HxConv2d,
}

impl NormActConv {
    pub fn new(spec: Conv2dSpec, bias: bool, rng: &mut Prng) -> Self {
        Self {
            bn: BatchNorm2d::new(COMPONENTS * spec.in_channels),
            relu: Relu::default(),
            conv: HxConv2d::new(spec, bias, rng),
        }
    }

    pub fn param_count(spec: &Conv2dSpec, bias: bool) -> usize {
        2 * COMPONENTS * spec.in_channels + hxconv_param_count(spec, bias)
    }

    pub fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<Tensor> {
        let h = self.bn.forward(x, mode)?;
        let h = self.relu.forward(&h);
        self.conv.forward(&h)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.conv.backward(grad)?;
        let g = self.relu.backward(&g)?;
        self.bn.backward(&g)
    }
}

impl Module for NormActConv {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.bn.params_mut(&join(prefix, "bn"), out);
        self.conv.params_mut(&join(prefix, "conv"), out);
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.bn.buffers_mut(&join(prefix, "bn"), out);
    }
}

/// Upsample → component-wise concat with the skip → sedenion conv3×3 → residual block.
#[derive(Clone, Debug)]
pub struct DecoderGroup {
    up_width: usize,
    reduce: HxConv2d,
    block: ResidualBlock,
}

impl DecoderGroup {
    pub fn new(up_width: usize, skip_width: usize, width: usize, rng: &mut Prng) -> Self {
        Self {
            up_width,
            reduce: HxConv2d::new(hx3(up_width + skip_width, width, 1), false, rng),
            block: ResidualBlock::new(width, width, rng),
        }
    }

    pub fn param_count(up_width: usize, skip_width: usize, width: usize) -> usize {
        hxconv_param_count(&hx3(up_width + skip_width, width, 1), false) + ResidualBlock::param_count(width, width)
    }

    pub fn forward(&mut self, x: &Tensor, skip: &Tensor, mode: BnMode) -> Result<Tensor> {
        let up = upsample2x(x)?;
        let cat = concat_components(&up, skip)?;
        let h = self.reduce.forward(&cat)?;
        self.block.forward(&h, mode)
    }

    /// Returns `(grad_x, grad_skip)`.
    pub fn backward(&mut self, grad: &Tensor) -> Result<(Tensor, Tensor)> {
        let g = self.block.backward(grad)?;
        let g = self.reduce.backward(&g)?;
        let (g_up, g_skip) = split_components(&g, self.up_width)?;
        Ok((upsample2x_backward(&g_up)?, g_skip))
    }
}

impl Module for DecoderGroup {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.reduce.params_mut(&join(prefix, "reduce"), out);
        self.block.params_mut(&join(prefix, "block"), out);
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.block.buffers_mut(&join(prefix, "block"), out);
    }
}

/// Packs static features and twelve frames into a `[N, 16*C, H, W]` sedenion map:
/// `[static, frame_1, ..., frame_12, 0, 0, 0]` in component-major order.
pub fn pack_input(static_features: &Tensor, dynamic: &[Tensor]) -> Result<Tensor> {
    if dynamic.len() != 12 {
        return arg_err(format!("expected 12 input frames, got {}", dynamic.len()));
    }
    let [n, c, h, w] = static_features.dims4("static features")?;
    for (i, f) in dynamic.iter().enumerate() {
        if f.shape() != [n, c, h, w] {
            return shape_err(format!("frame {i} has shape {:?}, expected {:?}", f.shape(), [n, c, h, w]));
        }
    }
    let mut out = Tensor::zeros(&[n, COMPONENTS * c, h, w]);
    out.put_channels(0, static_features, false)?;
    for (k, f) in dynamic.iter().enumerate() {
        out.put_channels((k + 1) * c, f, false)?;
    }
    Ok(out)
}

/// Picks components of the network output in the listed order: `[N, len, Cg, H, W]`.
pub fn select_outputs(net_out: &Tensor, components: &[usize], per_component: usize) -> Result<Tensor> {
    let [n, c, h, w] = net_out.dims4("network output")?;
    if c != COMPONENTS * per_component {
        return shape_err(format!("network output has {c} channels, expected {}", COMPONENTS * per_component));
    }
    if let Some(k) = components.iter().find(|&&k| k >= COMPONENTS) {
        return arg_err(format!("output component {k} outside 0..=15"));
    }
    let plane = per_component * h * w;
    let mut data = Vec::with_capacity(n * components.len() * plane);
    for b in 0..n {
        for &k in components {
            let start = (b * c + k * per_component) * h * w;
            data.extend_from_slice(&net_out.data()[start..start + plane]);
        }
    }
    Tensor::from_vec(&[n, components.len(), per_component, h, w], data)
}

/// Adjoint of [`select_outputs`].
pub fn select_outputs_backward(grad: &Tensor, components: &[usize], per_component: usize) -> Result<Tensor> {
    let (n, f, cg, h, w) = match grad.shape() {
        &[n, f, cg, h, w] => (n, f, cg, h, w),
        s => return shape_err(format!("selected-output gradient must be rank 5, got {s:?}")),
    };
    if f != components.len() || cg != per_component {
        return shape_err(format!("gradient {:?} does not match {} components", grad.shape(), components.len()));
    }
    let c = COMPONENTS * per_component;
    let plane = per_component * h * w;
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for b in 0..n {
        for (j, &k) in components.iter().enumerate() {
            let src = &grad.data()[(b * f + j) * plane..(b * f + j + 1) * plane];
            let start = (b * c + k * per_component) * h * w;
            out.data_mut()[start..start + plane].iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SedUNet {
    config: ModelConfig,
    learn_vector: LearnVectorBlock,
    encoders: Vec<EncoderGroup>,
    code: NormActConv,
    /// Deepest first.
    decoders: Vec<DecoderGroup>,
    head: NormActConv,
}

impl SedUNet {
    pub fn new(config: ModelConfig, rng: &mut Prng) -> Result<Self> {
        config.validate()?;
        let widths = &config.per_component_widths;
        let c0 = config.in_dynamic_channels;
        let learn_vector = LearnVectorBlock::new(config.in_static_channels, c0, rng);
        let encoders = (0..config.depth)
            .map(|i| {
                let cin = if i == 0 { c0 } else { widths[i] };
                EncoderGroup::new(cin, widths[i], widths[i + 1], config.blocks_per_group, rng)
            })
            .collect();
        let code = NormActConv::new(hx3(widths[config.depth], widths[config.depth], 1), false, rng);
        let decoders = (0..config.depth)
            .rev()
            .map(|i| DecoderGroup::new(widths[i + 1], widths[i], widths[i], rng))
            .collect();
        let head = NormActConv::new(
            Conv2dSpec::new(widths[0], config.out_channels_per_frame, 1, 1, 0),
            config.final_bias,
            rng,
        );
        Ok(Self { config, learn_vector, encoders, code, decoders, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// `[N, 16*out_channels_per_frame, H, W]`.
    pub fn forward(&mut self, static_input: &Tensor, dynamic: &[Tensor], mode: BnMode) -> Result<Tensor> {
        let [_, _, h, w] = static_input.dims4("static input")?;
        self.config.check_spatial(h, w)?;
        let features = self.learn_vector.forward(static_input, mode)?;
        let mut x = pack_input(&features, dynamic)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        for enc in &mut self.encoders {
            let (pooled, skip) = enc.forward(&x, mode)?;
            skips.push(skip);
            x = pooled;
        }
        x = self.code.forward(&x, mode)?;
        for dec in &mut self.decoders {
            let skip = skips.pop().expect("one skip per decoder");
            x = dec.forward(&x, &skip, mode)?;
        }
        let out = self.head.forward(&x, mode)?;
        out.check_finite("network output")?;
        Ok(out)
    }

    /// Back-propagates a gradient of the full network output into parameter gradients.
    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let mut g = self.head.backward(grad)?;
        let mut skip_grads = Vec::with_capacity(self.config.depth);
        for dec in self.decoders.iter_mut().rev() {
            let (gx, gs) = dec.backward(&g)?;
            skip_grads.push(gs);
            g = gx;
        }
        g = self.code.backward(&g)?;
        // skip gradients arrive shallowest first
        for (enc, gs) in self.encoders.iter_mut().rev().zip(skip_grads.iter().rev()) {
            g = enc.backward(&g, gs)?;
        }
        let static_grad = ComponentLayout::of_channels(g.dims4("packed gradient")?[1])?.component(&g, 0)?;
        self.learn_vector.backward(&static_grad)?;
        Ok(())
    }

    /// Eval-mode forward followed by output selection: `[N, frames_out, C, H, W]`.
    pub fn predict(&mut self, static_input: &Tensor, dynamic: &[Tensor]) -> Result<Tensor> {
        let out = self.forward(static_input, dynamic, BnMode::Eval)?;
        select_outputs(&out, &self.config.output_components, self.config.out_channels_per_frame)
    }

    pub fn select(&self, net_out: &Tensor) -> Result<Tensor> {
        select_outputs(net_out, &self.config.output_components, self.config.out_channels_per_frame)
    }

    pub fn select_backward(&self, grad: &Tensor) -> Result<Tensor> {
        select_outputs_backward(grad, &self.config.output_components, self.config.out_channels_per_frame)
    }

    /// Copies parameter and buffer values from `other`, which must share the architecture.
    pub fn load_state(&mut self, other: &mut SedUNet) -> Result<()> {
        let mut mine = Vec::new();
        self.params_mut("", &mut mine);
        let mut theirs = Vec::new();
        other.params_mut("", &mut theirs);
        if mine.len() != theirs.len() {
            return Err(Error::Shape("architectures differ".into()));
        }
        for ((a, p), (b, q)) in mine.into_iter().zip(theirs) {
            if a != b {
                return Err(Error::Shape(format!("parameter `{a}` vs `{b}`")));
            }
            p.value = q.value.clone();
        }
        Ok(())
    }
}

impl Module for SedUNet {
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.learn_vector.params_mut(&join(prefix, "learn_vector"), out);
        for (i, e) in self.encoders.iter_mut().enumerate() {
            e.params_mut(&join(prefix, &format!("enc{i}")), out);
        }
        self.code.params_mut(&join(prefix, "code"), out);
        let depth = self.decoders.len();
        for (j, d) in self.decoders.iter_mut().enumerate() {
            d.params_mut(&join(prefix, &format!("dec{}", depth - 1 - j)), out);
        }
        self.head.params_mut(&join(prefix, "head"), out);
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.learn_vector.buffers_mut(&join(prefix, "learn_vector"), out);
        for (i, e) in self.encoders.iter_mut().enumerate() {
            e.buffers_mut(&join(prefix, &format!("enc{i}")), out);
        }
        self.code.buffers_mut(&join(prefix, "code"), out);
        let depth = self.decoders.len();
        for (j, d) in self.decoders.iter_mut().enumerate() {
            d.buffers_mut(&join(prefix, &format!("dec{}", depth - 1 - j)), out);
        }
        self.head.buffers_mut(&join(prefix, "head"), out);
    }
}

/// Closed-form trainable parameter count (BN running statistics excluded).
pub fn model_param_count(config: &ModelConfig) -> usize {
    let w = &config.per_component_widths;
    let d = config.depth;
    let c0 = config.in_dynamic_channels;
    let mut total = LearnVectorBlock::param_count(config.in_static_channels, c0);
    for i in 0..d {
        let cin = if i == 0 { c0 } else { w[i] };
        total += EncoderGroup::param_count(cin, w[i], w[i + 1], config.blocks_per_group);
        total += DecoderGroup::param_count(w[i + 1], w[i], w[i]);
    }
    total += NormActConv::param_count(&hx3(w[d], w[d], 1), false);
    total += NormActConv::param_count(
        &Conv2dSpec::new(w[0], config.out_channels_per_frame, 1, 1, 0),
        config.final_bias,
    );
    total
}
