//! Central finite-difference checks of the hand-written backward passes.
//! Every function returns the relative error `|analytic - numeric| / max(|.|)`
//! over the checked coordinates.

use super::{dot, numeric_grad, random_tensor, rel_err};
use hxnet::layers::{BatchNorm2d, Conv2d, HxConv2d, Module, Relu};
use hxnet::model::{LearnVectorBlock, ModelConfig, SedUNet};
use hxnet::tensor::{BnMode, Conv2dSpec, Prng};
use hxnet::Tensor;

const EPS_LV: f32 = 2e-4;
const EPS_UNET: f32 = 3e-4;

fn param_lens<M: Module>(m: &mut M) -> Vec<usize> {
    let mut ps = Vec::new();
    m.params_mut("", &mut ps);
    ps.iter().map(|(_, p)| p.value.len()).collect()
}

fn flat_grads<M: Module>(m: &mut M) -> Vec<f64> {
    let mut ps = Vec::new();
    m.params_mut("", &mut ps);
    ps.iter().flat_map(|(_, p)| p.grad.data().iter().map(|&g| g as f64)).collect()
}

fn nudge<M: Module>(m: &mut M, mut flat: usize, value: Option<f32>, delta: f32) -> f32 {
    let mut ps = Vec::new();
    m.params_mut("", &mut ps);
    for (_, p) in ps {
        if flat < p.value.len() {
            let slot = &mut p.value.data_mut()[flat];
            let old = *slot;
            *slot = value.unwrap_or(old + delta);
            return old;
        }
        flat -= p.value.len();
    }
    panic!("coordinate out of range");
}

fn numeric_param_grad<M: Module>(m: &mut M, coords: &[usize], eps: f32, mut loss: impl FnMut(&mut M) -> f64) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let keep = nudge(m, i, None, eps);
            let up = loss(m);
            nudge(m, i, Some(keep - eps), 0.0);
            let down = loss(m);
            nudge(m, i, Some(keep), 0.0);
            (up - down) / (2.0 * eps as f64)
        })
        .collect()
}

/// `count` distinct coordinates out of `n` (all of them if `count >= n`).
fn sample(n: usize, count: usize, rng: &mut Prng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    if count < n {
        rng.shuffle(&mut all);
        all.truncate(count);
        all.sort_unstable();
    }
    all
}

fn pick(v: &[f64], coords: &[usize]) -> Vec<f64> {
    coords.iter().map(|&i| v[i]).collect()
}

/// Checks input and parameter gradients of `layer` under `loss = <forward(x), r>`.
fn check_layer<M: Module + Clone>(
    layer: &mut M,
    x: &Tensor,
    r: &Tensor,
    eps: f32,
    max_coords: usize,
    rng: &mut Prng,
    forward: impl Fn(&mut M, &Tensor) -> Tensor,
    backward: impl Fn(&mut M, &Tensor) -> Tensor,
) -> f64 {
    layer.zero_grad();
    forward(layer, x);
    let gi = backward(layer, r);
    let gp = flat_grads(layer);

    let xc = sample(x.len(), max_coords, rng);
    let mut xs = x.data().to_vec();
    let mut probe = layer.clone();
    let num_x = numeric_grad(&mut xs, &xc, eps, |v| {
        let t = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
        dot(&forward(&mut probe, &t), r)
    });
    let gi64: Vec<f64> = gi.data().iter().map(|&g| g as f64).collect();
    let mut worst = rel_err(&pick(&gi64, &xc), &num_x);

    let n: usize = param_lens(layer).iter().sum();
    if n > 0 {
        let pc = sample(n, max_coords, rng);
        let num_p = numeric_param_grad(layer, &pc, eps, |m| dot(&forward(m, x), r));
        worst = worst.max(rel_err(&pick(&gp, &pc), &num_p));
    }
    worst
}

pub fn conv(rng: &mut Prng) -> f64 {
    let mut layer = Conv2d::new(Conv2dSpec::new(3, 4, 3, 2, 1), true, rng);
    let x = random_tensor(&[2, 3, 6, 5], rng);
    let r = random_tensor(&[2, 4, 3, 3], rng);
    check_layer(&mut layer, &x, &r, 1e-2, 200, rng, |l, t| l.forward(t).unwrap(), |l, g| l.backward(g).unwrap())
}

pub fn batchnorm(rng: &mut Prng) -> f64 {
    let mut layer = BatchNorm2d::new(4);
    layer.gamma.value = random_tensor(&[4], rng).map(|v| 1.0 + 0.5 * v);
    layer.beta.value = random_tensor(&[4], rng);
    let x = random_tensor(&[3, 4, 3, 3], rng).map(|v| 2.0 * v + 0.5);
    let r = random_tensor(&[3, 4, 3, 3], rng);
    check_layer(
        &mut layer,
        &x,
        &r,
        1e-2,
        200,
        rng,
        |l, t| l.forward(t, BnMode::Train).unwrap(),
        |l, g| l.backward(g).unwrap(),
    )
}

#[derive(Clone, Default)]
struct ReluModule(Relu);

impl Module for ReluModule {
    fn params_mut<'a>(&'a mut self, _: &str, _: &mut Vec<(String, &'a mut hxnet::layers::Param)>) {}
}

pub fn relu(rng: &mut Prng) -> f64 {
    // keep inputs clear of the kink
    let x = random_tensor(&[2, 3, 4, 4], rng).map(|v| if v.abs() < 0.1 { v + 0.2f32.copysign(v) } else { v });
    let r = random_tensor(&[2, 3, 4, 4], rng);
    check_layer(&mut ReluModule::default(), &x, &r, 1e-2, 96, rng, |l, t| l.0.forward(t), |l, g| l.0.backward(g).unwrap())
}

pub fn sedenion_conv(rng: &mut Prng) -> f64 {
    let mut layer = HxConv2d::new(Conv2dSpec::new(2, 2, 3, 1, 1), true, rng);
    let x = random_tensor(&[2, 32, 4, 4], rng);
    let r = random_tensor(&[2, 32, 4, 4], rng);
    let strided = {
        let mut l2 = HxConv2d::new(Conv2dSpec::new(1, 2, 3, 2, 1), false, rng);
        let x2 = random_tensor(&[1, 16, 5, 5], rng);
        let r2 = random_tensor(&[1, 32, 3, 3], rng);
        check_layer(&mut l2, &x2, &r2, 1e-2, 150, rng, |l, t| l.forward(t).unwrap(), |l, g| l.backward(g).unwrap())
    };
    check_layer(&mut layer, &x, &r, 1e-2, 300, rng, |l, t| l.forward(t).unwrap(), |l, g| l.backward(g).unwrap())
        .max(strided)
}

pub fn learn_vector(rng: &mut Prng) -> f64 {
    let mut block = LearnVectorBlock::new(7, 9, rng);
    let x = random_tensor(&[2, 7, 5, 5], rng);
    let r = random_tensor(&[2, 9, 5, 5], rng);
    check_layer(
        &mut block,
        &x,
        &r,
        EPS_LV,
        300,
        rng,
        |l, t| l.forward(t, BnMode::Train).unwrap(),
        |l, g| l.backward(g).unwrap(),
    )
}

/// Depth-1 U-Net on 8x8 inputs; checks `fraction` of all parameters.
pub fn unet(rng: &mut Prng, fraction: f64) -> (f64, usize, usize) {
    let cfg = ModelConfig { depth: 1, per_component_widths: vec![2, 2], ..ModelConfig::default() };
    let mut model = SedUNet::new(cfg, rng).unwrap();
    // positive BN shifts keep most ReLU inputs away from the kink, so few of
    // them cross it under the finite-difference step
    let mut ps = Vec::new();
    model.params_mut("", &mut ps);
    for (name, p) in ps {
        if name.ends_with(".beta") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.uniform(0.5, 1.5));
        }
    }
    let s = random_tensor(&[2, 7, 8, 8], rng).map(|v| 0.5 + 0.5 * v);
    let d: Vec<Tensor> = (0..12).map(|_| random_tensor(&[2, 9, 8, 8], rng).map(|v| 0.5 + 0.5 * v)).collect();
    let r = random_tensor(&[2, 128, 8, 8], rng);
    let mut loss = |m: &mut SedUNet| dot(&m.forward(&s, &d, BnMode::Train).unwrap(), &r);

    model.zero_grad();
    model.forward(&s, &d, BnMode::Train).unwrap();
    model.backward(&r).unwrap();
    let analytic = flat_grads(&mut model);
    let n = analytic.len();
    let coords = sample(n, ((n as f64 * fraction).ceil() as usize).max(1), rng);
    let numeric = numeric_param_grad(&mut model, &coords, EPS_UNET, &mut loss);
    (rel_err(&pick(&analytic, &coords), &numeric), coords.len(), n)
}
