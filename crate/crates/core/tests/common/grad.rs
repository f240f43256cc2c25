//! Per-seed gradient checks of each tensorcore layer: backprop against
//! central finite differences with step [`H`], in double precision.

use lungseg::tensorcore::*;
use rand::Rng;

use super::{away_from_zero, rng, uniform_tensor};

pub const H: f64 = 1e-5;

/// `f(t) = sum(r * t)` contracts a layer output to a scalar with random weights.
fn contract(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn with(t: &Tensor<f64>, values: &[f64]) -> Tensor<f64> {
    Tensor::new(t.shape(), values.to_vec()).unwrap()
}

pub fn conv2d_gradients(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, ci, co) = (g.gen_range(1..3), g.gen_range(1..4), g.gen_range(1..4));
    let (hh, ww) = (g.gen_range(3..7), g.gen_range(3..7));
    let k = if seed % 4 == 3 { 1 } else { 3 };
    let pad = k / 2;
    let x = uniform_tensor(&mut g, [n, ci, hh, ww], -1.0, 1.0);
    let w = uniform_tensor(&mut g, [co, ci, k, k], -1.0, 1.0);
    let b: Vec<f64> = (0..co).map(|_| g.gen_range(-1.0..1.0)).collect();
    let out = conv2d(&x, &w, &b, pad, 1).unwrap();
    let r = uniform_tensor(&mut g, out.shape(), -1.0, 1.0);
    let grads = conv2d_backward(&x, &w, &r, pad, 1).unwrap();
    let ex = grad_check(x.data(), grads.input.data(), H, |v| {
        contract(&conv2d(&with(&x, v), &w, &b, pad, 1).unwrap(), &r)
    });
    let ew = grad_check(w.data(), grads.weight.data(), H, |v| {
        contract(&conv2d(&x, &with(&w, v), &b, pad, 1).unwrap(), &r)
    });
    let eb = grad_check(&b, &grads.bias, H, |v| {
        contract(&conv2d(&x, &w, v, pad, 1).unwrap(), &r)
    });
    ex.max(ew).max(eb)
}

pub fn conv_transpose_gradients(seed: u64) -> f64 {
    let mut g = rng(100 + seed);
    let (n, ci, co) = (g.gen_range(1..3), g.gen_range(1..4), g.gen_range(1..4));
    let (hh, ww) = (g.gen_range(1..5), g.gen_range(1..5));
    let x = uniform_tensor(&mut g, [n, ci, hh, ww], -1.0, 1.0);
    let w = uniform_tensor(&mut g, [ci, co, 2, 2], -1.0, 1.0);
    let b: Vec<f64> = (0..co).map(|_| g.gen_range(-1.0..1.0)).collect();
    let out = conv_transpose2d(&x, &w, &b).unwrap();
    let r = uniform_tensor(&mut g, out.shape(), -1.0, 1.0);
    let grads = conv_transpose2d_backward(&x, &w, &r).unwrap();
    let ex = grad_check(x.data(), grads.input.data(), H, |v| {
        contract(&conv_transpose2d(&with(&x, v), &w, &b).unwrap(), &r)
    });
    let ew = grad_check(w.data(), grads.weight.data(), H, |v| {
        contract(&conv_transpose2d(&x, &with(&w, v), &b).unwrap(), &r)
    });
    let eb = grad_check(&b, &grads.bias, H, |v| {
        contract(&conv_transpose2d(&x, &w, v).unwrap(), &r)
    });
    ex.max(ew).max(eb)
}

pub fn maxpool_gradients(seed: u64) -> f64 {
    let mut g = rng(200 + seed);
    let shape = [
        g.gen_range(1..3),
        g.gen_range(1..3),
        2 * g.gen_range(1..4),
        2 * g.gen_range(1..4),
    ];
    let x = uniform_tensor(&mut g, shape, -1.0, 1.0);
    let pooled = maxpool2d(&x).unwrap();
    let r = uniform_tensor(&mut g, pooled.output.shape(), -1.0, 1.0);
    let analytic = maxpool2d_backward(&r, &pooled.argmax, shape).unwrap();
    grad_check(x.data(), analytic.data(), H, |v| {
        contract(&maxpool2d(&with(&x, v)).unwrap().output, &r)
    })
}

pub fn activation_gradients(seed: u64) -> f64 {
    let mut g = rng(300 + seed);
    let shape = [2, 2, 3, 3];
    // keep ReLU inputs clear of the kink at zero
    let x = away_from_zero(&mut g, shape, 0.05, 2.0);
    let r = uniform_tensor(&mut g, shape, -1.0, 1.0);
    let er = grad_check(x.data(), relu_backward(&x, &r).data(), H, |v| {
        contract(&relu(&with(&x, v)), &r)
    });
    let s = sigmoid(&x);
    let es = grad_check(x.data(), sigmoid_backward(&s, &r).data(), H, |v| {
        contract(&sigmoid(&with(&x, v)), &r)
    });
    er.max(es)
}

pub fn concat_gradients(seed: u64) -> f64 {
    let mut g = rng(400 + seed);
    let (ca, cb) = (g.gen_range(1..4), g.gen_range(1..4));
    let a = uniform_tensor(&mut g, [2, ca, 3, 4], -1.0, 1.0);
    let b = uniform_tensor(&mut g, [2, cb, 3, 4], -1.0, 1.0);
    let r = uniform_tensor(&mut g, [2, ca + cb, 3, 4], -1.0, 1.0);
    let (ga, gb) = concat_channels_backward(&r, ca).unwrap();
    let ea = grad_check(a.data(), ga.data(), H, |v| {
        contract(&concat_channels(&with(&a, v), &b).unwrap(), &r)
    });
    let eb = grad_check(b.data(), gb.data(), H, |v| {
        contract(&concat_channels(&a, &with(&b, v)).unwrap(), &r)
    });
    ea.max(eb)
}

pub fn loss_gradients(seed: u64) -> f64 {
    let mut g = rng(500 + seed);
    let shape = [2, 1, 4, 4];
    let p = uniform_tensor(&mut g, shape, 0.05, 0.95);
    let y = Tensor::from_fn(shape, |_| if g.gen_bool(0.5) { 1.0 } else { 0.0 });
    let eb = grad_check(p.data(), bce_loss_grad(&p, &y).unwrap().data(), H, |v| {
        bce_loss(&with(&p, v), &y).unwrap()
    });
    let ed = grad_check(
        p.data(),
        soft_dice_grad(&p, &y, 1.0).unwrap().data(),
        H,
        |v| soft_dice_loss(&with(&p, v), &y, 1.0).unwrap(),
    );
    let z = uniform_tensor(&mut g, shape, -3.0, 3.0);
    let el = grad_check(
        z.data(),
        bce_logits_grad(&sigmoid(&z), &y).unwrap().data(),
        H,
        |v| bce_loss(&sigmoid(&with(&z, v)), &y).unwrap(),
    );
    eb.max(ed).max(el)
}

pub fn conv_bce_pipeline_gradient(seed: u64) -> f64 {
    let mut g = rng(600 + seed);
    let x = uniform_tensor(&mut g, [1, 1, 8, 8], 0.0, 1.0);
    let w = uniform_tensor(&mut g, [1, 1, 3, 3], -1.0, 1.0);
    let b = vec![g.gen_range(-0.5..0.5)];
    let y = Tensor::from_fn([1, 1, 8, 8], |_| if g.gen_bool(0.5) { 1.0 } else { 0.0 });
    let logits = conv2d(&x, &w, &b, 1, 1).unwrap();
    let gz = bce_logits_grad(&sigmoid(&logits), &y).unwrap();
    let gw = conv2d_backward(&x, &w, &gz, 1, 1).unwrap().weight;
    grad_check(w.data(), gw.data(), H, |v| {
        bce_loss(&sigmoid(&conv2d(&x, &with(&w, v), &b, 1, 1).unwrap()), &y).unwrap()
    })
}

/// Maximum relative error of one layer check for a given seed.
pub type LayerCheck = fn(u64) -> f64;

/// Every layer check, by name.
pub const LAYER_CHECKS: [(&str, LayerCheck); 7] = [
    ("conv2d", conv2d_gradients),
    ("conv_transpose2d", conv_transpose_gradients),
    ("maxpool2d", maxpool_gradients),
    ("relu/sigmoid", activation_gradients),
    ("concat_channels", concat_gradients),
    ("bce/soft dice", loss_gradients),
    ("conv2d+sigmoid+bce", conv_bce_pipeline_gradient),
];
