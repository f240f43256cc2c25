//! Backprop versus central finite differences, in double precision.

mod common;

use common::grad::LAYER_CHECKS;
use common::{rng, uniform_tensor};
use lungseg::unet::{UNet, UNetConfig};

const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn check_layer(name: &str) {
    let (_, check) = LAYER_CHECKS.iter().find(|(n, _)| *n == name).unwrap();
    for seed in 0..SEEDS {
        let e = check(seed);
        assert!(e < TOL, "{name} seed {seed}: relative error {e}");
    }
}

#[test]
fn conv2d_gradients() {
    check_layer("conv2d");
}

#[test]
fn conv_transpose_gradients() {
    check_layer("conv_transpose2d");
}

#[test]
fn maxpool_gradients() {
    check_layer("maxpool2d");
}

#[test]
fn activation_gradients() {
    check_layer("relu/sigmoid");
}

#[test]
fn concat_gradients() {
    check_layer("concat_channels");
}

#[test]
fn loss_gradients() {
    check_layer("bce/soft dice");
}

#[test]
fn conv_bce_pipeline_gradient() {
    check_layer("conv2d+sigmoid+bce");
}

const UNET_H: f64 = 1e-4;

#[test]
fn reference_forward_matches_model() {
    for seed in 0..3 {
        let cfg = UNetConfig {
            depth: 2,
            base_channels: 2,
            input_size: 16,
            ..Default::default()
        };
        let model = UNet::<f64>::new(cfg, seed).unwrap();
        let mut g = rng(seed);
        let x = uniform_tensor(&mut g, [2, 1, 16, 16], 0.0, 1.0);
        let params: Vec<_> = model.params().iter().map(|p| p.value.clone()).collect();
        let oracle = common::reference_forward(&params, 2, &x).probs;
        let out = model.forward(&x).unwrap();
        assert_eq!(out.shape(), oracle.shape());
        for (a, b) in out.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn unet_gradients() {
    for seed in 0..SEEDS {
        let r = common::unet_grad_report(seed, UNET_H);
        println!(
            "seed {seed}: worst {:.3e} over {} coordinates, {} straddling a kink",
            r.worst, r.checked, r.straddling
        );
        assert!(r.checked > 0);
        assert!(
            r.worst < TOL,
            "seed {seed}: worst relative error {}",
            r.worst
        );
    }
}
