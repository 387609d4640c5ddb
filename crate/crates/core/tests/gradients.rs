mod common;

use common::grad::{self, Errors};

const POINTS: u64 = 10;
const TOL: f64 = 1e-4;

fn check(name: &str, f: fn(u64) -> Errors) {
    for p in 0..POINTS {
        for (block, err) in f(p) {
            assert!(err < TOL, "{name} point {p}, {block}: {err}");
        }
    }
}

#[test]
fn affine_weight_bias_and_input() {
    check("affine", grad::affine);
}

#[test]
fn batch_norm_with_batch_statistics() {
    check("batch_norm", grad::batch_norm);
}

#[test]
fn leaky_relu_away_from_the_kink() {
    check("leaky_relu", grad::leaky);
}

#[test]
fn convolution_kernel_bias_and_input() {
    check("conv_layer", grad::conv_layer);
}

#[test]
fn regression_losses() {
    check("regression", grad::regression_losses);
}

#[test]
fn hinge_loss_over_weights() {
    check("hinge", grad::hinge);
}

#[test]
fn cross_entropy_over_weights() {
    check("cross_entropy", grad::cross_entropy);
}

#[test]
fn full_mlp_parameters_and_input() {
    check("mlp", grad::mlp);
}

#[test]
fn full_conv_parameters_and_input() {
    check("conv_net", grad::conv_net);
}
