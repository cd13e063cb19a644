mod common;

use common::{fd_augmented_error, fd_model_error, gradient_check_architectures, FD_TOL};
use proptest::prelude::*;

fn check(name: &str, seed: u64) {
    let spec = gradient_check_architectures()
        .into_iter()
        .find(|(n, _)| *n == name)
        .unwrap()
        .1;
    let e = fd_model_error(&spec, seed).expect("seed lands on a kink");
    assert!(e < FD_TOL, "{name}: relative error {e:e}");
}

#[test]
fn dense_gradients() {
    check("dense", 1);
}

#[test]
fn stacked_dense_with_relu_gradients() {
    check("dense+relu", 2);
}

#[test]
fn conv_gradients() {
    check("conv", 3);
}

#[test]
fn strided_padded_conv_gradients() {
    check("strided padded conv", 4);
}

#[test]
fn maxpool_gradients() {
    check("maxpool", 5);
}

#[test]
fn overlapping_maxpool_gradients() {
    check("overlapping maxpool", 6);
}

#[test]
fn small_lenet_like_stack_gradients() {
    check("lenet-like stack", 7);
}

#[test]
fn augmented_gradient_matches_finite_differences() {
    let e = fd_augmented_error(8).expect("seed lands on a kink");
    assert!(e < FD_TOL, "relative error {e:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    // draws near a ReLU hinge or pooling tie are skipped
    #[test]
    fn every_architecture_passes_at_random_seeds(seed in any::<u64>()) {
        for (name, spec) in gradient_check_architectures() {
            if let Some(e) = fd_model_error(&spec, seed) {
                prop_assert!(e < FD_TOL, "{}: relative error {:e}", name, e);
            }
        }
        if let Some(e) = fd_augmented_error(seed) {
            prop_assert!(e < FD_TOL, "augmented: relative error {:e}", e);
        }
    }
}
