//! Central finite differences against analytic gradients for every layer
//! type and both spatial losses.

mod common;

use common::{check_loss, layer_cases, v2_gradient_config, worst_layer_error, INSTANCES, TOL};
use pofsm::loss::{LossConfig, LossVariant};

fn assert_layer(name: &str) {
    let worst = worst_layer_error(name);
    assert!(worst < TOL, "{name}: relative error {worst:e}");
}

#[test]
fn conv_gradients() {
    assert_layer("conv");
}

#[test]
fn fc_and_softmax_gradients() {
    assert_layer("fc+softmax");
}

#[test]
fn relu_gradients() {
    assert_layer("relu");
}

#[test]
fn lrn_gradients() {
    assert_layer("lrn depth 3");
    assert_layer("lrn depth 4");
}

#[test]
fn max_pool_gradients() {
    assert_layer("max pool");
}

#[test]
fn spatial_softmax_gradients() {
    assert_layer("spatial softmax");
}

#[test]
fn every_layer_case_is_covered() {
    assert_eq!(layer_cases().len(), 7);
}

#[test]
fn v1_loss_gradient() {
    for seed in 0..INSTANCES {
        let e = check_loss(LossVariant::V1, &LossConfig::default(), seed);
        assert!(e < TOL, "seed {seed}: {e:e}");
    }
}

#[test]
fn v2_loss_gradient() {
    for seed in 0..INSTANCES {
        let e = check_loss(LossVariant::V2, &v2_gradient_config(), seed);
        assert!(e < TOL, "seed {seed}: {e:e}");
    }
}
