mod common;

use common::*;

#[test]
fn dense() {
    assert!(dense_grad_error() < GRAD_TOL);
}

#[test]
fn conv1d() {
    assert!(conv_grad_error() < GRAD_TOL);
}

#[test]
fn lstm() {
    assert!(lstm_grad_error() < GRAD_TOL);
}

#[test]
fn relu() {
    assert!(relu_grad_error() < GRAD_TOL);
}

#[test]
fn global_max_pool() {
    assert!(maxpool_grad_error() < GRAD_TOL);
}

#[test]
fn dropout() {
    assert!(dropout_grad_error() < GRAD_TOL);
}

#[test]
fn softmax_cross_entropy() {
    assert!(cross_entropy_grad_error() < GRAD_TOL);
}

#[test]
fn nt_xent_various_sizes() {
    for (m, tau) in [(1, 0.5), (2, 0.1), (4, 1.0), (5, 0.5)] {
        let e = nt_xent_grad_error(m, 6, tau, 20 + m as u64);
        assert!(e < GRAD_TOL, "M={m} tau={tau}: {e}");
    }
}
