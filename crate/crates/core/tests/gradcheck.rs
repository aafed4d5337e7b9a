//! Analytic gradients of every layer and loss against central finite differences.

mod common;

use common::{GRAD_TOL, LAYER_CHECKS};
use vocalmotion::numerics::{Graph, ParamStore, Tensor};

fn check(name: &str) {
    let (_, f) = LAYER_CHECKS.iter().find(|(n, _)| *n == name).unwrap();
    let err = f();
    assert!(err < GRAD_TOL, "{name}: max relative error {err:e}");
}

#[test]
fn dense() {
    check("dense");
}

#[test]
fn conv1d() {
    check("conv1d");
}

#[test]
fn conv_transpose1d() {
    check("conv_transpose1d");
}

#[test]
fn layer_norm() {
    check("layer_norm");
}

#[test]
fn causal_attention() {
    check("causal_attention");
}

#[test]
fn bidirectional_attention() {
    check("bidirectional_attention");
}

#[test]
fn transformer_block() {
    check("transformer_block");
}

#[test]
fn relu_gelu_softmax() {
    check("elementwise");
}

#[test]
fn embedding_lookup() {
    check("embedding");
}

#[test]
fn losses() {
    check("losses");
}

#[test]
fn straight_through_passes_gradient() {
    let mut store = ParamStore::new();
    let z = store.add("z", Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap());
    let mut g = Graph::new();
    let zv = g.param(&store, z);
    let q = g
        .straight_through(zv, Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap())
        .unwrap();
    assert_eq!(g.value(q).data(), &[1.0, 1.0]);
    let l = g.sum(q);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(z).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn hand_differentiated_sum_of_product() {
    // loss = sum(W x) with x = [1, 2] gives dW = [[1, 2], [1, 2]] for W: 2x2.
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap());
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let x = g.constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
    let y = g.matmul(wv, x).unwrap();
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &[1.0, 2.0, 1.0, 2.0]);
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::scalar(3.0));
    let unused = store.add("u", Tensor::scalar(1.0));
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let zero = g.scale(wv, 0.0);
    let c = g.constant(Tensor::scalar(5.0));
    let l = g.add(zero, c).unwrap();
    let grads = g.backward(l).unwrap();
    store.accumulate(&grads, 1.0);
    assert_eq!(store.grad(w).data(), &[0.0]);
    assert_eq!(store.grad(unused).data(), &[0.0]);
}
