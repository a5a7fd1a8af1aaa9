mod common;

use aim_core::aim::{
    forward, AimModel, InteractionKind, PredictionInput, FF_INTERACTION_DIM, FF_INTERACTION_HIDDEN,
};
use aim_core::nn::{feedforward, gru_encode, Activation, Binder, FeedForwardParams, GruParams};
use aim_core::tensor::NodeId;
use aim_core::{ParamStore, Tape, Tensor};
use rand::Rng;

use common::*;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Analytic gradients of a scalar graph over `store`, checked against central differences.
fn check(store: &ParamStore, build: impl Fn(&mut Tape, &mut Binder) -> NodeId) {
    let mut tape = Tape::new();
    let mut binder = Binder::new(store);
    let out = build(&mut tape, &mut binder);
    let analytic = binder.collect(tape.backward(out).unwrap());
    assert_eq!(analytic.len(), store.len());
    let errors = gradient_errors(store, &analytic, STEP, |s| {
        let mut tape = Tape::new();
        let mut binder = Binder::new(s);
        let out = build(&mut tape, &mut binder);
        tape.value(out).item().unwrap()
    });
    assert_small(&errors);
}

fn assert_small(errors: &[(String, f64)]) {
    for (name, err) in errors {
        assert!(*err < TOL, "{name}: relative error {err:e}");
    }
}

/// tanh(x·W + b) ⊙ σ(x·W) summed, then logged after exp: five distinct ops feeding one scalar.
fn composite(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let xw = tape.matmul(x, w).unwrap();
    let pre = tape.add(xw, b).unwrap();
    let t = tape.tanh(pre).unwrap();
    let s = tape.sigmoid(xw).unwrap();
    let prod = tape.mul(t, s).unwrap();
    let rows = tape.sum_axis(prod, 1).unwrap();
    let e = tape.exp(rows).unwrap();
    let total = tape.sum_axis(e, 0).unwrap();
    tape.log(total).unwrap()
}

#[test]
fn random_composite_matches_finite_differences() {
    let mut r = rng(1);
    for _ in 0..5 {
        let mut store = ParamStore::new();
        store
            .insert("x", uniform_matrix(&mut r, 3, 4, 1.0))
            .unwrap();
        store
            .insert("w", uniform_matrix(&mut r, 4, 2, 1.0))
            .unwrap();
        store
            .insert(
                "b",
                Tensor::vector(vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).unwrap(),
            )
            .unwrap();
        check(&store, |tape, binder| {
            let ids: Vec<NodeId> = (0..3).map(|i| binder.bind(tape, i)).collect();
            composite(tape, ids[0], ids[1], ids[2])
        });
    }
}

#[test]
fn gru_gradients_for_every_parameter() {
    let mut r = rng(2);
    let mut store = ParamStore::new();
    let gru = GruParams::init(&mut store, "enc", 5, 3, &mut r).unwrap();
    let xs: Vec<Tensor> = (0..4)
        .map(|_| Tensor::vector((0..5).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let weights: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
    check(&store, |tape, binder| {
        let inputs: Vec<NodeId> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let states = gru_encode(tape, binder, &gru, &inputs).unwrap();
        let all = tape.concat(&states).unwrap();
        let w = tape.constant(Tensor::vector(weights.clone()).unwrap());
        tape.dot(all, w).unwrap()
    });
}

#[test]
fn interaction_sized_feedforward_is_differentiable() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let ff = FeedForwardParams::init(
        &mut store,
        "phi",
        &[8, FF_INTERACTION_HIDDEN, FF_INTERACTION_DIM],
        &[Activation::Relu, Activation::Identity],
        &mut r,
    )
    .unwrap();
    let x = Tensor::vector((0..8).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    check(&store, |tape, binder| {
        let x = tape.constant(x.clone());
        let y = feedforward(tape, binder, &ff, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[FF_INTERACTION_DIM]);
        tape.sum_axis(y, 0).unwrap()
    });
}

#[test]
fn model_output_gradient_for_every_configuration() {
    use InteractionKind::*;
    use PredictionInput::*;
    let mut r = rng(4);
    let cases: Vec<(InteractionKind, Vec<PredictionInput>, bool)> = vec![
        (InnerProduct, vec![Max], true),
        (InnerProduct, vec![Max, Hsent], true),
        (FeedForward, vec![Max, Wdo], true),
        (FeedForward, vec![Hsent, Tfidf], false),
        (InnerProduct, vec![Max, Hsent, Tfidf, Wdo], false),
    ];
    for (kind, inputs, attention) in cases {
        let mut cfg = config(kind, &inputs, 4, 3);
        cfg.attention = attention;
        let model = AimModel::init(cfg.clone(), 5).unwrap();
        let inst = random_instance(&mut r, "p", "c", 1, 3, 2, 4);
        let analytic = forward(&model, &inst).unwrap().gradients(1.0).unwrap();
        let errors = gradient_errors(&model.params, &analytic, STEP, |s| {
            let m = AimModel::from_params(cfg.clone(), s.clone()).unwrap();
            forward(&m, &inst).unwrap().probability()
        });
        for (name, err) in errors {
            assert!(
                err < TOL,
                "{kind:?}/{inputs:?}/attention={attention} {name}: {err:e}"
            );
        }
    }
}
