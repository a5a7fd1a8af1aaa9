mod common;

use aim_core::aim::{
    diagnostics, forward, interact, predict, predict_all, summarize, vulnerability, AimModel,
    Instance, InteractionKind, PredictionInput, PredictionInputs,
};
use aim_core::nn::Binder;
use aim_core::tensor::NodeId;
use aim_core::training::{train, TrainConfig};
use aim_core::{Execution, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;

fn permute_rows(t: &Tensor, order: &[usize]) -> Tensor {
    let cols = t.shape()[1];
    let data = order
        .iter()
        .flat_map(|&i| t.data()[i * cols..(i + 1) * cols].to_vec())
        .collect();
    Tensor::matrix(order.len(), cols, data).unwrap()
}

#[test]
fn probability_stays_in_open_unit_interval() {
    let mut r = rng(10);
    for kind in [InteractionKind::InnerProduct, InteractionKind::FeedForward] {
        let cfg = config(
            kind,
            &[
                PredictionInput::Max,
                PredictionInput::Hsent,
                PredictionInput::Tfidf,
                PredictionInput::Wdo,
            ],
            5,
            6,
        );
        for seed in 0..10 {
            let model = AimModel::init(cfg.clone(), seed).unwrap();
            let m_oh = r.random_range(1..6);
            let m_c = r.random_range(1..6);
            let p = forward(&model, &random_instance(&mut r, "p", "c", 0, m_oh, m_c, 5))
                .unwrap()
                .probability();
            assert!(p > 0.0 && p < 1.0, "{p}");
        }
    }
}

/// MAX-only output computed from given encoder states, skipping the GRUs.
fn output_from_states(model: &AimModel, oh: &[Tensor], comment: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let mut binder = Binder::new(&model.params);
    let oh: Vec<NodeId> = oh.iter().map(|s| tape.constant(s.clone())).collect();
    let comment: Vec<NodeId> = comment.iter().map(|s| tape.constant(s.clone())).collect();
    let (_, weights) = vulnerability(&mut tape, &mut binder, model, &oh).unwrap();
    let v = interact(&mut tape, &mut binder, model, &oh, &comment).unwrap();
    let u = summarize(&mut tape, &v, weights).unwrap();
    let p = predict(
        &mut tape,
        &mut binder,
        model,
        PredictionInputs {
            summary: Some(u),
            ..Default::default()
        },
    )
    .unwrap();
    tape.value(p).data()[0]
}

fn random_states(r: &mut impl Rng, n: usize, h: usize) -> Vec<Tensor> {
    (0..n)
        .map(|_| Tensor::vector((0..h).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap())
        .collect()
}

#[test]
fn max_only_output_ignores_comment_sentence_order() {
    let mut r = rng(11);
    for kind in [InteractionKind::InnerProduct, InteractionKind::FeedForward] {
        let model = AimModel::init(config(kind, &[PredictionInput::Max], 4, 5), 1).unwrap();
        for _ in 0..10 {
            let oh = random_states(&mut r, 3, 5);
            let mut comment = random_states(&mut r, 4, 5);
            let a = output_from_states(&model, &oh, &comment);
            comment.shuffle(&mut r);
            let b = output_from_states(&model, &oh, &comment);
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn encoded_comment_order_still_matters_through_the_recurrence() {
    // Reordering raw sentences changes the GRU states, so the output moves.
    let mut r = rng(17);
    let model = AimModel::init(
        config(InteractionKind::InnerProduct, &[PredictionInput::Max], 4, 5),
        1,
    )
    .unwrap();
    let inst = random_instance(&mut r, "p", "c", 1, 3, 4, 4);
    let reversed = Instance {
        comment: permute_rows(&inst.comment, &[3, 2, 1, 0]),
        ..inst.clone()
    };
    let a = forward(&model, &inst).unwrap().probability();
    let b = forward(&model, &reversed).unwrap().probability();
    assert_ne!(a, b);
}

#[test]
fn single_sentence_post_summary_ignores_comment_order() {
    let mut r = rng(12);
    let model = AimModel::init(
        config(InteractionKind::InnerProduct, &[PredictionInput::Max], 4, 5),
        2,
    )
    .unwrap();
    let oh = random_states(&mut r, 1, 5);
    let mut comment = random_states(&mut r, 5, 5);
    let summary = |comment: &[Tensor]| {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&model.params);
        let oh: Vec<NodeId> = oh.iter().map(|s| tape.constant(s.clone())).collect();
        let comment: Vec<NodeId> = comment.iter().map(|s| tape.constant(s.clone())).collect();
        let (_, w) = vulnerability(&mut tape, &mut binder, &model, &oh).unwrap();
        assert_eq!(tape.value(w).data(), &[1.0]);
        let v = interact(&mut tape, &mut binder, &model, &oh, &comment).unwrap();
        let u = summarize(&mut tape, &v, w).unwrap();
        tape.value(u).data().to_vec()
    };
    let a = summary(&comment);
    comment.reverse();
    let b = summary(&comment);
    assert!((a[0] - b[0]).abs() <= 1e-12);
}

#[test]
fn ablated_max_only_output_ignores_post_sentence_order() {
    let mut r = rng(13);
    let mut cfg = config(InteractionKind::InnerProduct, &[PredictionInput::Max], 4, 5);
    cfg.attention = false;
    let model = AimModel::init(cfg, 3).unwrap();
    for _ in 0..10 {
        let mut oh = random_states(&mut r, 4, 5);
        let comment = random_states(&mut r, 3, 5);
        let a = output_from_states(&model, &oh, &comment);
        oh.shuffle(&mut r);
        let b = output_from_states(&model, &oh, &comment);
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn diagnostics_shapes_and_attention_mass() {
    let mut r = rng(14);
    let model = AimModel::init(
        config(
            InteractionKind::FeedForward,
            &[PredictionInput::Max, PredictionInput::Hsent],
            4,
            5,
        ),
        4,
    )
    .unwrap();
    let inst = random_instance(&mut r, "post", "cm", 0, 3, 2, 4);
    let d = diagnostics(&model, &inst).unwrap();
    assert_eq!(d.pair_id, "post/cm");
    assert_eq!(d.attention.len(), 3);
    assert!((d.attention.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    assert_eq!(
        (
            d.interactions.oh_len,
            d.interactions.comment_len,
            d.interactions.dim
        ),
        (3, 2, 3)
    );
    assert_eq!(d.argmax_comment_sentence.len(), 3);
    assert_eq!(d.probability, forward(&model, &inst).unwrap().probability());
}

#[test]
fn parallel_and_sequential_predictions_are_identical() {
    let mut r = rng(15);
    let model = AimModel::init(
        config(
            InteractionKind::InnerProduct,
            &[PredictionInput::Max, PredictionInput::Wdo],
            4,
            5,
        ),
        5,
    )
    .unwrap();
    let insts: Vec<Instance> = (0..40)
        .map(|i| random_instance(&mut r, "p", &format!("c{i}"), (i % 2) as u8, 3, 2, 4))
        .collect();
    let a = predict_all(&model, &insts, Execution::Sequential).unwrap();
    let b = predict_all(&model, &insts, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn training_is_deterministic_across_execution_modes() {
    let data = planted_dataset(16, 30, 4);
    let cfg = config(InteractionKind::InnerProduct, &[PredictionInput::Max], 4, 5);
    let run = |exec: Execution| {
        let mut model = AimModel::init(cfg.clone(), 9).unwrap();
        let tc = TrainConfig {
            seed: 3,
            base_epochs: 4,
            extra_epochs: 2,
            execution: exec,
            ..TrainConfig::default()
        };
        let outcome = train(&mut model, &data, &data, &tc, |_| {}).unwrap();
        (outcome.log.last().unwrap().train_loss, model.params.clone())
    };
    let (loss_a, params_a) = run(Execution::Sequential);
    let (loss_b, params_b) = run(Execution::Sequential);
    let (loss_c, params_c) = run(Execution::Parallel);
    assert_eq!(loss_a, loss_b);
    assert_eq!(loss_a, loss_c);
    for id in 0..params_a.len() {
        assert_eq!(params_a.get(id).data(), params_b.get(id).data());
        assert_eq!(params_a.get(id).data(), params_c.get(id).data());
    }
}
