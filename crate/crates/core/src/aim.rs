//! The attentive interaction model.
//!
//! For an OH post with sentence states `s^O_1..s^O_M` and a comment with
//! states `s^C_1..s^C_N`:
//!
//! * vulnerability scores `g(s^O_i)` are turned into attention weights `a`
//!   by a softmax (or set uniform when attention is ablated),
//! * every pair gets an interaction embedding `v_ij = h(s^O_i, s^C_j)`,
//! * `u_i = max_j v_ij` per dimension and `u = Σ_i a_i u_i`,
//! * prediction heads consume `u` (and optionally the comment's last state,
//!   TFIDF vector and word-overlap features) and a final sigmoid layer gives
//!   `P(Δ = 1)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::features::SparseVector;
use crate::nn::{
    attention_weights, feedforward, gru_encode, Activation, Binder, FeedForwardParams, GruParams,
};
use crate::rng::substream;
use crate::tensor::{NodeId, ParamStore, Tape, Tensor};

/// Hidden sizes explored for the sentence encoders.
pub const GRID_HIDDEN_DIMS: [usize; 2] = [128, 192];
/// Widths of the first prediction head when the comment's last state is an input.
pub const GRID_HEAD_DIMS: [usize; 2] = [32, 64];
/// Output widths explored for the TFIDF head.
pub const GRID_TFIDF_HEAD_DIMS: [usize; 2] = [1, 3];
pub const FF_INTERACTION_HIDDEN: usize = 60;
pub const FF_INTERACTION_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionKind {
    InnerProduct,
    FeedForward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionInput {
    /// Attention-weighted max-pooled interaction summary.
    Max,
    /// Hidden state of the comment's last sentence.
    Hsent,
    /// TFIDF-weighted n-grams of the comment.
    Tfidf,
    /// Word-overlap features.
    Wdo,
}

impl std::str::FromStr for PredictionInput {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "max" => PredictionInput::Max,
            "hsent" => PredictionInput::Hsent,
            "tfidf" => PredictionInput::Tfidf,
            "wdo" => PredictionInput::Wdo,
            other => bail!(Config, "unknown prediction input {other:?}"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AimConfig {
    /// Dimension of the input sentence embeddings.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub interaction: InteractionKind,
    /// `false` gives the (A)IM ablation with uniform weights.
    pub attention: bool,
    pub inputs: BTreeSet<PredictionInput>,
    /// Output width of the first prediction head.
    pub head_dim: usize,
    /// Length of TFIDF vectors; 0 when TFIDF is not an input.
    pub tfidf_dim: usize,
    pub tfidf_head_dim: usize,
    /// Use one encoder for OH post and comment.
    pub share_encoders: bool,
}

impl AimConfig {
    /// Interaction embedding width.
    pub fn interaction_dim(&self) -> usize {
        match self.interaction {
            InteractionKind::InnerProduct => 1,
            InteractionKind::FeedForward => FF_INTERACTION_DIM,
        }
    }

    pub fn uses(&self, input: PredictionInput) -> bool {
        self.inputs.contains(&input)
    }

    pub fn validate(&self) -> Result<()> {
        use PredictionInput::*;
        if self.input_dim == 0 || self.hidden_dim == 0 {
            bail!(Config, "input and hidden dimensions must be positive");
        }
        if !self.uses(Max) && !self.uses(Hsent) {
            bail!(Config, "the first prediction head needs MAX and/or HSENT");
        }
        if self.uses(Hsent) {
            if !GRID_HEAD_DIMS.contains(&self.head_dim) {
                bail!(
                    Config,
                    "with HSENT the first head has 32 or 64 outputs, got {}",
                    self.head_dim
                );
            }
        } else if self.head_dim != 1 {
            bail!(
                Config,
                "with MAX alone the first head has one output, got {}",
                self.head_dim
            );
        }
        if self.uses(Tfidf) {
            if self.tfidf_dim == 0 {
                bail!(Config, "TFIDF input needs a positive tfidf_dim");
            }
            if !GRID_TFIDF_HEAD_DIMS.contains(&self.tfidf_head_dim) {
                bail!(
                    Config,
                    "TFIDF head has 1 or 3 outputs, got {}",
                    self.tfidf_head_dim
                );
            }
        }
        Ok(())
    }

    /// Checks the sizes against the explored network grid as well.
    pub fn validate_grid(&self) -> Result<()> {
        self.validate()?;
        if !GRID_HIDDEN_DIMS.contains(&self.hidden_dim) {
            bail!(
                Config,
                "hidden size must be 128 or 192, got {}",
                self.hidden_dim
            );
        }
        Ok(())
    }
}

/// Parameter ids of every component.
#[derive(Clone, Debug, PartialEq)]
pub struct AimLayout {
    pub encoder_oh: GruParams,
    pub encoder_comment: GruParams,
    pub vulnerability: FeedForwardParams,
    pub interaction: Option<FeedForwardParams>,
    pub head: FeedForwardParams,
    pub tfidf_head: Option<FeedForwardParams>,
    pub output: FeedForwardParams,
}

/// Trainable parameters plus the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct AimModel {
    pub config: AimConfig,
    pub params: ParamStore,
    pub layout: AimLayout,
}

fn head_activation(config: &AimConfig) -> Activation {
    if config.uses(PredictionInput::Hsent) {
        Activation::Relu
    } else {
        Activation::Identity
    }
}

fn head_input_dim(config: &AimConfig) -> usize {
    let mut d = 0;
    if config.uses(PredictionInput::Max) {
        d += config.interaction_dim();
    }
    if config.uses(PredictionInput::Hsent) {
        d += config.hidden_dim;
    }
    d
}

fn output_input_dim(config: &AimConfig) -> usize {
    let mut d = config.head_dim;
    if config.uses(PredictionInput::Tfidf) {
        d += config.tfidf_head_dim;
    }
    if config.uses(PredictionInput::Wdo) {
        d += 4;
    }
    d
}

impl AimModel {
    /// Fresh parameters drawn uniformly in ±1/√fan-in from the `init` stream of `seed`.
    pub fn init(config: AimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "init");
        let mut params = ParamStore::new();
        let h = config.hidden_dim;
        let encoder_oh = GruParams::init(&mut params, "encoder_oh", config.input_dim, h, &mut rng)?;
        let encoder_comment = if config.share_encoders {
            encoder_oh.clone()
        } else {
            GruParams::init(
                &mut params,
                "encoder_comment",
                config.input_dim,
                h,
                &mut rng,
            )?
        };
        let vulnerability = FeedForwardParams::init(
            &mut params,
            "vulnerability",
            &[h, 1],
            &[Activation::Identity],
            &mut rng,
        )?;
        let interaction = match config.interaction {
            InteractionKind::InnerProduct => None,
            InteractionKind::FeedForward => Some(FeedForwardParams::init(
                &mut params,
                "interaction",
                &[2 * h, FF_INTERACTION_HIDDEN, FF_INTERACTION_DIM],
                &[Activation::Relu, Activation::Identity],
                &mut rng,
            )?),
        };
        let head = FeedForwardParams::init(
            &mut params,
            "head",
            &[head_input_dim(&config), config.head_dim],
            &[head_activation(&config)],
            &mut rng,
        )?;
        let tfidf_head = if config.uses(PredictionInput::Tfidf) {
            Some(FeedForwardParams::init(
                &mut params,
                "tfidf_head",
                &[config.tfidf_dim, config.tfidf_head_dim],
                &[Activation::Relu],
                &mut rng,
            )?)
        } else {
            None
        };
        let output = FeedForwardParams::init(
            &mut params,
            "output",
            &[output_input_dim(&config), 1],
            &[Activation::Sigmoid],
            &mut rng,
        )?;
        let layout = AimLayout {
            encoder_oh,
            encoder_comment,
            vulnerability,
            interaction,
            head,
            tfidf_head,
            output,
        };
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Rebuilds a model around parameters loaded from a checkpoint.
    pub fn from_params(config: AimConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let fresh = Self::init(config.clone(), 0)?;
        if fresh.params.names() != params.names() {
            bail!(
                Config,
                "checkpoint parameters do not match the configuration"
            );
        }
        for (id, name) in fresh.params.names().iter().enumerate() {
            if fresh.params.get(id).shape() != params.get(id).shape() {
                bail!(
                    Shape,
                    "checkpoint parameter {name} has shape {:?}, expected {:?}",
                    params.get(id).shape(),
                    fresh.params.get(id).shape()
                );
            }
        }
        Ok(Self {
            config,
            params,
            layout: fresh.layout,
        })
    }
}

/// One model input: embedded sentences plus optional auxiliary features.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub post_id: String,
    pub comment_id: String,
    pub label: u8,
    /// `M^O × D_in`
    pub oh: Tensor,
    /// `M^C × D_in`
    pub comment: Tensor,
    pub tfidf: Option<SparseVector>,
    pub word_overlap: Option<[f64; 4]>,
}

/// Interaction embeddings `v[i][j][k]`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionTensor {
    pub oh_len: usize,
    pub comment_len: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl InteractionTensor {
    pub fn new(oh_len: usize, comment_len: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if oh_len == 0 || comment_len == 0 || dim == 0 {
            bail!(EmptyInput, "interaction tensor with an empty axis");
        }
        if values.len() != oh_len * comment_len * dim {
            bail!(
                Shape,
                "{} values for a {oh_len}x{comment_len}x{dim} interaction tensor",
                values.len()
            );
        }
        if values.iter().any(|v| !v.is_finite()) {
            bail!(Domain, "non-finite interaction value");
        }
        Ok(Self {
            oh_len,
            comment_len,
            dim,
            values,
        })
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.comment_len + j) * self.dim + k]
    }

    /// For each OH sentence and dimension, the comment sentence attaining the max
    /// (lowest index among ties).
    pub fn argmax_comment(&self) -> Vec<Vec<usize>> {
        (0..self.oh_len)
            .map(|i| {
                (0..self.dim)
                    .map(|k| {
                        let mut best = 0;
                        for j in 1..self.comment_len {
                            if self.get(i, j, k) > self.get(i, best, k) {
                                best = j;
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect()
    }
}

/// Vulnerability scores and attention weights for the OH sentence states.
pub fn vulnerability(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &AimModel,
    oh_states: &[NodeId],
) -> Result<(NodeId, NodeId)> {
    if oh_states.is_empty() {
        bail!(EmptyInput, "OH post has no sentences");
    }
    let scores = oh_states
        .iter()
        .map(|&s| feedforward(tape, binder, &model.layout.vulnerability, s))
        .collect::<Result<Vec<_>>>()?;
    let scores = tape.concat(&scores)?;
    let weights = if model.config.attention {
        attention_weights(tape, scores)?
    } else {
        let m = oh_states.len();
        tape.constant(Tensor::filled(&[m], 1.0 / m as f64))
    };
    Ok((scores, weights))
}

/// Interaction embeddings for every (OH sentence, comment sentence) pair, as `v[i][j]`.
pub fn interact(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &AimModel,
    oh_states: &[NodeId],
    comment_states: &[NodeId],
) -> Result<Vec<Vec<NodeId>>> {
    if oh_states.is_empty() || comment_states.is_empty() {
        bail!(
            EmptyInput,
            "interaction needs at least one sentence on each side"
        );
    }
    let mut rows = Vec::with_capacity(oh_states.len());
    for &so in oh_states {
        let mut row = Vec::with_capacity(comment_states.len());
        for &sc in comment_states {
            let v = match &model.layout.interaction {
                None => tape.dot(so, sc)?,
                Some(net) => {
                    let pair = tape.concat(&[so, sc])?;
                    feedforward(tape, binder, net, pair)?
                }
            };
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// `u = Σ_i a_i · max_j v_ij` on the tape.
pub fn summarize(tape: &mut Tape, interactions: &[Vec<NodeId>], weights: NodeId) -> Result<NodeId> {
    if tape.value(weights).shape() != [interactions.len()] {
        bail!(
            Shape,
            "{} attention weights for {} OH sentences",
            tape.value(weights).len(),
            interactions.len()
        );
    }
    let pooled = interactions
        .iter()
        .map(|row| {
            let stacked = tape.stack(row)?;
            tape.max_axis(stacked, 0)
        })
        .collect::<Result<Vec<_>>>()?;
    let per_sentence = tape.stack(&pooled)?;
    tape.matmul(weights, per_sentence)
}

/// Tape-free version of [`summarize`] over exported values.
pub fn summarize_values(interactions: &InteractionTensor, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != interactions.oh_len {
        bail!(
            Shape,
            "{} attention weights for {} OH sentences",
            weights.len(),
            interactions.oh_len
        );
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        bail!(Domain, "attention weights sum to {total}");
    }
    let mut u = vec![0.0; interactions.dim];
    for (i, &a) in weights.iter().enumerate() {
        for (k, uk) in u.iter_mut().enumerate() {
            let m = (0..interactions.comment_len)
                .map(|j| interactions.get(i, j, k))
                .fold(f64::NEG_INFINITY, f64::max);
            *uk += a * m;
        }
    }
    Ok(u)
}

/// Inputs to the prediction component; each must be present iff configured.
#[derive(Default)]
pub struct PredictionInputs<'a> {
    pub summary: Option<NodeId>,
    pub last_comment_state: Option<NodeId>,
    pub tfidf: Option<&'a SparseVector>,
    pub word_overlap: Option<&'a [f64; 4]>,
}

/// Probability node of shape `[1]`.
pub fn predict(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &AimModel,
    inputs: PredictionInputs,
) -> Result<NodeId> {
    use PredictionInput::*;
    let cfg = &model.config;
    let check = |name: PredictionInput, present: bool| -> Result<()> {
        match (cfg.uses(name), present) {
            (true, false) => bail!(Config, "configured input {name:?} was not provided"),
            (false, true) => bail!(Config, "input {name:?} provided but not configured"),
            _ => Ok(()),
        }
    };
    check(Max, inputs.summary.is_some())?;
    check(Hsent, inputs.last_comment_state.is_some())?;
    check(Tfidf, inputs.tfidf.is_some())?;
    check(Wdo, inputs.word_overlap.is_some())?;

    let head_parts: Vec<NodeId> = [inputs.summary, inputs.last_comment_state]
        .into_iter()
        .flatten()
        .collect();
    let head_in = if head_parts.len() == 1 {
        head_parts[0]
    } else {
        tape.concat(&head_parts)?
    };
    let mut final_parts = vec![feedforward(tape, binder, &model.layout.head, head_in)?];
    if let (Some(tfidf), Some(net)) = (inputs.tfidf, &model.layout.tfidf_head) {
        if tfidf.dim() != cfg.tfidf_dim {
            bail!(
                Shape,
                "TFIDF vector has dimension {}, model expects {}",
                tfidf.dim(),
                cfg.tfidf_dim
            );
        }
        let x = tape.constant(tfidf.to_dense());
        final_parts.push(feedforward(tape, binder, net, x)?);
    }
    if let Some(wdo) = inputs.word_overlap {
        final_parts.push(tape.constant(Tensor::vector(wdo.to_vec())?));
    }
    let final_in = if final_parts.len() == 1 {
        final_parts[0]
    } else {
        tape.concat(&final_parts)?
    };
    feedforward(tape, binder, &model.layout.output, final_in)
}

/// A recorded forward pass; keeps the tape for a later backward.
pub struct ForwardPass<'a> {
    pub tape: Tape,
    pub binder: Binder<'a>,
    pub probability: NodeId,
    pub scores: NodeId,
    pub attention: NodeId,
    pub interactions: Vec<Vec<NodeId>>,
}

impl ForwardPass<'_> {
    pub fn probability(&self) -> f64 {
        self.tape.value(self.probability).data()[0]
    }

    pub fn attention_weights(&self) -> Vec<f64> {
        self.tape.value(self.attention).data().to_vec()
    }

    pub fn interaction_tensor(&self) -> Result<InteractionTensor> {
        let oh_len = self.interactions.len();
        let comment_len = self.interactions[0].len();
        let dim = self.tape.value(self.interactions[0][0]).len();
        let values = self
            .interactions
            .iter()
            .flatten()
            .flat_map(|&v| self.tape.value(v).data().iter().copied())
            .collect();
        InteractionTensor::new(oh_len, comment_len, dim, values)
    }

    /// Parameter gradients of `upstream · P(Δ=1)`, one per parameter id.
    pub fn gradients(&self, upstream: f64) -> Result<Vec<Tensor>> {
        let grads = self
            .tape
            .backward_with_seed(self.probability, Tensor::scalar(upstream)?)?;
        Ok(self.binder.collect(grads))
    }
}

fn sentence_constants(
    tape: &mut Tape,
    matrix: &Tensor,
    expected_dim: usize,
    what: &str,
) -> Result<Vec<NodeId>> {
    if matrix.shape().len() != 2 || matrix.shape()[1] != expected_dim {
        bail!(
            Shape,
            "{what} embeddings have shape {:?}, expected [_, {expected_dim}]",
            matrix.shape()
        );
    }
    (0..matrix.shape()[0])
        .map(|i| Ok(tape.constant(matrix.row(i)?)))
        .collect()
}

/// Full forward pass: encoders, vulnerability, interaction, summary, prediction.
pub fn forward<'a>(model: &'a AimModel, instance: &Instance) -> Result<ForwardPass<'a>> {
    let mut tape = Tape::new();
    let mut binder = Binder::new(&model.params);
    let d_in = model.config.input_dim;
    let oh_inputs = sentence_constants(&mut tape, &instance.oh, d_in, "OH")?;
    let comment_inputs = sentence_constants(&mut tape, &instance.comment, d_in, "comment")?;
    let oh_states = gru_encode(&mut tape, &mut binder, &model.layout.encoder_oh, &oh_inputs)?;
    let comment_states = gru_encode(
        &mut tape,
        &mut binder,
        &model.layout.encoder_comment,
        &comment_inputs,
    )?;
    let (scores, attention) = vulnerability(&mut tape, &mut binder, model, &oh_states)?;
    let interactions = interact(&mut tape, &mut binder, model, &oh_states, &comment_states)?;
    let summary = summarize(&mut tape, &interactions, attention)?;
    let cfg = &model.config;
    let inputs = PredictionInputs {
        summary: cfg.uses(PredictionInput::Max).then_some(summary),
        last_comment_state: cfg
            .uses(PredictionInput::Hsent)
            .then(|| *comment_states.last().expect("non-empty")),
        tfidf: if cfg.uses(PredictionInput::Tfidf) {
            Some(
                instance
                    .tfidf
                    .as_ref()
                    .ok_or_else(|| crate::Error::Config("instance lacks TFIDF features".into()))?,
            )
        } else {
            None
        },
        word_overlap: if cfg.uses(PredictionInput::Wdo) {
            Some(instance.word_overlap.as_ref().ok_or_else(|| {
                crate::Error::Config("instance lacks word-overlap features".into())
            })?)
        } else {
            None
        },
    };
    let probability = predict(&mut tape, &mut binder, model, inputs)?;
    Ok(ForwardPass {
        tape,
        binder,
        probability,
        scores,
        attention,
        interactions,
    })
}

/// Per-pair record of what the model attended to and how sentences interacted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub pair_id: String,
    pub post_id: String,
    pub comment_id: String,
    pub label: u8,
    pub probability: f64,
    /// One weight per OH sentence.
    pub attention: Vec<f64>,
    /// `[i][k]`: comment sentence with the largest `v_ijk`.
    pub argmax_comment_sentence: Vec<Vec<usize>>,
    pub interactions: InteractionTensor,
}

pub fn pair_id(post_id: &str, comment_id: &str) -> String {
    format!("{post_id}/{comment_id}")
}

pub fn diagnostics(model: &AimModel, instance: &Instance) -> Result<DiagnosticsRecord> {
    let pass = forward(model, instance)?;
    let interactions = pass.interaction_tensor()?;
    Ok(DiagnosticsRecord {
        pair_id: pair_id(&instance.post_id, &instance.comment_id),
        post_id: instance.post_id.clone(),
        comment_id: instance.comment_id.clone(),
        label: instance.label,
        probability: pass.probability(),
        attention: pass.attention_weights(),
        argmax_comment_sentence: interactions.argmax_comment(),
        interactions,
    })
}

/// `P(Δ=1)` for every instance, in order.
pub fn predict_all(
    model: &AimModel,
    instances: &[Instance],
    exec: crate::Execution,
) -> Result<Vec<f64>> {
    crate::par::map(exec, instances, |inst| {
        forward(model, inst).map(|p| p.probability())
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config(
        interaction: InteractionKind,
        inputs: &[PredictionInput],
    ) -> AimConfig {
        let inputs: BTreeSet<_> = inputs.iter().copied().collect();
        let head_dim = if inputs.contains(&PredictionInput::Hsent) {
            32
        } else {
            1
        };
        AimConfig {
            input_dim: 3,
            hidden_dim: 4,
            interaction,
            attention: true,
            inputs,
            head_dim,
            tfidf_dim: 5,
            tfidf_head_dim: 3,
            share_encoders: false,
        }
    }

    fn instance(m_o: usize, m_c: usize, d: usize) -> Instance {
        let gen = |n: usize, off: f64| {
            Tensor::matrix(
                n,
                d,
                (0..n * d)
                    .map(|i| ((i as f64 + off) * 0.37).sin())
                    .collect(),
            )
            .unwrap()
        };
        Instance {
            post_id: "p".into(),
            comment_id: "c".into(),
            label: 1,
            oh: gen(m_o, 0.0),
            comment: gen(m_c, 11.0),
            tfidf: Some(SparseVector::new(5, vec![(1, 0.6), (4, 0.8)]).unwrap()),
            word_overlap: Some([2.0, 0.5, 0.25, 0.2]),
        }
    }

    #[test]
    fn config_validation() {
        use PredictionInput::*;
        let mut cfg = small_config(InteractionKind::InnerProduct, &[Max]);
        cfg.validate().unwrap();
        assert_eq!(cfg.interaction_dim(), 1);
        cfg.head_dim = 32;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config(InteractionKind::FeedForward, &[Max, Hsent]);
        assert_eq!(cfg.interaction_dim(), 3);
        cfg.head_dim = 1;
        assert!(cfg.validate().is_err());
        assert!(small_config(InteractionKind::InnerProduct, &[Tfidf])
            .validate()
            .is_err());
        let cfg = small_config(InteractionKind::InnerProduct, &[Max]);
        assert!(cfg.validate_grid().is_err());
    }

    #[test]
    fn single_sentence_post_gets_full_weight() {
        let model = AimModel::init(
            small_config(InteractionKind::InnerProduct, &[PredictionInput::Max]),
            1,
        )
        .unwrap();
        let pass = forward(&model, &instance(1, 1, 3)).unwrap();
        assert_eq!(pass.attention_weights(), vec![1.0]);
        // u^max equals the single inner product
        let v = pass.interaction_tensor().unwrap();
        let u = summarize_values(&v, &[1.0]).unwrap();
        assert_eq!(u, vec![v.values[0]]);
    }

    #[test]
    fn zero_vulnerability_scorer_and_ablation_give_uniform_weights() {
        let mut model = AimModel::init(
            small_config(InteractionKind::InnerProduct, &[PredictionInput::Max]),
            2,
        )
        .unwrap();
        let inst = instance(4, 2, 3);
        let mut ablated = model.clone();
        ablated.config.attention = false;
        let a = forward(&ablated, &inst).unwrap().attention_weights();
        assert!(a.iter().all(|&w| w == 0.25));

        for layer in model.layout.vulnerability.layers.clone() {
            model
                .params
                .values_mut(layer.weight)
                .iter_mut()
                .for_each(|v| *v = 0.0);
            model
                .params
                .values_mut(layer.bias)
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let a = forward(&model, &inst).unwrap().attention_weights();
        assert!(a.iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn inner_product_interaction_examples() {
        let model = AimModel::init(
            small_config(InteractionKind::InnerProduct, &[PredictionInput::Max]),
            3,
        )
        .unwrap();
        let mut tape = Tape::new();
        let mut binder = Binder::new(&model.params);
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::vector(vec![3.0, -1.0]).unwrap());
        let c = tape.constant(Tensor::vector(vec![-2.0, 1.0]).unwrap());
        let v = interact(&mut tape, &mut binder, &model, &[a], &[b, c]).unwrap();
        assert_eq!(tape.value(v[0][0]).data(), &[1.0]);
        assert_eq!(tape.value(v[0][1]).data(), &[0.0]);
    }

    #[test]
    fn feedforward_interaction_with_zero_weights_is_bias() {
        let mut model = AimModel::init(
            small_config(InteractionKind::FeedForward, &[PredictionInput::Max]),
            4,
        )
        .unwrap();
        let net = model.layout.interaction.clone().unwrap();
        for layer in &net.layers {
            model
                .params
                .values_mut(layer.weight)
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let bias = model.params.get(net.layers[1].bias).data().to_vec();
        let pass = forward(&model, &instance(2, 3, 3)).unwrap();
        let v = pass.interaction_tensor().unwrap();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..3 {
                    assert_eq!(v.get(i, j, k), bias[k]);
                }
            }
        }
    }

    #[test]
    fn summarize_examples() {
        let v = InteractionTensor::new(1, 2, 3, vec![1.0, 5.0, 2.0, 3.0, 0.0, 9.0]).unwrap();
        assert_eq!(summarize_values(&v, &[1.0]).unwrap(), vec![3.0, 5.0, 9.0]);
        let v = InteractionTensor::new(2, 1, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(summarize_values(&v, &[0.5, 0.5]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(summarize_values(&v, &[0.0, 1.0]).unwrap(), vec![0.0, 2.0]);
        assert!(matches!(
            summarize_values(&v, &[1.0]),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn zero_output_layer_predicts_half() {
        use PredictionInput::*;
        let mut model = AimModel::init(
            small_config(InteractionKind::FeedForward, &[Max, Hsent, Tfidf, Wdo]),
            5,
        )
        .unwrap();
        let out = model.layout.output.layers[0].clone();
        model
            .params
            .values_mut(out.weight)
            .iter_mut()
            .for_each(|v| *v = 0.0);
        model
            .params
            .values_mut(out.bias)
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let p = forward(&model, &instance(3, 2, 3)).unwrap().probability();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn head_width_follows_inputs() {
        use PredictionInput::*;
        let model = AimModel::init(small_config(InteractionKind::InnerProduct, &[Max]), 6).unwrap();
        assert_eq!(model.layout.head.output_dim(&model.params), 1);
        let model = AimModel::init(
            small_config(InteractionKind::InnerProduct, &[Max, Hsent]),
            6,
        )
        .unwrap();
        assert_eq!(model.layout.head.output_dim(&model.params), 32);
    }

    #[test]
    fn missing_configured_input_is_config_error() {
        let model = AimModel::init(
            small_config(
                InteractionKind::InnerProduct,
                &[PredictionInput::Max, PredictionInput::Tfidf],
            ),
            7,
        )
        .unwrap();
        let mut inst = instance(2, 2, 3);
        inst.tfidf = None;
        assert!(matches!(
            forward(&model, &inst),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn checkpoint_reload_reproduces_predictions() {
        let model = AimModel::init(
            small_config(InteractionKind::FeedForward, &[PredictionInput::Max]),
            8,
        )
        .unwrap();
        let mut buf = Vec::new();
        model.params.write_to(&mut buf).unwrap();
        let params = ParamStore::read_from(buf.as_slice()).unwrap();
        let reloaded = AimModel::from_params(model.config.clone(), params).unwrap();
        let inst = instance(3, 2, 3);
        assert_eq!(
            forward(&model, &inst).unwrap().probability(),
            forward(&reloaded, &inst).unwrap().probability()
        );
    }

    #[test]
    fn shared_encoders_register_one_set() {
        let mut cfg = small_config(InteractionKind::InnerProduct, &[PredictionInput::Max]);
        cfg.share_encoders = true;
        let model = AimModel::init(cfg, 9).unwrap();
        assert!(model
            .params
            .id("encoder_comment.update.weight_input")
            .is_none());
        assert_eq!(model.layout.encoder_oh, model.layout.encoder_comment);
    }
}
