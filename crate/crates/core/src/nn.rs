//! GRU sequence encoder, feedforward stacks and attention softmax on top of
//! the differentiation tape.
//!
//! Layers only hold parameter ids into a [`ParamStore`]; a [`Binder`] lazily
//! places the parameters a forward pass touches onto the tape and maps leaf
//! gradients back to parameter ids afterwards.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::{Gradients, NodeId, ParamStore, Tape, Tensor};

/// Per-forward mapping from parameter ids to tape leaves.
pub struct Binder<'a> {
    params: &'a ParamStore,
    nodes: Vec<Option<NodeId>>,
}

impl<'a> Binder<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn bind(&mut self, tape: &mut Tape, id: usize) -> NodeId {
        *self.nodes[id].get_or_insert_with(|| tape.leaf_shared(self.params.get(id).clone()))
    }

    /// One gradient per parameter, zeros for parameters never bound.
    pub fn collect(&self, mut grads: Gradients) -> Vec<Tensor> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(id, node)| match node {
                Some(n) => grads.take(*n),
                None => Tensor::zeros(self.params.get(id).shape()),
            })
            .collect()
    }
}

fn uniform_tensor(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub weight_input: usize,
    pub weight_hidden: usize,
    pub bias: usize,
}

/// Single-layer unidirectional GRU.
///
/// Convention: `z = σ(xWz + hUz + bz)`, `r = σ(xWr + hUr + br)`,
/// `h̃ = tanh(xWh + (r⊙h)Uh + bh)`, `h' = (1−z)⊙h + z⊙h̃`, with `h₀ = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub update: GateParams,
    pub reset: GateParams,
    pub candidate: GateParams,
}

impl GruParams {
    /// Registers `prefix.{update,reset,candidate}.{weight_input,weight_hidden,bias}`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            bail!(Config, "GRU dimensions must be positive");
        }
        let mut gate = |name: &str| -> Result<GateParams> {
            let wi = uniform_tensor(
                rng,
                &[input_dim, hidden_dim],
                1.0 / (input_dim as f64).sqrt(),
            );
            let wh = uniform_tensor(
                rng,
                &[hidden_dim, hidden_dim],
                1.0 / (hidden_dim as f64).sqrt(),
            );
            let b = uniform_tensor(rng, &[hidden_dim], 1.0 / (hidden_dim as f64).sqrt());
            Ok(GateParams {
                weight_input: store.insert(format!("{prefix}.{name}.weight_input"), wi)?,
                weight_hidden: store.insert(format!("{prefix}.{name}.weight_hidden"), wh)?,
                bias: store.insert(format!("{prefix}.{name}.bias"), b)?,
            })
        };
        Ok(Self {
            input_dim,
            hidden_dim,
            update: gate("update")?,
            reset: gate("reset")?,
            candidate: gate("candidate")?,
        })
    }

    /// Looks the parameters up by name in a loaded store.
    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let gate = |name: &str| -> Result<GateParams> {
            Ok(GateParams {
                weight_input: lookup(store, &format!("{prefix}.{name}.weight_input"))?,
                weight_hidden: lookup(store, &format!("{prefix}.{name}.weight_hidden"))?,
                bias: lookup(store, &format!("{prefix}.{name}.bias"))?,
            })
        };
        let update = gate("update")?;
        let shape = store.get(update.weight_input).shape();
        Ok(Self {
            input_dim: shape[0],
            hidden_dim: shape[1],
            update,
            reset: gate("reset")?,
            candidate: gate("candidate")?,
        })
    }
}

pub(crate) fn lookup(store: &ParamStore, name: &str) -> Result<usize> {
    match store.id(name) {
        Some(id) => Ok(id),
        None => bail!(Config, "checkpoint lacks parameter {name}"),
    }
}

fn gate_pre(
    tape: &mut Tape,
    binder: &mut Binder,
    gate: &GateParams,
    x: NodeId,
    h: NodeId,
) -> Result<NodeId> {
    let wi = binder.bind(tape, gate.weight_input);
    let wh = binder.bind(tape, gate.weight_hidden);
    let b = binder.bind(tape, gate.bias);
    let xw = tape.matmul(x, wi)?;
    let hu = tape.matmul(h, wh)?;
    let s = tape.add(xw, hu)?;
    tape.add(s, b)
}

/// Encodes a sequence of input vectors, returning one hidden state per position.
pub fn gru_encode(
    tape: &mut Tape,
    binder: &mut Binder,
    gru: &GruParams,
    inputs: &[NodeId],
) -> Result<Vec<NodeId>> {
    if inputs.is_empty() {
        bail!(EmptyInput, "GRU input sequence is empty");
    }
    for &x in inputs {
        if tape.value(x).shape() != [gru.input_dim] {
            bail!(
                Shape,
                "GRU expects inputs of shape [{}], got {:?}",
                gru.input_dim,
                tape.value(x).shape()
            );
        }
    }
    let mut h = tape.constant(Tensor::zeros(&[gru.hidden_dim]));
    let ones = tape.constant(Tensor::filled(&[gru.hidden_dim], 1.0));
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let z_pre = gate_pre(tape, binder, &gru.update, x, h)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = gate_pre(tape, binder, &gru.reset, x, h)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let c_pre = gate_pre(tape, binder, &gru.candidate, x, rh)?;
        let candidate = tape.tanh(c_pre)?;
        let keep = tape.sub(ones, z)?;
        let kept = tape.mul(keep, h)?;
        let fresh = tape.mul(z, candidate)?;
        h = tape.add(kept, fresh)?;
        states.push(h);
    }
    Ok(states)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: usize,
    pub bias: usize,
    pub activation: Activation,
}

/// Stack of affine layers, each followed by its activation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams {
    pub layers: Vec<LayerParams>,
}

impl FeedForwardParams {
    /// `dims` lists layer widths including the input, e.g. `[256, 60, 3]`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        activations: &[Activation],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            bail!(
                Config,
                "feedforward {prefix}: {} dims for {} activations",
                dims.len(),
                activations.len()
            );
        }
        if dims.contains(&0) {
            bail!(Config, "feedforward {prefix}: zero-width layer in {dims:?}");
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (l, (pair, &activation)) in dims.windows(2).zip(activations).enumerate() {
            let bound = 1.0 / (pair[0] as f64).sqrt();
            let weight = store.insert(
                format!("{prefix}.layer{l}.weight"),
                uniform_tensor(rng, &[pair[0], pair[1]], bound),
            )?;
            let bias = store.insert(
                format!("{prefix}.layer{l}.bias"),
                uniform_tensor(rng, &[pair[1]], bound),
            )?;
            layers.push(LayerParams {
                weight,
                bias,
                activation,
            });
        }
        Ok(Self { layers })
    }

    pub fn from_store(
        store: &ParamStore,
        prefix: &str,
        activations: &[Activation],
    ) -> Result<Self> {
        let layers = activations
            .iter()
            .enumerate()
            .map(|(l, &activation)| {
                Ok(LayerParams {
                    weight: lookup(store, &format!("{prefix}.layer{l}.weight"))?,
                    bias: lookup(store, &format!("{prefix}.layer{l}.bias"))?,
                    activation,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.get(self.layers[0].weight).shape()[0]
    }

    pub fn output_dim(&self, store: &ParamStore) -> usize {
        store.get(self.layers[self.layers.len() - 1].weight).shape()[1]
    }
}

pub fn feedforward(
    tape: &mut Tape,
    binder: &mut Binder,
    ff: &FeedForwardParams,
    input: NodeId,
) -> Result<NodeId> {
    let expected = ff.input_dim(binder.params());
    if tape.value(input).shape() != [expected] {
        bail!(
            Shape,
            "feedforward expects input [{expected}], got {:?}",
            tape.value(input).shape()
        );
    }
    let mut x = input;
    for layer in &ff.layers {
        let w = binder.bind(tape, layer.weight);
        let b = binder.bind(tape, layer.bias);
        let xw = tape.matmul(x, w)?;
        let pre = tape.add(xw, b)?;
        x = layer.activation.apply(tape, pre)?;
    }
    Ok(x)
}

/// Softmax attention over a score vector recorded on the tape.
pub fn attention_weights(tape: &mut Tape, scores: NodeId) -> Result<NodeId> {
    let shape = tape.value(scores).shape();
    if shape.len() != 1 {
        bail!(Shape, "attention scores must be a vector, got {shape:?}");
    }
    tape.softmax(scores, 0)
}

/// Tape-free softmax attention.
pub fn softmax_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        bail!(EmptyInput, "no attention scores");
    }
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::vector(scores.to_vec())?);
    let a = attention_weights(&mut tape, s)?;
    Ok(tape.value(a).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_all(store: &mut ParamStore) {
        for id in 0..store.len() {
            store.values_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_gru_gives_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let gru = GruParams::init(&mut store, "enc", 3, 4, &mut rng).unwrap();
        zero_all(&mut store);
        let mut tape = Tape::new();
        let mut binder = Binder::new(&store);
        let xs: Vec<_> = (0..3)
            .map(|i| tape.constant(Tensor::vector(vec![i as f64, -2.0, 5.0]).unwrap()))
            .collect();
        let hs = gru_encode(&mut tape, &mut binder, &gru, &xs).unwrap();
        assert_eq!(hs.len(), 3);
        for h in hs {
            assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gru_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let gru = GruParams::init(&mut store, "enc", 2, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut binder = Binder::new(&store);
        assert!(matches!(
            gru_encode(&mut tape, &mut binder, &gru, &[]),
            Err(crate::Error::EmptyInput(_))
        ));
        let bad = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(
            gru_encode(&mut tape, &mut binder, &gru, &[bad]),
            Err(crate::Error::Shape(_))
        ));
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let hs = gru_encode(&mut tape, &mut binder, &gru, &[x]).unwrap();
        assert_eq!(hs.len(), 1);
        assert_eq!(tape.value(hs[0]).shape(), &[3]);
    }

    #[test]
    fn feedforward_bias_only_and_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let ff =
            FeedForwardParams::init(&mut store, "ff", &[3, 2], &[Activation::Identity], &mut rng)
                .unwrap();
        store
            .set(ff.layers[0].weight, Tensor::zeros(&[3, 2]))
            .unwrap();
        store
            .set(ff.layers[0].bias, Tensor::vector(vec![0.25, -4.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let mut binder = Binder::new(&store);
        let x = tape.constant(Tensor::vector(vec![9.0, 8.0, 7.0]).unwrap());
        let y = feedforward(&mut tape, &mut binder, &ff, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, -4.0]);

        let mut store = ParamStore::new();
        let ff = FeedForwardParams::init(&mut store, "ff", &[2, 2], &[Activation::Relu], &mut rng)
            .unwrap();
        store
            .set(
                ff.layers[0].weight,
                Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            )
            .unwrap();
        store.set(ff.layers[0].bias, Tensor::zeros(&[2])).unwrap();
        let mut tape = Tape::new();
        let mut binder = Binder::new(&store);
        let x = tape.constant(Tensor::vector(vec![-1.0, 2.0]).unwrap());
        let y = feedforward(&mut tape, &mut binder, &ff, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
        let wrong = tape.constant(Tensor::vector(vec![1.0]).unwrap());
        assert!(matches!(
            feedforward(&mut tape, &mut binder, &ff, wrong),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn attention_examples() {
        let a = softmax_weights(&[0.0, 0.0, 0.0]).unwrap();
        assert!(a.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let a = softmax_weights(&[2f64.ln(), 0.0]).unwrap();
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-15 && (a[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            softmax_weights(&[]),
            Err(crate::Error::EmptyInput(_))
        ));
        assert_eq!(softmax_weights(&[42.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn checkpoint_names_are_hierarchical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let gru = GruParams::init(&mut store, "encoder_oh", 2, 3, &mut rng).unwrap();
        assert!(store.id("encoder_oh.update.weight_input").is_some());
        assert_eq!(GruParams::from_store(&store, "encoder_oh").unwrap(), gru);
    }
}
