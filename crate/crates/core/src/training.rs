//! Loss, AdaMax and the training loop.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::aim::{forward, predict_all, AimModel, Instance};
use crate::error::{bail, Result};
use crate::metrics::auc;
use crate::par::{self, Execution};
use crate::rng::substream;
use crate::tensor::{ParamStore, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub decay: f64,
    pub batch_size: usize,
    /// Epochs always run.
    pub base_epochs: usize,
    /// Epochs added when the second half of the base run did not lose validation AUC.
    pub extra_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            learning_rate: 0.002,
            decay: 0.95,
            batch_size: 10,
            base_epochs: 10,
            extra_epochs: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            bail!(Config, "margin must be >= 0, got {}", self.margin);
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            bail!(Config, "decay must be in (0, 1], got {}", self.decay);
        }
        if self.batch_size < 2 {
            bail!(Config, "batch size must be >= 2, got {}", self.batch_size);
        }
        if !(self.learning_rate > 0.0) {
            bail!(
                Config,
                "learning rate must be positive, got {}",
                self.learning_rate
            );
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail!(
                Config,
                "AdaMax betas must be in [0, 1), got {} and {}",
                self.beta1,
                self.beta2
            );
        }
        if self.base_epochs < 2 {
            bail!(
                Config,
                "base epoch count must be >= 2, got {}",
                self.base_epochs
            );
        }
        Ok(())
    }

    /// Learning rate for 1-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay.powi(epoch.saturating_sub(1) as i32)
    }

    /// Whether to run the extra epochs given the validation AUCs of the base run:
    /// yes unless the second half averages below the first.
    pub fn extend(&self, base_aucs: &[f64]) -> bool {
        let half = base_aucs.len() / 2;
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        mean(&base_aucs[base_aucs.len() - half..]) >= mean(&base_aucs[..half])
    }
}

fn check_probability(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        bail!(Domain, "probability {p} is outside [0, 1]");
    }
    Ok(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
}

fn check_label(label: u8) -> Result<f64> {
    match label {
        0 | 1 => Ok(f64::from(label)),
        _ => bail!(Domain, "label {label} is not 0 or 1"),
    }
}

/// Binary cross-entropy of one prediction.
pub fn bce(p: f64, label: u8) -> Result<f64> {
    let p = check_probability(p)?;
    let y = check_label(label)?;
    Ok(-y * p.ln() - (1.0 - y) * (1.0 - p).ln())
}

/// Margin ranking loss for a (positive, negative) pair.
pub fn mrl(p_pos: f64, p_neg: f64, margin: f64) -> Result<f64> {
    check_probability(p_pos)?;
    check_probability(p_neg)?;
    Ok((p_neg - p_pos + margin).max(0.0))
}

/// One scored pair inside a minibatch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored<'a> {
    pub post_id: &'a str,
    pub label: u8,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub bce_term: f64,
    pub mrl_term: f64,
    /// `dloss / dp_t` for every pair.
    pub grad: Vec<f64>,
}

/// Number of training pairs per post.
pub fn post_counts(instances: &[Instance]) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for inst in instances {
        *counts.entry(inst.post_id.clone()).or_default() += 1;
    }
    counts
}

/// Per-post normalized BCE plus the mean in-batch margin ranking loss, with
/// the gradient with respect to each probability.
pub fn batch_loss(
    batch: &[Scored],
    post_counts: &HashMap<String, usize>,
    margin: f64,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        bail!(EmptyInput, "empty minibatch");
    }
    let mut posts: Vec<&str> = batch.iter().map(|s| s.post_id).collect();
    posts.sort_unstable();
    posts.dedup();
    let n_posts = posts.len() as f64;
    let mut grad = vec![0.0; batch.len()];
    let mut bce_sum = 0.0;
    let mut probs = Vec::with_capacity(batch.len());
    for (t, s) in batch.iter().enumerate() {
        let Some(&n_l) = post_counts.get(s.post_id) else {
            bail!(Data, "post {} is not in the training set", s.post_id);
        };
        let n_l = n_l as f64;
        let y = check_label(s.label)?;
        let p = check_probability(s.probability)?;
        bce_sum += bce(p, s.label)? / n_l;
        grad[t] = (-y / p + (1.0 - y) / (1.0 - p)) / (n_l * n_posts);
        probs.push(p);
    }
    let bce_term = bce_sum / n_posts;

    let positives: Vec<usize> = (0..batch.len()).filter(|&t| batch[t].label == 1).collect();
    let negatives: Vec<usize> = (0..batch.len()).filter(|&t| batch[t].label == 0).collect();
    let n_pairs = positives.len() * negatives.len();
    let mut mrl_sum = 0.0;
    for &i in &positives {
        for &j in &negatives {
            let slack = probs[j] - probs[i] + margin;
            if slack > 0.0 {
                mrl_sum += slack;
                grad[j] += 1.0 / n_pairs as f64;
                grad[i] -= 1.0 / n_pairs as f64;
            }
        }
    }
    let mrl_term = if n_pairs == 0 {
        0.0
    } else {
        mrl_sum / n_pairs as f64
    };
    Ok(BatchLoss {
        loss: bce_term + mrl_term,
        bce_term,
        mrl_term,
        grad,
    })
}

/// Loss and parameter gradients for one minibatch. Pairs are forwarded and
/// back-propagated independently; gradients are summed in pair order.
pub fn batch_gradients(
    model: &AimModel,
    batch: &[&Instance],
    post_counts: &HashMap<String, usize>,
    margin: f64,
    exec: Execution,
) -> Result<(BatchLoss, Vec<Tensor>)> {
    let passes = par::map(exec, batch, |inst| forward(model, inst))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let scored: Vec<Scored> = batch
        .iter()
        .zip(&passes)
        .map(|(inst, pass)| Scored {
            post_id: &inst.post_id,
            label: inst.label,
            probability: pass.probability(),
        })
        .collect();
    let loss = batch_loss(&scored, post_counts, margin)?;
    let per_pair = par::map_range(exec, passes.len(), |t| passes[t].gradients(loss.grad[t]));
    let mut total: Option<Vec<Tensor>> = None;
    for grads in per_pair {
        let grads = grads?;
        match &mut total {
            None => total = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok((loss, total.expect("non-empty batch")))
}

/// Loss of the model on a batch (no gradients).
pub fn batch_objective(
    model: &AimModel,
    batch: &[&Instance],
    post_counts: &HashMap<String, usize>,
    margin: f64,
) -> Result<f64> {
    let mut scored = Vec::with_capacity(batch.len());
    for inst in batch {
        let p = forward(model, inst)?.probability();
        scored.push(Scored {
            post_id: &inst.post_id,
            label: inst.label,
            probability: p,
        });
    }
    Ok(batch_loss(&scored, post_counts, margin)?.loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaMaxState {
    pub first_moment: Vec<Vec<f64>>,
    pub inf_norm: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdaMaxState {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = (0..params.len())
            .map(|i| vec![0.0; params.get(i).len()])
            .collect();
        Self {
            first_moment: zeros.clone(),
            inf_norm: zeros,
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One bias-corrected AdaMax update of every parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            bail!(
                Shape,
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            );
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.get(i).shape() {
                bail!(
                    Shape,
                    "gradient of {} has shape {:?}, parameter has {:?}",
                    params.name(i),
                    g.shape(),
                    params.get(i).shape()
                );
            }
        }
        self.step += 1;
        let step_size = lr / (1.0 - self.beta1.powi(self.step as i32));
        for (i, g) in grads.iter().enumerate() {
            let values = params.values_mut(i);
            let m = &mut self.first_moment[i];
            let u = &mut self.inf_norm[i];
            for k in 0..values.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g.data()[k];
                u[k] = (self.beta2 * u[k]).max(g.data()[k].abs());
                values[k] -= step_size * m[k] / (u[k] + self.epsilon);
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} lr={:.6e} train_loss={:.6}",
            self.epoch, self.lr, self.train_loss
        )?;
        match self.val_auc {
            Some(a) => write!(f, " val_auc={a:.6}"),
            None => write!(f, " val_auc=NA"),
        }
    }
}

/// Optimizer state plus the bookkeeping shared across epochs.
pub struct Trainer {
    pub config: TrainConfig,
    pub state: AdaMaxState,
    post_counts: HashMap<String, usize>,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: &AimModel, train: &[Instance], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            bail!(EmptyInput, "no training pairs");
        }
        let state = AdaMaxState::new(&model.params, config.beta1, config.beta2, config.epsilon);
        Ok(Self {
            state,
            post_counts: post_counts(train),
            config,
            epoch: 0,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// Shuffles, runs every minibatch once and returns the mean batch loss.
    pub fn run_epoch(&mut self, model: &mut AimModel, train: &[Instance]) -> Result<(f64, f64)> {
        self.epoch += 1;
        let lr = self.config.learning_rate_at(self.epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut substream(
            self.config.seed,
            &format!("epoch-{}", self.epoch),
        ));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradients(
                model,
                &batch,
                &self.post_counts,
                self.config.margin,
                self.config.execution,
            )?;
            self.state.step(&mut model.params, &grads, lr)?;
            total += loss.loss;
            batches += 1;
        }
        Ok((lr, total / batches as f64))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub extended: bool,
}

/// AUC of the model on labeled instances.
pub fn evaluate_auc(model: &AimModel, instances: &[Instance], exec: Execution) -> Result<f64> {
    let scores = predict_all(model, instances, exec)?;
    let labels: Vec<u8> = instances.iter().map(|i| i.label).collect();
    Ok(auc(&scores, &labels)?.auc)
}

/// Trains for the base epochs, then for the extra epochs unless validation
/// AUC dropped on average over the second half. Parameters from the last
/// epoch are kept.
pub fn train(
    model: &mut AimModel,
    train: &[Instance],
    validation: &[Instance],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if validation.is_empty() {
        bail!(EmptyInput, "no validation pairs");
    }
    let positives = validation.iter().filter(|i| i.label == 1).count();
    if positives == 0 || positives == validation.len() {
        bail!(
            Eval,
            "validation split must contain both classes ({positives} positives of {})",
            validation.len()
        );
    }
    let mut trainer = Trainer::new(model, train, config.clone())?;
    let mut log = Vec::new();
    let mut run = |model: &mut AimModel, log: &mut Vec<EpochLog>| -> Result<()> {
        let (lr, train_loss) = trainer.run_epoch(model, train)?;
        let val_auc = evaluate_auc(model, validation, config.execution)?;
        let entry = EpochLog {
            epoch: trainer.epochs_run(),
            lr,
            train_loss,
            val_auc: Some(val_auc),
        };
        on_epoch(&entry);
        log.push(entry);
        Ok(())
    };
    for _ in 0..config.base_epochs {
        run(model, &mut log)?;
    }
    let aucs: Vec<f64> = log.iter().filter_map(|e| e.val_auc).collect();
    let extended = config.extend(&aucs);
    if extended {
        for _ in 0..config.extra_epochs {
            run(model, &mut log)?;
        }
    }
    Ok(TrainOutcome { log, extended })
}
