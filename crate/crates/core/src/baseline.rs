//! Class-weighted, regularized logistic regression over sparse features.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddedPair, Vocabulary};
use crate::error::{bail, Error, Result};
use crate::features::{word_overlap, SparseVector, TfidfModel};
use crate::metrics::auc;
use crate::par::{self, Execution};

pub const GRID_STRENGTHS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const GRID_POSITIVE_WEIGHTS: [f64; 3] = [1.0, 2.0, 5.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

/// Feature blocks, concatenated in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrInput {
    /// Comment TFIDF.
    Tfidf,
    /// OH post TFIDF (only alongside `Tfidf`).
    Oh,
    /// The four word-overlap values.
    Wdo,
    /// Sum of the comment's sentence embeddings.
    Sent,
}

impl FromStr for LrInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tfidf" => Ok(Self::Tfidf),
            "oh" => Ok(Self::Oh),
            "wdo" => Ok(Self::Wdo),
            "sent" => Ok(Self::Sent),
            _ => bail!(
                Config,
                "unknown baseline input {s:?} (expected tfidf, oh, wdo, sent)"
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub penalty: Penalty,
    /// Inverse penalty weight: objective = weighted NLL + penalty / strength.
    pub strength: f64,
    pub positive_weight: f64,
    pub inputs: BTreeSet<LrInput>,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl LrConfig {
    pub fn new(penalty: Penalty, strength: f64, positive_weight: f64, inputs: &[LrInput]) -> Self {
        Self {
            penalty,
            strength,
            positive_weight,
            inputs: inputs.iter().copied().collect(),
            tolerance: 1e-6,
            max_iter: 50_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength > 0.0 && self.strength.is_finite()) {
            bail!(
                Config,
                "regularization strength must be positive, got {}",
                self.strength
            );
        }
        if !(self.positive_weight >= 1.0 && self.positive_weight.is_finite()) {
            bail!(
                Config,
                "positive class weight must be >= 1, got {}",
                self.positive_weight
            );
        }
        if self.inputs.is_empty() {
            bail!(Config, "baseline needs at least one input block");
        }
        if self.inputs.contains(&LrInput::Oh) && !self.inputs.contains(&LrInput::Tfidf) {
            bail!(
                Config,
                "the OH TFIDF block requires the comment TFIDF block"
            );
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let inputs: Vec<&str> = self
            .inputs
            .iter()
            .map(|i| match i {
                LrInput::Tfidf => "tfidf",
                LrInput::Oh => "oh",
                LrInput::Wdo => "wdo",
                LrInput::Sent => "sent",
            })
            .collect();
        format!(
            "{:?} C={} w+={} [{}]",
            self.penalty,
            self.strength,
            self.positive_weight,
            inputs.join("+")
        )
    }
}

/// Every penalty × strength × class-weight combination for one input set.
pub fn lr_grid(inputs: &[LrInput]) -> Vec<LrConfig> {
    let mut out = Vec::new();
    for penalty in [Penalty::L1, Penalty::L2] {
        for strength in GRID_STRENGTHS {
            for w in GRID_POSITIVE_WEIGHTS {
                out.push(LrConfig::new(penalty, strength, w, inputs));
            }
        }
    }
    out
}

/// Builds the sparse feature row of one pair.
pub fn lr_row(
    pair: &EmbeddedPair,
    inputs: &BTreeSet<LrInput>,
    tfidf: Option<&TfidfModel>,
    vocab: Option<&Vocabulary>,
) -> Result<SparseVector> {
    let need_tfidf = || {
        tfidf.ok_or_else(|| {
            Error::Config("TFIDF input requested without a fitted vectorizer".into())
        })
    };
    let mut row = SparseVector::new(0, Vec::new())?;
    let comment_tokens = pair.record.comment_tokens();
    for input in inputs {
        let block = match input {
            LrInput::Tfidf => need_tfidf()?.transform(&comment_tokens),
            LrInput::Oh => need_tfidf()?.transform(&pair.record.oh_tokens()),
            LrInput::Wdo => SparseVector::from_dense(
                &word_overlap(&comment_tokens, &pair.record.oh_tokens(), vocab).0,
            ),
            LrInput::Sent => {
                let d = pair.comment.shape()[1];
                let mut sum = vec![0.0; d];
                for r in 0..pair.comment.rows() {
                    sum.iter_mut()
                        .zip(&pair.comment.data()[r * d..(r + 1) * d])
                        .for_each(|(s, x)| *s += x);
                }
                SparseVector::from_dense(&sum)
            }
        };
        row = row.concat(&block);
    }
    Ok(row)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub config: LrConfig,
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Norm of the minimum-norm subgradient of the objective at the returned point.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LrModel {
    pub fn zeros(config: LrConfig, dim: usize) -> Self {
        Self {
            config,
            weights: vec![0.0; dim],
            intercept: 0.0,
            gradient_norm: 0.0,
            iterations: 0,
            converged: true,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn predict_lr(model: &LrModel, x: &SparseVector) -> Result<f64> {
    if x.dim() != model.weights.len() {
        bail!(
            Shape,
            "feature vector has dimension {}, model expects {}",
            x.dim(),
            model.weights.len()
        );
    }
    Ok(sigmoid(x.dot(&model.weights) + model.intercept))
}

struct Objective<'a> {
    x: &'a [SparseVector],
    y: &'a [u8],
    dim: usize,
    positive_weight: f64,
    penalty: Penalty,
    inv_strength: f64,
}

impl Objective<'_> {
    /// Smooth part (weighted NLL, plus the L2 term) and its gradient; the
    /// intercept is the last coordinate.
    fn smooth(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (w, b) = theta.split_at(self.dim);
        let mut grad = vec![0.0; self.dim + 1];
        let mut value = 0.0;
        for (x, &y) in self.x.iter().zip(self.y) {
            let z = x.dot(w) + b[0];
            let c = if y == 1 { self.positive_weight } else { 1.0 };
            // -log σ(z) for positives, -log(1 - σ(z)) for negatives
            value += c * if y == 1 { softplus(-z) } else { softplus(z) };
            let r = c * (sigmoid(z) - f64::from(y));
            for &(j, v) in x.entries() {
                grad[j] += r * v;
            }
            grad[self.dim] += r;
        }
        if self.penalty == Penalty::L2 {
            for j in 0..self.dim {
                value += 0.5 * self.inv_strength * w[j] * w[j];
                grad[j] += self.inv_strength * w[j];
            }
        }
        (value, grad)
    }

    fn nonsmooth(&self, theta: &[f64]) -> f64 {
        match self.penalty {
            Penalty::L1 => {
                self.inv_strength * theta[..self.dim].iter().map(|v| v.abs()).sum::<f64>()
            }
            Penalty::L2 => 0.0,
        }
    }

    fn prox(&self, theta: &mut [f64], step: f64) {
        if self.penalty == Penalty::L1 {
            let thr = step * self.inv_strength;
            for v in &mut theta[..self.dim] {
                *v = v.signum() * (v.abs() - thr).max(0.0);
            }
        }
    }

    /// Norm of the minimum-norm element of the subdifferential.
    fn stationarity(&self, theta: &[f64], grad: &[f64]) -> f64 {
        let mut s = grad[self.dim] * grad[self.dim];
        for j in 0..self.dim {
            let g = match self.penalty {
                Penalty::L2 => grad[j],
                Penalty::L1 if theta[j] != 0.0 => grad[j] + self.inv_strength * theta[j].signum(),
                Penalty::L1 => (grad[j].abs() - self.inv_strength).max(0.0),
            };
            s += g * g;
        }
        s.sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes the weighted, regularized negative log-likelihood with
/// accelerated proximal gradient (backtracking, adaptive restart).
pub fn fit_lr(config: &LrConfig, x: &[SparseVector], y: &[u8]) -> Result<LrModel> {
    config.validate()?;
    if x.len() != y.len() {
        bail!(Shape, "{} feature rows but {} labels", x.len(), y.len());
    }
    let positives = y.iter().filter(|&&l| l == 1).count();
    if y.iter().any(|&l| l > 1) {
        bail!(Domain, "labels must be 0 or 1");
    }
    if positives == 0 || positives == y.len() {
        bail!(
            Data,
            "logistic regression needs both classes ({positives} positives of {})",
            y.len()
        );
    }
    let dim = x[0].dim();
    if let Some(r) = x.iter().find(|r| r.dim() != dim) {
        bail!(
            Shape,
            "feature rows differ in dimension ({} vs {dim})",
            r.dim()
        );
    }
    let obj = Objective {
        x,
        y,
        dim,
        positive_weight: config.positive_weight,
        penalty: config.penalty,
        inv_strength: 1.0 / config.strength,
    };

    let mut lipschitz = 1.0;
    let mut current = vec![0.0; dim + 1];
    let mut momentum = current.clone();
    let mut t: f64 = 1.0;
    let (mut f_cur, mut g_cur) = obj.smooth(&current);
    let mut grad_norm = obj.stationarity(&current, &g_cur);
    let mut iterations = 0;
    while grad_norm > config.tolerance && iterations < config.max_iter {
        iterations += 1;
        let (f_m, g_m) = obj.smooth(&momentum);
        let (next, f_next, g_next) = loop {
            let mut z: Vec<f64> = momentum
                .iter()
                .zip(&g_m)
                .map(|(m, g)| m - g / lipschitz)
                .collect();
            obj.prox(&mut z, 1.0 / lipschitz);
            let diff: Vec<f64> = z.iter().zip(&momentum).map(|(a, b)| a - b).collect();
            let (f_z, g_z) = obj.smooth(&z);
            let bound = f_m + dot(&g_m, &diff) + 0.5 * lipschitz * dot(&diff, &diff);
            if f_z <= bound + 1e-12 * f_m.abs().max(1.0) || lipschitz > 1e300 {
                break (z, f_z, g_z);
            }
            lipschitz *= 2.0;
        };
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let step: Vec<f64> = next.iter().zip(&current).map(|(a, b)| a - b).collect();
        let restart = f_next + obj.nonsmooth(&next) > f_cur + obj.nonsmooth(&current);
        if restart {
            t = 1.0;
            momentum = next.clone();
        } else {
            let beta = (t - 1.0) / t_next;
            momentum = next.iter().zip(&step).map(|(a, s)| a + beta * s).collect();
            t = t_next;
        }
        current = next;
        f_cur = f_next;
        g_cur = g_next;
        grad_norm = obj.stationarity(&current, &g_cur);
    }
    if current.iter().any(|v| !v.is_finite()) {
        bail!(Degenerate, "logistic regression diverged");
    }
    let intercept = current.pop().expect("intercept");
    Ok(LrModel {
        config: config.clone(),
        weights: current,
        intercept,
        gradient_norm: grad_norm,
        iterations,
        converged: grad_norm <= config.tolerance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config: LrConfig,
    pub validation_auc: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub best: usize,
}

impl GridReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        for (i, r) in self.rows.iter().enumerate() {
            let mark = if i == self.best { "*" } else { " " };
            let conv = if r.converged { "" } else { " (iteration cap)" };
            let _ = writeln!(
                s,
                "{mark} {:<40} val_auc={:.4}{conv}",
                r.config.label(),
                r.validation_auc
            );
        }
        s
    }
}

/// Fits every config and keeps the one with the highest validation AUC
/// (first in grid order on ties).
pub fn select_lr(
    grid: &[LrConfig],
    train: (&[SparseVector], &[u8]),
    validation: (&[SparseVector], &[u8]),
    exec: Execution,
) -> Result<(LrModel, GridReport)> {
    if grid.is_empty() {
        bail!(Config, "empty configuration grid");
    }
    let fitted = par::map(exec, grid, |c| {
        let model = fit_lr(c, train.0, train.1)?;
        let scores = validation
            .0
            .iter()
            .map(|x| predict_lr(&model, x))
            .collect::<Result<Vec<_>>>()?;
        let val = auc(&scores, validation.1)?.auc;
        Ok((model, val))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, (_, v)) in fitted.iter().enumerate() {
        if *v > fitted[best].1 {
            best = i;
        }
    }
    let rows = fitted
        .iter()
        .map(|(m, v)| GridRow {
            config: m.config.clone(),
            validation_auc: *v,
            converged: m.converged,
        })
        .collect();
    let model = fitted.into_iter().nth(best).expect("best index").0;
    Ok((model, GridReport { rows, best }))
}

/// The `k` most positive and `k` most negative comment n-grams by weight
/// (ties in lexicographic order).
pub fn top_ngrams(
    model: &LrModel,
    tfidf: &TfidfModel,
    k: usize,
) -> Result<(Vec<(String, f64)>, Vec<(String, f64)>)> {
    if !model.config.inputs.contains(&LrInput::Tfidf) {
        bail!(Config, "model was not trained on TFIDF features");
    }
    if model.weights.len() < tfidf.dim() {
        bail!(
            Shape,
            "model has {} weights but the vectorizer has {} columns",
            model.weights.len(),
            tfidf.dim()
        );
    }
    let mut all: Vec<(String, f64)> = (0..tfidf.dim())
        .map(|c| (tfidf.ngram(c).to_string(), model.weights[c]))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let positive: Vec<_> = all.iter().take(k).cloned().collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let negative: Vec<_> = all.into_iter().take(k).collect();
    Ok((positive, negative))
}

/// Two-column text table of n-grams (words joined by `_`) and weights.
pub fn ngram_table(positive: &[(String, f64)], negative: &[(String, f64)]) -> String {
    let mut s = format!(
        "{:<32}{:>10}   {:<32}{:>10}\n",
        "positive", "weight", "negative", "weight"
    );
    for i in 0..positive.len().max(negative.len()) {
        let cell = |list: &[(String, f64)]| match list.get(i) {
            Some((g, w)) => format!("{:<32}{:>10.4}", g.replace(' ', "_"), w),
            None => format!("{:<42}", ""),
        };
        let _ = writeln!(s, "{}   {}", cell(positive), cell(negative));
    }
    s
}
