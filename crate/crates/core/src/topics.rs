//! LDA by collapsed Gibbs sampling, topic assignment and topic similarity.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::corpus::delta_ratio;
use crate::error::{bail, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub topics: usize,
    /// Document-topic prior; `50 / topics` when unset.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
    pub top_words: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            topics: 20,
            alpha: None,
            beta: 0.01,
            iterations: 500,
            seed: 0,
            top_words: 100,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 {
            bail!(Config, "LDA needs at least 2 topics, got {}", self.topics);
        }
        if !(self.alpha() > 0.0) || !(self.beta > 0.0) {
            bail!(
                Config,
                "LDA priors must be positive (alpha {}, beta {})",
                self.alpha(),
                self.beta
            );
        }
        Ok(())
    }
}

/// Sampler state; counts are kept consistent with the assignments after every sweep.
pub struct GibbsSampler {
    k: usize,
    alpha: f64,
    beta: f64,
    vocab: Vec<String>,
    docs: Vec<Vec<usize>>,
    assignments: Vec<Vec<usize>>,
    /// `[word * k + topic]`
    word_topic: Vec<u64>,
    /// `[doc * k + topic]`
    doc_topic: Vec<u64>,
    topic_total: Vec<u64>,
    rng: ChaCha8Rng,
    weights: Vec<f64>,
    pub warnings: Vec<String>,
}

impl GibbsSampler {
    pub fn new(documents: &[Vec<String>], config: &LdaConfig) -> Result<Self> {
        config.validate()?;
        if documents.iter().all(|d| d.is_empty()) {
            bail!(EmptyInput, "LDA corpus has no tokens");
        }
        let mut vocab: Vec<String> = documents.iter().flatten().cloned().collect();
        vocab.sort_unstable();
        vocab.dedup();
        let index: HashMap<&str, usize> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        let docs: Vec<Vec<usize>> = documents
            .iter()
            .map(|d| d.iter().map(|w| index[w.as_str()]).collect())
            .collect();
        let warnings = documents
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_empty())
            .map(|(i, _)| format!("document {i} is empty and contributes no tokens"))
            .collect();
        let k = config.topics;
        let mut rng = substream(config.seed, "gibbs");
        let mut word_topic = vec![0; vocab.len() * k];
        let mut doc_topic = vec![0; docs.len() * k];
        let mut topic_total = vec![0; k];
        let assignments: Vec<Vec<usize>> = docs
            .iter()
            .enumerate()
            .map(|(d, words)| {
                words
                    .iter()
                    .map(|&w| {
                        let t = rng.random_range(0..k);
                        word_topic[w * k + t] += 1;
                        doc_topic[d * k + t] += 1;
                        topic_total[t] += 1;
                        t
                    })
                    .collect()
            })
            .collect();
        drop(index);
        Ok(Self {
            k,
            alpha: config.alpha(),
            beta: config.beta,
            vocab,
            docs,
            assignments,
            word_topic,
            doc_topic,
            topic_total,
            rng,
            weights: vec![0.0; k],
            warnings,
        })
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// Resamples every token's topic once.
    pub fn sweep(&mut self) {
        let k = self.k;
        let v_beta = self.vocab.len() as f64 * self.beta;
        for d in 0..self.docs.len() {
            for n in 0..self.docs[d].len() {
                let w = self.docs[d][n];
                let old = self.assignments[d][n];
                self.word_topic[w * k + old] -= 1;
                self.doc_topic[d * k + old] -= 1;
                self.topic_total[old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    let p = (self.doc_topic[d * k + t] as f64 + self.alpha)
                        * (self.word_topic[w * k + t] as f64 + self.beta)
                        / (self.topic_total[t] as f64 + v_beta);
                    total += p;
                    self.weights[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);
                self.assignments[d][n] = new;
                self.word_topic[w * k + new] += 1;
                self.doc_topic[d * k + new] += 1;
                self.topic_total[new] += 1;
            }
        }
    }

    /// Token totals of the three count tables: (word-topic, doc-topic, topic).
    pub fn count_totals(&self) -> (u64, u64, u64) {
        (
            self.word_topic.iter().sum(),
            self.doc_topic.iter().sum(),
            self.topic_total.iter().sum(),
        )
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn into_model(self, top_words: usize) -> LdaModel {
        let k = self.k;
        let topic_word: Vec<Vec<u64>> = (0..k)
            .map(|t| {
                (0..self.vocab.len())
                    .map(|w| self.word_topic[w * k + t])
                    .collect()
            })
            .collect();
        let doc_topic: Vec<Vec<u64>> = self.doc_topic.chunks(k).map(<[u64]>::to_vec).collect();
        let top = topic_word
            .iter()
            .map(|row| {
                let mut words: Vec<usize> = (0..row.len()).filter(|&w| row[w] > 0).collect();
                words.sort_by(|&a, &b| {
                    row[b]
                        .cmp(&row[a])
                        .then_with(|| self.vocab[a].cmp(&self.vocab[b]))
                });
                words
                    .into_iter()
                    .take(top_words)
                    .map(|w| self.vocab[w].clone())
                    .collect()
            })
            .collect();
        LdaModel {
            alpha: self.alpha,
            beta: self.beta,
            vocab: self.vocab,
            topic_word,
            doc_topic,
            top_words: top,
            warnings: self.warnings,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub alpha: f64,
    pub beta: f64,
    pub vocab: Vec<String>,
    /// `[topic][word]` counts.
    pub topic_word: Vec<Vec<u64>>,
    /// `[doc][topic]` counts for the fitted documents.
    pub doc_topic: Vec<Vec<u64>>,
    /// Most frequent words per topic (ties lexicographic).
    pub top_words: Vec<Vec<String>>,
    pub warnings: Vec<String>,
}

impl LdaModel {
    pub fn topics(&self) -> usize {
        self.topic_word.len()
    }

    /// Smoothed word distribution of one topic.
    pub fn topic_word_distribution(&self, topic: usize) -> Vec<f64> {
        let row = &self.topic_word[topic];
        let denom = row.iter().sum::<u64>() as f64 + self.vocab.len() as f64 * self.beta;
        row.iter()
            .map(|&c| (c as f64 + self.beta) / denom)
            .collect()
    }

    /// Smoothed topic distribution of one fitted document.
    pub fn document_distribution(&self, doc: usize) -> Vec<f64> {
        let row = &self.doc_topic[doc];
        let denom = row.iter().sum::<u64>() as f64 + self.topics() as f64 * self.alpha;
        row.iter()
            .map(|&c| (c as f64 + self.alpha) / denom)
            .collect()
    }

    /// Topic of every fitted document (see [`assign_by_zscore`]).
    pub fn assign_topics(&self) -> Vec<usize> {
        let dists: Vec<Vec<f64>> = (0..self.doc_topic.len())
            .map(|d| self.document_distribution(d))
            .collect();
        assign_by_zscore(&dists)
    }
}

/// Prepares discussion token streams for topic modeling: keeps alphabetic
/// tokens of at least three characters and drops words that occur in more
/// than `max_df` of the documents.
pub fn discussion_documents(texts: &[Vec<String>], max_df: f64) -> Vec<Vec<String>> {
    let kept: Vec<Vec<String>> = texts
        .iter()
        .map(|t| {
            t.iter()
                .filter(|w| w.chars().count() >= 3 && w.chars().all(char::is_alphabetic))
                .cloned()
                .collect()
        })
        .collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &kept {
        let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for w in seen {
            *df.entry(w).or_default() += 1;
        }
    }
    let limit = max_df * kept.len() as f64;
    kept.iter()
        .map(|doc| {
            doc.iter()
                .filter(|w| df[w.as_str()] as f64 <= limit)
                .cloned()
                .collect()
        })
        .collect()
}

/// Token stream of a whole discussion: title, post body and every comment.
pub fn discussion_tokens(thread: &crate::corpus::Thread) -> Vec<String> {
    let mut tokens = crate::text::tokenize(&thread.oh_text());
    for c in &thread.comments {
        tokens.extend(crate::text::tokenize(&c.body));
    }
    tokens
}

pub fn lda_fit(documents: &[Vec<String>], config: &LdaConfig) -> Result<LdaModel> {
    let mut sampler = GibbsSampler::new(documents, config)?;
    for _ in 0..config.iterations {
        sampler.sweep();
    }
    Ok(sampler.into_model(config.top_words))
}

/// Standardizes each topic's probability across documents and assigns each
/// document its highest z-score (lower topic id on ties). Topics with no
/// spread across documents score 0.
pub fn assign_by_zscore(distributions: &[Vec<f64>]) -> Vec<usize> {
    if distributions.is_empty() {
        return Vec::new();
    }
    let k = distributions[0].len();
    let n = distributions.len() as f64;
    let stats: Vec<(f64, f64)> = (0..k)
        .map(|t| {
            let mean = distributions.iter().map(|d| d[t]).sum::<f64>() / n;
            let var = distributions
                .iter()
                .map(|d| (d[t] - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
        .collect();
    distributions
        .iter()
        .map(|d| {
            let mut best = 0;
            let mut best_z = f64::NEG_INFINITY;
            for (t, &(mean, sd)) in stats.iter().enumerate() {
                let z = if sd > 0.0 { (d[t] - mean) / sd } else { 0.0 };
                if z > best_z {
                    best = t;
                    best_z = z;
                }
            }
            best
        })
        .collect()
}

/// Lookup from topic word to the topics whose top-word list contains it.
pub struct TopicWordIndex {
    topics: usize,
    words: HashMap<String, Vec<usize>>,
}

impl TopicWordIndex {
    pub fn new(top_words: &[Vec<String>]) -> Self {
        let mut words: HashMap<String, Vec<usize>> = HashMap::new();
        for (t, list) in top_words.iter().enumerate() {
            for w in list {
                let entry = words.entry(w.clone()).or_default();
                if entry.last() != Some(&t) {
                    entry.push(t);
                }
            }
        }
        Self {
            topics: top_words.len(),
            words,
        }
    }

    pub fn from_model(model: &LdaModel) -> Self {
        Self::new(&model.top_words)
    }

    /// Per-topic topic-word occurrence counts, normalized to sum 1 (all zero
    /// when the sentence has no topic word).
    pub fn topic_vector(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.topics];
        for t in tokens {
            if let Some(ts) = self.words.get(t) {
                ts.iter().for_each(|&k| v[k] += 1.0);
            }
        }
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            v.iter_mut().for_each(|x| *x /= total);
        }
        v
    }
}

/// Cosine of the two sentences' topic vectors; 0 when either is all zero.
pub fn topic_similarity(index: &TopicWordIndex, a: &[String], b: &[String]) -> f64 {
    let va = index.topic_vector(a);
    let vb = index.topic_vector(b);
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Per-topic discussion count and mean Δ ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic: usize,
    pub discussions: usize,
    pub mean_delta_ratio: f64,
    pub top_words: Vec<String>,
}

pub fn summarize_topics(
    model: &LdaModel,
    assignments: &[usize],
    ratios: &[f64],
    shown_words: usize,
) -> Vec<TopicSummary> {
    let mut groups: BTreeMap<usize, Vec<f64>> =
        (0..model.topics()).map(|t| (t, Vec::new())).collect();
    for (&t, &r) in assignments.iter().zip(ratios) {
        groups.entry(t).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(topic, rs)| TopicSummary {
            topic,
            discussions: rs.len(),
            mean_delta_ratio: if rs.is_empty() {
                0.0
            } else {
                rs.iter().sum::<f64>() / rs.len() as f64
            },
            top_words: model
                .top_words
                .get(topic)
                .map(|w| w.iter().take(shown_words).cloned().collect())
                .unwrap_or_default(),
        })
        .collect()
}
