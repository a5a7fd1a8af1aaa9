//! TFIDF n-gram vectorizer and word-overlap features.
//!
//! IDF is smoothed, `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, term frequency is
//! the raw count, and vectors are L2-normalized. Columns are the top n-grams
//! (n = 1..=3, one pooled cap) by corpus term frequency with lexicographic
//! tie-breaking, laid out in lexicographic order.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::corpus::Vocabulary;
use crate::error::{bail, Result};
use crate::tensor::Tensor;

pub const MAX_TFIDF_FEATURES: usize = 40_000;
pub const MAX_NGRAM: usize = 3;
const FORMAT_HEADER: &str = "AIMTFIDF 1";

/// Sparse vector with strictly increasing column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            bail!(Data, "sparse indices must be strictly increasing");
        }
        if let Some(&(i, _)) = entries.last() {
            if i >= dim {
                bail!(Shape, "sparse index {i} out of range for dimension {dim}");
            }
        }
        if entries.iter().any(|(_, v)| !v.is_finite()) {
            bail!(Domain, "non-finite sparse value");
        }
        Ok(Self { dim, entries })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        Self {
            dim: values.len(),
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut data = vec![0.0; self.dim.max(1)];
        for &(i, v) in &self.entries {
            data[i] = v;
        }
        Tensor::from_parts(vec![data.len()], data)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    /// Appends `other` after this vector's columns.
    pub fn concat(&self, other: &SparseVector) -> SparseVector {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|&(i, v)| (i + self.dim, v)));
        SparseVector {
            dim: self.dim + other.dim,
            entries,
        }
    }
}

/// Fitted TFIDF vectorizer.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfModel {
    ngrams: Vec<String>,
    idf: Vec<f64>,
    index: HashMap<String, usize>,
    n_docs: usize,
    max_n: usize,
}

/// All 1..=max_n grams of a token sequence, joined by single spaces.
pub fn ngrams(tokens: &[String], max_n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in 1..=max_n {
        for w in tokens.windows(n) {
            out.push(w.join(" "));
        }
    }
    out
}

impl TfidfModel {
    pub fn fit(documents: &[Vec<String>], max_features: usize, max_n: usize) -> Result<Self> {
        if documents.is_empty() {
            bail!(Data, "cannot fit TFIDF on an empty corpus");
        }
        if max_n == 0 || max_features == 0 {
            bail!(Config, "TFIDF needs max_n >= 1 and max_features >= 1");
        }
        let mut tf: HashMap<String, u64> = HashMap::new();
        let mut df: HashMap<String, u64> = HashMap::new();
        for doc in documents {
            let grams = ngrams(doc, max_n);
            let mut seen = HashSet::new();
            for g in grams {
                if seen.insert(g.clone()) {
                    *df.entry(g.clone()).or_default() += 1;
                }
                *tf.entry(g).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = tf.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_features);
        let mut selected: Vec<String> = ranked.into_iter().map(|(g, _)| g).collect();
        selected.sort();
        let n = documents.len() as f64;
        let idf = selected
            .iter()
            .map(|g| ((1.0 + n) / (1.0 + df[g] as f64)).ln() + 1.0)
            .collect();
        Ok(Self::from_parts(selected, idf, documents.len(), max_n))
    }

    fn from_parts(ngrams: Vec<String>, idf: Vec<f64>, n_docs: usize, max_n: usize) -> Self {
        let index = ngrams
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i))
            .collect();
        Self {
            ngrams,
            idf,
            index,
            n_docs,
            max_n,
        }
    }

    pub fn dim(&self) -> usize {
        self.ngrams.len()
    }

    pub fn ngram(&self, column: usize) -> &str {
        &self.ngrams[column]
    }

    pub fn column(&self, ngram: &str) -> Option<usize> {
        self.index.get(ngram).copied()
    }

    pub fn idf(&self, column: usize) -> f64 {
        self.idf[column]
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Count × IDF over modeled n-grams, L2-normalized; all-zero when nothing matches.
    pub fn transform(&self, tokens: &[String]) -> SparseVector {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for g in ngrams(tokens, self.max_n) {
            if let Some(&col) = self.index.get(&g) {
                *counts.entry(col).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(c, n)| (c, n * self.idf[c]))
            .collect();
        entries.sort_by_key(|e| e.0);
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            entries.iter_mut().for_each(|e| e.1 /= norm);
        }
        SparseVector {
            dim: self.dim(),
            entries,
        }
    }

    /// Versioned text form: header, counts, then one `idf<TAB>ngram` line per column.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{FORMAT_HEADER}\nn_docs {}\nmax_n {}\nfeatures {}\n",
            self.n_docs,
            self.max_n,
            self.dim()
        );
        for (g, idf) in self.ngrams.iter().zip(&self.idf) {
            let _ = writeln!(s, "{idf}\t{g}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(FORMAT_HEADER) {
            bail!(
                Data,
                "not a TFIDF model file (expected header {FORMAT_HEADER:?})"
            );
        }
        let mut field = |key: &str| -> Result<usize> {
            let line = lines.next().unwrap_or_default();
            match line.strip_prefix(key).and_then(|v| v.trim().parse().ok()) {
                Some(v) => Ok(v),
                None => bail!(Data, "TFIDF header: expected {key}, got {line:?}"),
            }
        };
        let n_docs = field("n_docs")?;
        let max_n = field("max_n")?;
        let count = field("features")?;
        let mut ngrams = Vec::with_capacity(count);
        let mut idf = Vec::with_capacity(count);
        for line in lines.take(count) {
            let Some((v, g)) = line.split_once('\t') else {
                bail!(Data, "TFIDF row without tab: {line:?}");
            };
            idf.push(
                v.parse::<f64>()
                    .map_err(|e| crate::Error::Data(format!("idf {v:?}: {e}")))?,
            );
            ngrams.push(g.to_string());
        }
        if ngrams.len() != count {
            bail!(
                Data,
                "TFIDF file declares {count} features but has {}",
                ngrams.len()
            );
        }
        Ok(Self::from_parts(ngrams, idf, n_docs, max_n))
    }
}

/// `[|C∩O|, |C∩O|/|C|, |C∩O|/|O|, |C∩O|/|C∪O|]` over distinct tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WordOverlapFeatures(pub [f64; 4]);

/// Word overlap between comment tokens `c` and OH tokens `o`; when a vocabulary
/// is given, only in-vocabulary tokens count. Empty denominators give 0.
pub fn word_overlap(c: &[String], o: &[String], vocab: Option<&Vocabulary>) -> WordOverlapFeatures {
    let keep = |t: &&String| vocab.is_none_or(|v| v.contains(t));
    let cs: HashSet<&String> = c.iter().filter(keep).collect();
    let os: HashSet<&String> = o.iter().filter(keep).collect();
    let inter = cs.intersection(&os).count() as f64;
    let union = cs.union(&os).count() as f64;
    let ratio = |den: f64| if den == 0.0 { 0.0 } else { inter / den };
    WordOverlapFeatures([
        inter,
        ratio(cs.len() as f64),
        ratio(os.len() as f64),
        ratio(union),
    ])
}
