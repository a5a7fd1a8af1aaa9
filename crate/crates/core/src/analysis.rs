//! Post-hoc analyses over exported model diagnostics.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aim::DiagnosticsRecord;
use crate::error::{bail, Error, Result};
use crate::metrics::{paired_ttest, pearson, TTest};
use crate::text::tokenize;
use crate::topics::{topic_similarity, TopicWordIndex};

pub const DEFAULT_TOP_PAIRS: usize = 150;

/// The two OH sentences a comment addresses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub comment_id: String,
    pub sentences: [usize; 2],
}

/// Parses `comment_id idx1 idx2` lines (whitespace, tab or comma separated;
/// blank lines and `#` comments ignored).
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let [id, a, b] = fields[..] else {
            bail!(
                Data,
                "annotation line {}: expected `comment_id idx1 idx2`, got {line:?}",
                n + 1
            );
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Data(format!("annotation line {}: bad index {s:?}", n + 1)))
        };
        let sentences = [parse(a)?, parse(b)?];
        if sentences[0] == sentences[1] {
            bail!(
                Data,
                "annotation line {}: the two sentence indices must differ",
                n + 1
            );
        }
        out.push(AnnotationRecord {
            comment_id: id.to_string(),
            sentences,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub posts: usize,
    pub skipped_posts: usize,
    pub mean_successful: f64,
    pub mean_unsuccessful: f64,
    pub ttest: TTest,
}

/// Compares the mean attention on sentences addressed by each post's first
/// successful and first unsuccessful annotated comment (annotation file
/// order), with a paired t-test across posts.
pub fn attention_alignment(
    diagnostics: &[DiagnosticsRecord],
    annotations: &[AnnotationRecord],
) -> Result<AlignmentResult> {
    let by_comment: HashMap<&str, &DiagnosticsRecord> = diagnostics
        .iter()
        .map(|d| (d.comment_id.as_str(), d))
        .collect();
    let mut per_post: BTreeMap<&str, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for a in annotations {
        let Some(d) = by_comment.get(a.comment_id.as_str()) else {
            bail!(
                Data,
                "annotated comment {} has no diagnostics record",
                a.comment_id
            );
        };
        for &i in &a.sentences {
            if i >= d.attention.len() {
                bail!(
                    Data,
                    "annotation of {} references OH sentence {i}, post has {}",
                    a.comment_id,
                    d.attention.len()
                );
            }
        }
        let score = (d.attention[a.sentences[0]] + d.attention[a.sentences[1]]) / 2.0;
        let slot = per_post.entry(d.post_id.as_str()).or_default();
        let target = if d.label == 1 {
            &mut slot.0
        } else {
            &mut slot.1
        };
        target.get_or_insert(score);
    }
    let mut successful = Vec::new();
    let mut unsuccessful = Vec::new();
    let mut skipped = 0;
    for (s, u) in per_post.values() {
        match (s, u) {
            (Some(s), Some(u)) => {
                successful.push(*s);
                unsuccessful.push(*u);
            }
            _ => skipped += 1,
        }
    }
    let ttest = paired_ttest(&successful, &unsuccessful)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(AlignmentResult {
        posts: successful.len(),
        skipped_posts: skipped,
        mean_successful: mean(&successful),
        mean_unsuccessful: mean(&unsuccessful),
        ttest,
    })
}

/// Sentence texts of one exported pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairText {
    pub pair_id: String,
    pub oh_sentences: Vec<String>,
    pub comment_sentences: Vec<String>,
}

fn text_for<'a>(
    texts: &'a HashMap<String, PairText>,
    d: &DiagnosticsRecord,
) -> Result<&'a PairText> {
    let t = texts
        .get(&d.pair_id)
        .ok_or_else(|| Error::Data(format!("no sentence text for pair {}", d.pair_id)))?;
    if t.oh_sentences.len() != d.interactions.oh_len
        || t.comment_sentences.len() != d.interactions.comment_len
    {
        bail!(
            Data,
            "pair {}: text has {}x{} sentences, diagnostics {}x{}",
            d.pair_id,
            t.oh_sentences.len(),
            t.comment_sentences.len(),
            d.interactions.oh_len,
            d.interactions.comment_len
        );
    }
    Ok(t)
}

/// Pearson r between each interaction dimension and the topic similarity of
/// the sentence pair, over every exported sentence pair. `None` where a
/// dimension (or the similarity) is constant.
pub fn interaction_topic_correlation(
    diagnostics: &[DiagnosticsRecord],
    texts: &HashMap<String, PairText>,
    index: &TopicWordIndex,
) -> Result<Vec<Option<f64>>> {
    let Some(first) = diagnostics.first() else {
        bail!(EmptyInput, "no diagnostics records");
    };
    let dim = first.interactions.dim;
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); dim];
    let mut similarity = Vec::new();
    for d in diagnostics {
        if d.interactions.dim != dim {
            bail!(
                Shape,
                "pair {} has interaction dimension {}, expected {dim}",
                d.pair_id,
                d.interactions.dim
            );
        }
        let t = text_for(texts, d)?;
        let oh: Vec<Vec<String>> = t.oh_sentences.iter().map(|s| tokenize(s)).collect();
        let cm: Vec<Vec<String>> = t.comment_sentences.iter().map(|s| tokenize(s)).collect();
        for (i, a) in oh.iter().enumerate() {
            for (j, b) in cm.iter().enumerate() {
                similarity.push(topic_similarity(index, a, b));
                for (k, col) in values.iter_mut().enumerate() {
                    col.push(d.interactions.get(i, j, k));
                }
            }
        }
    }
    values
        .iter()
        .map(|col| match pearson(col, &similarity) {
            Ok(r) => Ok(Some(r)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionPair {
    pub post_id: String,
    pub comment_id: String,
    pub oh_sentence: usize,
    pub comment_sentence: usize,
    pub value: f64,
}

/// The `n` sentence pairs with the largest value in interaction dimension `k`,
/// ordered by value (descending), then post id, comment id, i, j.
pub fn top_interaction_pairs(
    diagnostics: &[DiagnosticsRecord],
    k: usize,
    n: usize,
) -> Result<Vec<InteractionPair>> {
    let mut all = Vec::new();
    for d in diagnostics {
        let it = &d.interactions;
        if k >= it.dim {
            bail!(
                Shape,
                "interaction dimension {k} out of range for pair {} (dimension {})",
                d.pair_id,
                it.dim
            );
        }
        for i in 0..it.oh_len {
            for j in 0..it.comment_len {
                all.push(InteractionPair {
                    post_id: d.post_id.clone(),
                    comment_id: d.comment_id.clone(),
                    oh_sentence: i,
                    comment_sentence: j,
                    value: it.get(i, j, k),
                });
            }
        }
    }
    all.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then_with(|| a.post_id.cmp(&b.post_id))
            .then_with(|| a.comment_id.cmp(&b.comment_id))
            .then(a.oh_sentence.cmp(&b.oh_sentence))
            .then(a.comment_sentence.cmp(&b.comment_sentence))
    });
    all.truncate(n);
    Ok(all)
}

pub fn alignment_report(r: &AlignmentResult) -> String {
    format!(
        "posts\t{}\nskipped_posts\t{}\nmean_attention_successful\t{:.6}\nmean_attention_unsuccessful\t{:.6}\nt\t{:.6}\ndf\t{}\np\t{:.6}\n",
        r.posts, r.skipped_posts, r.mean_successful, r.mean_unsuccessful, r.ttest.t, r.ttest.df, r.ttest.p_value
    )
}

pub fn correlation_report(rs: &[Option<f64>]) -> String {
    let mut s = String::from("dimension\tpearson_r\n");
    for (k, r) in rs.iter().enumerate() {
        match r {
            Some(r) => writeln!(s, "{k}\t{r:.6}"),
            None => writeln!(s, "{k}\tundefined"),
        }
        .expect("write to string");
    }
    s
}

/// Top pairs with their sentence text when available.
pub fn top_pairs_report(
    k: usize,
    pairs: &[InteractionPair],
    texts: &HashMap<String, PairText>,
) -> String {
    let mut s = format!(
        "# dimension {k}\nrank\tvalue\tpost\tcomment\ti\tj\toh_sentence\tcomment_sentence\n"
    );
    for (rank, p) in pairs.iter().enumerate() {
        let t = texts.get(&crate::aim::pair_id(&p.post_id, &p.comment_id));
        let oh = t
            .and_then(|t| t.oh_sentences.get(p.oh_sentence))
            .map_or("", String::as_str);
        let cm = t
            .and_then(|t| t.comment_sentences.get(p.comment_sentence))
            .map_or("", String::as_str);
        writeln!(
            s,
            "{}\t{:.6}\t{}\t{}\t{}\t{}\t{oh}\t{cm}",
            rank + 1,
            p.value,
            p.post_id,
            p.comment_id,
            p.oh_sentence,
            p.comment_sentence
        )
        .expect("write to string");
    }
    s
}
