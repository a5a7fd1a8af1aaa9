//! Change My View threads: parsing, filtering, linearization, Δ labeling,
//! vocabulary, splits and sentence embeddings.
//!
//! # Input format
//!
//! One JSON object per line:
//!
//! ```json
//! {"id": "2rnpbs", "title": "CMV: ...", "selftext": "...", "author": "oh_user",
//!  "split": "train",
//!  "comments": [{"id": "cngx0ab", "parent_id": "t3_2rnpbs", "author": "x",
//!                "body": "...", "created_utc": 1420070400}]}
//! ```
//!
//! `parent_id` may carry reddit's `t3_` (post) / `t1_` (comment) prefixes or be
//! a bare id. `created_utc` may be a number or a numeric string. `split` is
//! optional and defaults to `train`.
//!
//! # System messages
//!
//! In OH posts everything from the first line made only of five or more
//! underscores is the moderators' footer and is removed. In DeltaBot comments
//! lines starting with `^` or `[^` (superscript link footers) are removed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::aim::Instance;
use crate::error::{bail, Error, Result};
use crate::features::{word_overlap, TfidfModel};
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::text::{split_sentences, tokenize};

pub const VOCABULARY_SIZE: usize = 40_000;
pub const MIN_POST_CHARS: usize = 100;
pub const DELETED: &str = "[deleted]";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParentRef {
    Post,
    Comment(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comment {
    pub id: String,
    pub parent: ParentRef,
    pub author: String,
    pub body: String,
    pub created_utc: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Thread {
    pub id: String,
    pub title: String,
    pub body: String,
    pub author: String,
    pub partition: Partition,
    pub comments: Vec<Comment>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Timestamp {
    Int(i64),
    Float(f64),
    Text(String),
}

#[derive(Deserialize)]
struct CommentRecord {
    id: String,
    parent_id: String,
    #[serde(default)]
    author: Option<String>,
    #[serde(default)]
    body: Option<String>,
    created_utc: Timestamp,
}

#[derive(Deserialize)]
struct ThreadRecord {
    id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    selftext: String,
    #[serde(default)]
    author: Option<String>,
    #[serde(default)]
    split: Partition,
    #[serde(default)]
    comments: Vec<CommentRecord>,
}

fn strip_prefix_id(id: &str) -> &str {
    id.strip_prefix("t1_")
        .or_else(|| id.strip_prefix("t3_"))
        .unwrap_or(id)
}

impl Thread {
    /// Parses one line of the thread file.
    pub fn from_json(line: &str) -> Result<Self> {
        let record: ThreadRecord = serde_json::from_str(line).map_err(|e| {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(String::from))
                .unwrap_or_else(|| "<unknown>".into());
            Error::Parse {
                thread: id,
                message: e.to_string(),
            }
        })?;
        let parse_err = |message: String| Error::Parse {
            thread: record.id.clone(),
            message,
        };
        let post_id = strip_prefix_id(&record.id).to_string();
        let mut comments = Vec::with_capacity(record.comments.len());
        let mut seen = HashSet::new();
        for c in &record.comments {
            let id = strip_prefix_id(&c.id).to_string();
            if !seen.insert(id.clone()) {
                return Err(parse_err(format!("duplicate comment id {id}")));
            }
            let parent =
                if c.parent_id.starts_with("t3_") || strip_prefix_id(&c.parent_id) == post_id {
                    ParentRef::Post
                } else {
                    ParentRef::Comment(strip_prefix_id(&c.parent_id).to_string())
                };
            let created_utc = match &c.created_utc {
                Timestamp::Int(t) => *t,
                Timestamp::Float(t) => *t as i64,
                Timestamp::Text(s) => s
                    .trim()
                    .parse::<f64>()
                    .map(|t| t as i64)
                    .map_err(|_| parse_err(format!("comment {id}: bad created_utc {s:?}")))?,
            };
            comments.push(Comment {
                id,
                parent,
                author: c.author.clone().unwrap_or_else(|| DELETED.into()),
                body: c.body.clone().unwrap_or_default(),
                created_utc,
            });
        }
        let thread = Thread {
            id: post_id,
            title: record.title,
            body: record.selftext,
            author: record.author.unwrap_or_else(|| DELETED.into()),
            partition: record.split,
            comments,
        };
        thread.check_acyclic().map_err(parse_err)?;
        Ok(thread)
    }

    fn check_acyclic(&self) -> std::result::Result<(), String> {
        let parents: HashMap<&str, &ParentRef> = self
            .comments
            .iter()
            .map(|c| (c.id.as_str(), &c.parent))
            .collect();
        for c in &self.comments {
            let mut cur = &c.parent;
            let mut steps = 0;
            while let ParentRef::Comment(pid) = cur {
                steps += 1;
                if steps > self.comments.len() {
                    return Err(format!("parent links of comment {} form a cycle", c.id));
                }
                match parents.get(pid.as_str()) {
                    Some(p) => cur = p,
                    None => break,
                }
            }
        }
        Ok(())
    }

    pub fn comment(&self, id: &str) -> Option<&Comment> {
        self.comments.iter().find(|c| c.id == id)
    }

    /// OH sentences with the title first.
    pub fn oh_sentences(&self) -> Vec<String> {
        let mut out = Vec::new();
        let title = self.title.split_whitespace().collect::<Vec<_>>().join(" ");
        if !title.is_empty() {
            out.push(title);
        }
        out.extend(split_sentences(&self.body));
        out
    }

    pub fn oh_text(&self) -> String {
        format!("{}\n\n{}", self.title, self.body)
    }
}

/// Reads a line-delimited thread file. Blank lines are skipped; each bad line
/// yields its own error so callers can log and continue.
pub fn read_threads(reader: impl BufRead) -> Result<Vec<Result<Thread>>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Thread::from_json(&line));
    }
    Ok(out)
}

/// Knobs for filtering and Δ detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub deltabot: String,
    /// Case-insensitive marker in a DeltaBot reply confirming a Δ.
    pub confirmation_marker: String,
    /// Case-insensitive tokens in an OH comment that award a Δ.
    pub delta_tokens: Vec<String>,
    pub min_post_chars: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            deltabot: "DeltaBot".into(),
            confirmation_marker: "confirmed".into(),
            delta_tokens: vec!["\u{2206}".into(), "\u{0394}".into(), "!delta".into()],
            min_post_chars: MIN_POST_CHARS,
        }
    }
}

impl CorpusConfig {
    pub fn is_deltabot(&self, author: &str) -> bool {
        author.eq_ignore_ascii_case(&self.deltabot)
    }
}

/// Counts of what each exclusion rule removed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub threads_in: usize,
    pub threads_out: usize,
    /// Rule 1: DeltaBot comments left empty.
    pub deltabot_empty: usize,
    /// Rule 2: comments whose body is `[deleted]`.
    pub deleted_comments: usize,
    /// Rule 3: posts and DeltaBot comments that had a system-message block stripped.
    pub system_messages: usize,
    /// Rule 4: OH posts shorter than the minimum length.
    pub short_posts: usize,
    /// Rule 5: discussions whose OH post itself was deleted or removed.
    pub excluded_posts: usize,
}

impl FilterReport {
    pub fn merge(&mut self, other: &FilterReport) {
        self.threads_in += other.threads_in;
        self.threads_out += other.threads_out;
        self.deltabot_empty += other.deltabot_empty;
        self.deleted_comments += other.deleted_comments;
        self.system_messages += other.system_messages;
        self.short_posts += other.short_posts;
        self.excluded_posts += other.excluded_posts;
    }
}

fn strip_post_footer(body: &str) -> Option<String> {
    let mut kept = Vec::new();
    for line in body.lines() {
        let t = line.trim();
        if t.len() >= 5 && t.chars().all(|c| c == '_') {
            return Some(kept.join("\n").trim_end().to_string());
        }
        kept.push(line);
    }
    None
}

fn strip_deltabot_footer(body: &str) -> Option<String> {
    let is_footer = |l: &str| {
        let t = l.trim_start();
        t.starts_with('^') || t.starts_with("[^")
    };
    if !body.lines().any(is_footer) {
        return None;
    }
    Some(
        body.lines()
            .filter(|l| !is_footer(l))
            .collect::<Vec<_>>()
            .join("\n")
            .trim()
            .to_string(),
    )
}

fn post_is_removed(thread: &Thread) -> bool {
    let body = thread.body.trim();
    body == DELETED || body == "[removed]" || thread.author == DELETED
}

/// Applies the exclusion rules to one thread; `None` when the discussion is dropped.
pub fn filter_thread(
    thread: &Thread,
    config: &CorpusConfig,
    report: &mut FilterReport,
) -> Option<Thread> {
    report.threads_in += 1;
    if post_is_removed(thread) {
        report.excluded_posts += 1;
        return None;
    }
    let mut out = thread.clone();
    if let Some(stripped) = strip_post_footer(&out.body) {
        out.body = stripped;
        report.system_messages += 1;
    }
    if out.body.trim().chars().count() < config.min_post_chars {
        report.short_posts += 1;
        return None;
    }
    out.comments.clear();
    for c in &thread.comments {
        if c.body.trim() == DELETED {
            report.deleted_comments += 1;
            continue;
        }
        let mut c = c.clone();
        if config.is_deltabot(&c.author) {
            if let Some(stripped) = strip_deltabot_footer(&c.body) {
                c.body = stripped;
                report.system_messages += 1;
            }
            if c.body.trim().is_empty() {
                report.deltabot_empty += 1;
                continue;
            }
        }
        out.comments.push(c);
    }
    report.threads_out += 1;
    Some(out)
}

pub fn filter_threads(threads: &[Thread], config: &CorpusConfig) -> (Vec<Thread>, FilterReport) {
    let mut report = FilterReport::default();
    let kept = threads
        .iter()
        .filter_map(|t| filter_thread(t, config, &mut report))
        .collect();
    (kept, report)
}

pub fn is_oh_comment(thread: &Thread, comment: &Comment) -> bool {
    comment.author == thread.author && thread.author != DELETED
}

/// OH comments in chronological order (ties by id).
pub fn oh_comments(thread: &Thread) -> Vec<&Comment> {
    let mut out: Vec<&Comment> = thread
        .comments
        .iter()
        .filter(|c| is_oh_comment(thread, c))
        .collect();
    out.sort_by(|a, b| {
        a.created_utc
            .cmp(&b.created_utc)
            .then_with(|| a.id.cmp(&b.id))
    });
    out
}

/// The OH's assumed reading order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Linearization {
    /// Comment ids in reading order.
    pub sequence: Vec<String>,
    /// OH comments whose ancestor chain was cut by a missing comment.
    pub missing_ancestors: Vec<String>,
}

/// Flattens the comment tree: for each OH comment in chronological order,
/// appends its not-yet-seen ancestors root to leaf, then the comment itself.
pub fn linearize(thread: &Thread) -> Linearization {
    let by_id: HashMap<&str, &Comment> =
        thread.comments.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut out = Linearization::default();
    for oh in oh_comments(thread) {
        let mut chain = Vec::new();
        let mut cur = &oh.parent;
        while let ParentRef::Comment(pid) = cur {
            match by_id.get(pid.as_str()) {
                Some(parent) => {
                    chain.push(parent.id.as_str());
                    cur = &parent.parent;
                }
                None => {
                    out.missing_ancestors.push(oh.id.clone());
                    break;
                }
            }
        }
        for id in chain
            .into_iter()
            .rev()
            .chain(std::iter::once(oh.id.as_str()))
        {
            if seen.insert(id) {
                out.sequence.push(id.to_string());
            }
        }
    }
    out
}

/// 1 iff a DeltaBot confirmation replies to the OH comment or the comment
/// contains a Δ token.
pub fn detect_delta(oh_comment: &Comment, thread: &Thread, config: &CorpusConfig) -> u8 {
    let body = oh_comment.body.to_lowercase();
    if config
        .delta_tokens
        .iter()
        .any(|t| body.contains(&t.to_lowercase()))
    {
        return 1;
    }
    let marker = config.confirmation_marker.to_lowercase();
    let confirmed = thread.comments.iter().any(|c| {
        config.is_deltabot(&c.author)
            && c.parent == ParentRef::Comment(oh_comment.id.clone())
            && c.body.to_lowercase().contains(&marker)
    });
    u8::from(confirmed)
}

/// Fraction of the OH's replies that carry a Δ; 0 without replies.
pub fn delta_ratio(thread: &Thread, config: &CorpusConfig) -> f64 {
    let replies = oh_comments(thread);
    if replies.is_empty() {
        return 0.0;
    }
    let with_delta = replies
        .iter()
        .filter(|c| detect_delta(c, thread, config) == 1)
        .count();
    with_delta as f64 / replies.len() as f64
}

/// One (OH post, challenger comment) instance in text form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub post_id: String,
    pub comment_id: String,
    pub label: u8,
    pub partition: Partition,
    pub comment_created_utc: i64,
    pub oh_sentences: Vec<String>,
    pub comment_sentences: Vec<String>,
}

impl PairRecord {
    pub fn oh_tokens(&self) -> Vec<String> {
        self.oh_sentences.iter().flat_map(|s| tokenize(s)).collect()
    }

    pub fn comment_tokens(&self) -> Vec<String> {
        self.comment_sentences
            .iter()
            .flat_map(|s| tokenize(s))
            .collect()
    }
}

/// Why OH comments in the sequence did or did not produce a pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub pairs: usize,
    pub positives: usize,
    pub no_predecessor: usize,
    pub predecessor_is_oh: usize,
    pub predecessor_is_bot: usize,
    pub already_labeled: usize,
    pub empty_comment: usize,
    pub missing_ancestors: usize,
    /// OH replies to a challenger comment that ended up without its own pair.
    pub unpaired_reply_targets: usize,
}

impl LabelReport {
    pub fn merge(&mut self, o: &LabelReport) {
        self.pairs += o.pairs;
        self.positives += o.positives;
        self.no_predecessor += o.no_predecessor;
        self.predecessor_is_oh += o.predecessor_is_oh;
        self.predecessor_is_bot += o.predecessor_is_bot;
        self.already_labeled += o.already_labeled;
        self.empty_comment += o.empty_comment;
        self.missing_ancestors += o.missing_ancestors;
        self.unpaired_reply_targets += o.unpaired_reply_targets;
    }
}

/// Labels the comment preceding each OH comment in the sequence with that OH
/// comment's Δ. Only challenger comments are labeled, each at most once.
pub fn label_pairs(
    thread: &Thread,
    lin: &Linearization,
    config: &CorpusConfig,
) -> (Vec<PairRecord>, LabelReport) {
    let by_id: HashMap<&str, &Comment> =
        thread.comments.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut report = LabelReport {
        missing_ancestors: lin.missing_ancestors.len(),
        ..Default::default()
    };
    let mut labeled: HashSet<&str> = HashSet::new();
    let mut pairs = Vec::new();
    let oh_sentences = thread.oh_sentences();
    for (k, id) in lin.sequence.iter().enumerate() {
        let Some(oh) = by_id.get(id.as_str()) else {
            continue;
        };
        if !is_oh_comment(thread, oh) {
            continue;
        }
        if k == 0 {
            report.no_predecessor += 1;
            continue;
        }
        let pred = by_id[lin.sequence[k - 1].as_str()];
        if is_oh_comment(thread, pred) {
            report.predecessor_is_oh += 1;
            continue;
        }
        if config.is_deltabot(&pred.author) {
            report.predecessor_is_bot += 1;
            continue;
        }
        if !labeled.insert(pred.id.as_str()) {
            report.already_labeled += 1;
            continue;
        }
        let comment_sentences = split_sentences(&pred.body);
        if comment_sentences.is_empty() {
            report.empty_comment += 1;
            continue;
        }
        let label = detect_delta(oh, thread, config);
        report.pairs += 1;
        report.positives += usize::from(label);
        pairs.push(PairRecord {
            post_id: thread.id.clone(),
            comment_id: pred.id.clone(),
            label,
            partition: thread.partition,
            comment_created_utc: pred.created_utc,
            oh_sentences: oh_sentences.clone(),
            comment_sentences,
        });
    }
    for oh in oh_comments(thread) {
        if let ParentRef::Comment(pid) = &oh.parent {
            if let Some(target) = by_id.get(pid.as_str()) {
                let challenger =
                    !is_oh_comment(thread, target) && !config.is_deltabot(&target.author);
                if challenger && !labeled.contains(pid.as_str()) {
                    report.unpaired_reply_targets += 1;
                }
            }
        }
    }
    (pairs, report)
}

/// Filtered threads and their labeled pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Processed {
    pub threads: Vec<Thread>,
    pub pairs: Vec<PairRecord>,
    pub filter: FilterReport,
    pub labels: LabelReport,
}

/// Filters, linearizes and labels every thread. Threads are handled
/// independently and the output is ordered by post id.
pub fn process_threads(
    threads: &[Thread],
    config: &CorpusConfig,
    exec: crate::Execution,
) -> Processed {
    let per_thread = crate::par::map(exec, threads, |t| {
        let mut filter = FilterReport::default();
        let kept = filter_thread(t, config, &mut filter);
        let (pairs, labels) = match &kept {
            Some(t) => label_pairs(t, &linearize(t), config),
            None => (Vec::new(), LabelReport::default()),
        };
        (kept, pairs, filter, labels)
    });
    let mut order: Vec<usize> = (0..threads.len()).collect();
    order.sort_by(|&a, &b| threads[a].id.cmp(&threads[b].id));
    let mut out = Processed::default();
    let mut per_thread: Vec<_> = per_thread.into_iter().map(Some).collect();
    for i in order {
        let (kept, pairs, filter, labels) = per_thread[i].take().expect("each thread once");
        out.threads.extend(kept);
        out.pairs.extend(pairs);
        out.filter.merge(&filter);
        out.labels.merge(&labels);
    }
    out
}

/// Most frequent training words, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<(String, u64)>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a>(documents: impl IntoIterator<Item = &'a [String]>, max_size: usize) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for doc in documents {
            for t in doc {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut words: Vec<(String, u64)> = counts
            .into_iter()
            .map(|(w, c)| (w.to_string(), c))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        words.truncate(max_size);
        Self::from_words(words)
    }

    fn from_words(words: Vec<(String, u64)>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i))
            .collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words.iter().map(|(w, c)| (w.as_str(), *c))
    }

    pub fn to_text(&self) -> String {
        self.words
            .iter()
            .map(|(w, c)| format!("{w}\t{c}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let words = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                let (w, c) = l
                    .rsplit_once('\t')
                    .ok_or_else(|| Error::Data(format!("vocabulary line {l:?}")))?;
                let c = c
                    .parse()
                    .map_err(|_| Error::Data(format!("vocabulary count in {l:?}")))?;
                Ok((w.to_string(), c))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_words(words))
    }
}

/// Everything the split needs to know about one discussion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscussionInfo {
    pub post_id: String,
    pub partition: Partition,
    pub topic: usize,
    pub delta_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub training_topics: Vec<usize>,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test_in_domain: Vec<String>,
    pub test_cross_domain: Vec<String>,
    /// Training-partition discussions of non-training topics.
    pub unused: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Train,
    Validation,
    TestInDomain,
    TestCrossDomain,
    Unused,
}

impl SplitManifest {
    pub fn lookup(&self) -> HashMap<&str, SplitName> {
        let mut m = HashMap::new();
        for (name, ids) in [
            (SplitName::Train, &self.train),
            (SplitName::Validation, &self.validation),
            (SplitName::TestInDomain, &self.test_in_domain),
            (SplitName::TestCrossDomain, &self.test_cross_domain),
            (SplitName::Unused, &self.unused),
        ] {
            for id in ids {
                m.insert(id.as_str(), name);
            }
        }
        m
    }

    /// Pairs whose post falls in `split`, in input order.
    pub fn select<'a, T>(
        &self,
        split: SplitName,
        items: &'a [T],
        post_id: impl Fn(&T) -> &str,
    ) -> Vec<&'a T> {
        let lookup = self.lookup();
        items
            .iter()
            .filter(|it| lookup.get(post_id(it)) == Some(&split))
            .collect()
    }
}

/// Picks the `n_training_topics` topics with the highest mean Δ ratio over
/// training discussions, then draws `val_fraction` of each training topic's
/// discussions into validation.
pub fn split(
    discussions: &[DiscussionInfo],
    n_training_topics: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitManifest> {
    if !(0.0..1.0).contains(&val_fraction) {
        bail!(
            Config,
            "validation fraction must be in [0, 1), got {val_fraction}"
        );
    }
    let mut seen = HashSet::new();
    if let Some(d) = discussions
        .iter()
        .find(|d| !seen.insert(d.post_id.as_str()))
    {
        bail!(Data, "discussion {} listed twice", d.post_id);
    }
    let mut by_topic: BTreeMap<usize, Vec<&DiscussionInfo>> = BTreeMap::new();
    for d in discussions {
        by_topic.entry(d.topic).or_default().push(d);
    }
    let mut manifest = SplitManifest {
        seed,
        ..Default::default()
    };
    let mut ranked: Vec<(usize, f64)> = Vec::new();
    for (&topic, ds) in &by_topic {
        let train: Vec<f64> = ds
            .iter()
            .filter(|d| d.partition == Partition::Train)
            .map(|d| d.delta_ratio)
            .collect();
        if train.is_empty() {
            manifest
                .warnings
                .push(format!("topic {topic} has no training discussions"));
            continue;
        }
        ranked.push((topic, train.iter().sum::<f64>() / train.len() as f64));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut training: Vec<usize> = ranked.iter().take(n_training_topics).map(|r| r.0).collect();
    training.sort_unstable();
    let is_training = |t: usize| training.binary_search(&t).is_ok();

    let mut rng = substream(seed, "split");
    for (&topic, ds) in &by_topic {
        let mut train: Vec<&str> = Vec::new();
        for d in ds {
            match (d.partition, is_training(topic)) {
                (Partition::Train, true) => train.push(&d.post_id),
                (Partition::Train, false) => manifest.unused.push(d.post_id.clone()),
                (Partition::Test, true) => manifest.test_in_domain.push(d.post_id.clone()),
                (Partition::Test, false) => manifest.test_cross_domain.push(d.post_id.clone()),
            }
        }
        if !is_training(topic) {
            continue;
        }
        train.sort_unstable();
        train.shuffle(&mut rng);
        let n_val = (train.len() as f64 * val_fraction).round() as usize;
        manifest
            .validation
            .extend(train[..n_val].iter().map(|s| s.to_string()));
        manifest
            .train
            .extend(train[n_val..].iter().map(|s| s.to_string()));
    }
    manifest.training_topics = training;
    for list in [
        &mut manifest.train,
        &mut manifest.validation,
        &mut manifest.test_in_domain,
        &mut manifest.test_cross_domain,
        &mut manifest.unused,
    ] {
        list.sort();
    }
    Ok(manifest)
}

/// Discussion, pair and positive counts per split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub discussions: [usize; 4],
    pub pairs: [usize; 4],
    pub positives: [usize; 4],
}

impl SplitStats {
    pub fn compute(manifest: &SplitManifest, pairs: &[PairRecord]) -> Self {
        let lookup = manifest.lookup();
        let col = |s: SplitName| match s {
            SplitName::Train => Some(0),
            SplitName::Validation => Some(1),
            SplitName::TestInDomain => Some(2),
            SplitName::TestCrossDomain => Some(3),
            SplitName::Unused => None,
        };
        let mut stats = SplitStats {
            discussions: [
                manifest.train.len(),
                manifest.validation.len(),
                manifest.test_in_domain.len(),
                manifest.test_cross_domain.len(),
            ],
            ..Default::default()
        };
        for p in pairs {
            if let Some(c) = lookup.get(p.post_id.as_str()).and_then(|&s| col(s)) {
                stats.pairs[c] += 1;
                stats.positives[c] += usize::from(p.label);
            }
        }
        stats
    }

    /// Table with rows `# discussions / # pairs / # positives` and columns
    /// `Train / Val / Test / CD`.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<15}{:>10}{:>10}{:>10}{:>10}\n",
            "", "Train", "Val", "Test", "CD"
        );
        for (name, row) in [
            ("# discussions", &self.discussions),
            ("# pairs", &self.pairs),
            ("# positives", &self.positives),
        ] {
            s.push_str(&format!("{name:<15}"));
            for v in row {
                s.push_str(&format!("{:>10}", thousands(*v)));
            }
            s.push('\n');
        }
        s
    }
}

pub fn thousands(v: usize) -> String {
    let digits = v.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

const EMBEDDING_HEADER: &str = "AIMEMB 1";

/// Sentence vectors keyed by (document id, sentence index).
///
/// Text format: `AIMEMB 1 <dim> <count>` followed by one
/// `doc_id<TAB>sentence_index<TAB>v1 v2 ...` line per sentence. The OH post's
/// document id is the post id (sentence 0 is the title); a comment's is the
/// comment id.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    vectors: BTreeMap<(String, usize), Vec<f64>>,
}

impl PrecomputedEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, doc: &str, sentence: usize, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            bail!(
                Shape,
                "embedding for {doc}#{sentence} has {} values, expected {}",
                vector.len(),
                self.dim
            );
        }
        if vector.iter().any(|v| !v.is_finite()) {
            bail!(Domain, "non-finite embedding for {doc}#{sentence}");
        }
        self.vectors.insert((doc.to_string(), sentence), vector);
        Ok(())
    }

    pub fn get(&self, doc: &str, sentence: usize) -> Option<&[f64]> {
        self.vectors
            .get(&(doc.to_string(), sentence))
            .map(Vec::as_slice)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{EMBEDDING_HEADER} {} {}\n", self.dim, self.vectors.len());
        for ((doc, idx), v) in &self.vectors {
            let values: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            s.push_str(&format!("{doc}\t{idx}\t{}\n", values.join(" ")));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let rest = header
            .strip_prefix(EMBEDDING_HEADER)
            .ok_or_else(|| Error::Data(format!("embedding file header {header:?}")))?;
        let nums: Vec<usize> = rest
            .split_whitespace()
            .filter_map(|x| x.parse().ok())
            .collect();
        let [dim, count] = nums[..] else {
            bail!(
                Data,
                "embedding header needs dimension and count: {header:?}"
            );
        };
        let mut out = Self::new(dim);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut parts = line.splitn(3, '\t');
            let (Some(doc), Some(idx), Some(values)) = (parts.next(), parts.next(), parts.next())
            else {
                bail!(Data, "embedding line {line:?}");
            };
            let idx = idx
                .parse()
                .map_err(|_| Error::Data(format!("sentence index in {line:?}")))?;
            let v = values
                .split_whitespace()
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|_| Error::Data(format!("value {x:?} in {line:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            out.insert(doc, idx, v)?;
        }
        if out.len() != count {
            bail!(
                Data,
                "embedding file declares {count} records but has {}",
                out.len()
            );
        }
        Ok(out)
    }
}

/// Word-vector table for the averaging fallback (one `word v1 v2 ...` per line).
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            bail!(
                Shape,
                "vector for {word:?} has {} values, expected {}",
                vector.len(),
                self.dim
            );
        }
        self.vectors.insert(word.to_string(), vector);
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut out: Option<Self> = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default();
            let v = parts
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|_| Error::Data(format!("word vector value {x:?} for {word:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = out.get_or_insert_with(|| Self::new(v.len()));
            table.insert(word, v)?;
        }
        out.ok_or_else(|| Error::Data("empty word-vector file".into()))
    }

    /// Mean of in-table token vectors; zeros when no token is known.
    pub fn embed(&self, sentence: &str) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for t in tokenize(sentence) {
            if let Some(v) = self.vectors.get(&t) {
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                n += 1;
            }
        }
        if n > 0 {
            sum.iter_mut().for_each(|s| *s /= n as f64);
        }
        sum
    }
}

pub enum EmbeddingSource<'a> {
    Precomputed(&'a PrecomputedEmbeddings),
    WordVectors(&'a WordVectors),
}

impl EmbeddingSource<'_> {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSource::Precomputed(p) => p.dim(),
            EmbeddingSource::WordVectors(w) => w.dim(),
        }
    }

    fn embed_document(&self, doc: &str, sentences: &[String]) -> Result<Tensor> {
        let d = self.dim();
        let mut data = Vec::with_capacity(sentences.len() * d);
        for (i, s) in sentences.iter().enumerate() {
            match self {
                EmbeddingSource::Precomputed(p) => match p.get(doc, i) {
                    Some(v) => data.extend_from_slice(v),
                    None => bail!(Data, "no precomputed embedding for sentence {i} of {doc}"),
                },
                EmbeddingSource::WordVectors(w) => data.extend(w.embed(s)),
            }
        }
        Tensor::matrix(sentences.len(), d, data)
    }
}

/// A labeled pair with its sentence-embedding matrices attached.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedPair {
    pub record: PairRecord,
    pub oh: Tensor,
    pub comment: Tensor,
}

pub fn embed_sentences(
    pairs: &[PairRecord],
    source: &EmbeddingSource,
    exec: crate::Execution,
) -> Result<Vec<EmbeddedPair>> {
    crate::par::map(exec, pairs, |p| {
        if p.oh_sentences.is_empty() || p.comment_sentences.is_empty() {
            bail!(
                EmptyInput,
                "pair {}/{} has an empty side",
                p.post_id,
                p.comment_id
            );
        }
        Ok(EmbeddedPair {
            oh: source.embed_document(&p.post_id, &p.oh_sentences)?,
            comment: source.embed_document(&p.comment_id, &p.comment_sentences)?,
            record: p.clone(),
        })
    })
    .into_iter()
    .collect()
}

impl EmbeddedPair {
    /// Model input with the requested auxiliary features computed.
    pub fn to_instance(
        &self,
        tfidf: Option<&TfidfModel>,
        overlap: bool,
        vocab: Option<&Vocabulary>,
    ) -> Instance {
        let comment_tokens = (tfidf.is_some() || overlap).then(|| self.record.comment_tokens());
        Instance {
            post_id: self.record.post_id.clone(),
            comment_id: self.record.comment_id.clone(),
            label: self.record.label,
            oh: self.oh.clone(),
            comment: self.comment.clone(),
            tfidf: tfidf.map(|m| m.transform(comment_tokens.as_deref().unwrap_or_default())),
            word_overlap: overlap.then(|| {
                word_overlap(
                    comment_tokens.as_deref().unwrap_or_default(),
                    &self.record.oh_tokens(),
                    vocab,
                )
                .0
            }),
        }
    }
}
