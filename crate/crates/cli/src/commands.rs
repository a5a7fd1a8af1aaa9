//! One function per subcommand.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use aim_core::aim::{
    diagnostics, pair_id, predict_all, AimConfig, AimModel, Instance, InteractionKind,
    PredictionInput,
};
use aim_core::analysis::{
    alignment_report, attention_alignment, correlation_report, interaction_topic_correlation,
    parse_annotations, top_interaction_pairs, top_pairs_report, PairText, DEFAULT_TOP_PAIRS,
};
use aim_core::baseline::{
    lr_grid, lr_row, ngram_table, predict_lr, select_lr, top_ngrams, LrConfig, LrInput, Penalty,
};
use aim_core::corpus::{
    delta_ratio, embed_sentences, process_threads, read_threads, split as split_discussions,
    CorpusConfig, DiscussionInfo, PairRecord, Partition, SplitManifest, SplitName, SplitStats,
    Thread, Vocabulary, VOCABULARY_SIZE,
};
use aim_core::features::{SparseVector, TfidfModel, MAX_NGRAM, MAX_TFIDF_FEATURES};
use aim_core::metrics::{auc, delong};
use aim_core::topics::{
    discussion_documents, discussion_tokens, lda_fit, summarize_topics, LdaConfig, TopicWordIndex,
};
use aim_core::training::{train as train_model, TrainConfig};
use aim_core::{par, Error, Execution, ParamStore};
use anyhow::{bail, Context as _, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{require, resolve, usage};
use crate::io::*;

pub struct Context<'a> {
    pub file: Option<&'a toml::Table>,
    pub exec: Execution,
}

fn canonical(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))
}

// ---------------------------------------------------------------- preprocess

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PreprocessArgs {
    /// Thread JSONL file; each thread's own `partition` field is kept.
    #[arg(long, value_name = "FILE")]
    pub input: Vec<PathBuf>,
    /// Thread JSONL file whose threads all go to the training partition.
    #[arg(long, value_name = "FILE")]
    pub train: Vec<PathBuf>,
    /// Thread JSONL file whose threads all go to the test partition.
    #[arg(long, value_name = "FILE")]
    pub test: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Minimum OH post length in characters.
    #[arg(long)]
    pub min_post_chars: Option<usize>,
    /// Author name of the bot that confirms deltas.
    #[arg(long)]
    pub deltabot: Option<String>,
}

pub fn preprocess(ctx: &Context, flags: PreprocessArgs) -> Result<()> {
    let a = resolve(&flags, ctx.file, "preprocess")?;
    let out_dir = require(&a.out, "out")?;
    let sources: Vec<(&PathBuf, Option<Partition>)> = a
        .input
        .iter()
        .map(|p| (p, None))
        .chain(a.train.iter().map(|p| (p, Some(Partition::Train))))
        .chain(a.test.iter().map(|p| (p, Some(Partition::Test))))
        .collect();
    if sources.is_empty() {
        return Err(usage("give at least one of --input, --train, --test"));
    }
    let mut cfg = CorpusConfig::default();
    if let Some(n) = a.min_post_chars {
        cfg.min_post_chars = n;
    }
    if let Some(b) = &a.deltabot {
        cfg.deltabot = b.clone();
    }

    let mut threads: Vec<Thread> = Vec::new();
    let mut errors = Vec::new();
    for (path, forced) in &sources {
        let file =
            std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        for parsed in read_threads(BufReader::new(file))? {
            match parsed {
                Ok(mut t) => {
                    if let Some(p) = forced {
                        t.partition = *p;
                    }
                    threads.push(t);
                }
                Err(e) => errors.push(format!("{}: {e}", path.display())),
            }
        }
    }
    let inputs: Vec<&Path> = sources.iter().map(|(p, _)| p.as_path()).collect();
    let out = OutDir::create(&out_dir, &inputs)?;
    if threads.is_empty() && errors.is_empty() {
        eprintln!("warning: the input contains no threads");
    }

    let processed = process_threads(&threads, &cfg, ctx.exec);
    let discussions: Vec<DiscussionRecord> = processed
        .threads
        .iter()
        .map(|t| DiscussionRecord {
            post_id: t.id.clone(),
            partition: t.partition,
            delta_ratio: delta_ratio(t, &cfg),
            tokens: discussion_tokens(t),
        })
        .collect();
    out.write_jsonl("pairs.jsonl", &processed.pairs)?;
    out.write_jsonl("discussions.jsonl", &discussions)?;

    let f = &processed.filter;
    let l = &processed.labels;
    let mut report = String::new();
    let mut row = |k: &str, v: usize| writeln!(report, "{k:<28}{v}").expect("write to string");
    row("threads_read", threads.len() + errors.len());
    row("parse_failures", errors.len());
    row("threads_in", f.threads_in);
    row("threads_out", f.threads_out);
    row("rule_deltabot_empty", f.deltabot_empty);
    row("rule_deleted_comments", f.deleted_comments);
    row("rule_system_messages", f.system_messages);
    row("rule_short_posts", f.short_posts);
    row("rule_excluded_posts", f.excluded_posts);
    row("pairs", l.pairs);
    row("positives", l.positives);
    row("negatives", l.pairs - l.positives);
    row("skip_no_predecessor", l.no_predecessor);
    row("skip_predecessor_is_oh", l.predecessor_is_oh);
    row("skip_predecessor_is_bot", l.predecessor_is_bot);
    row("skip_already_labeled", l.already_labeled);
    row("skip_empty_comment", l.empty_comment);
    row("skip_missing_ancestors", l.missing_ancestors);
    row("unpaired_reply_targets", l.unpaired_reply_targets);
    out.write("report.txt", &report)?;
    let mut log = errors.join("\n");
    if !log.is_empty() {
        log.push('\n');
    }
    out.write("errors.log", &log)?;
    run_record(&out, "preprocess", &json!({ "options": a, "corpus": cfg }))?;
    eprint!("{report}");
    if !errors.is_empty() {
        bail!(Error::Data(format!(
            "{} thread(s) failed to parse; see {}",
            errors.len(),
            out.file("errors.log")?.display()
        )));
    }
    Ok(())
}

// -------------------------------------------------------------------- topics

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TopicsArgs {
    /// `discussions.jsonl` written by preprocess.
    #[arg(long, value_name = "FILE")]
    pub discussions: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of topics [default: 20].
    #[arg(long)]
    pub topics: Option<usize>,
    /// Gibbs sweeps [default: 500].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Document-topic prior [default: 50 / topics].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Topic-word prior [default: 0.01].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Drop words in more than this fraction of discussions [default: 0.5].
    #[arg(long)]
    pub max_df: Option<f64>,
    /// Words kept per topic [default: 100].
    #[arg(long)]
    pub top_words: Option<usize>,
}

pub fn topics(ctx: &Context, flags: TopicsArgs) -> Result<()> {
    let a = resolve(&flags, ctx.file, "topics")?;
    let input = require(&a.discussions, "discussions")?;
    let out = OutDir::create(&require(&a.out, "out")?, &[&input])?;
    let defaults = LdaConfig::default();
    let cfg = LdaConfig {
        topics: a.topics.unwrap_or(defaults.topics),
        alpha: a.alpha,
        beta: a.beta.unwrap_or(defaults.beta),
        iterations: a.iterations.unwrap_or(defaults.iterations),
        seed: require(&a.seed, "seed")?,
        top_words: a.top_words.unwrap_or(defaults.top_words),
    };
    let max_df = a.max_df.unwrap_or(0.5);
    if !(max_df > 0.0 && max_df <= 1.0) {
        return Err(usage(format!("--max-df must be in (0, 1], got {max_df}")));
    }
    let records: Vec<DiscussionRecord> = read_jsonl(&input)?;
    let texts: Vec<Vec<String>> = records.iter().map(|r| r.tokens.clone()).collect();
    let docs = discussion_documents(&texts, max_df);
    let model = lda_fit(&docs, &cfg)?;
    let assignments = model.assign_topics();
    let ratios: Vec<f64> = records.iter().map(|r| r.delta_ratio).collect();
    let summary = summarize_topics(&model, &assignments, &ratios, 10);

    let file = TopicsFile {
        topics: cfg.topics,
        top_words: model.top_words.clone(),
        assignments: records
            .iter()
            .zip(&assignments)
            .map(|(r, &t)| (r.post_id.clone(), t))
            .collect(),
        warnings: model.warnings.clone(),
    };
    out.write_json("topics.json", &file)?;
    let mut text = format!(
        "{:<7}{:>12}{:>12}  words\n",
        "topic", "discussions", "delta_ratio"
    );
    for s in &summary {
        writeln!(
            text,
            "{:<7}{:>12}{:>12.4}  {}",
            s.topic,
            s.discussions,
            s.mean_delta_ratio,
            s.top_words.join(" ")
        )?;
    }
    out.write("summary.txt", &text)?;
    run_record(
        &out,
        "topics",
        &json!({ "options": a, "lda": cfg, "max-df": max_df }),
    )?;
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    eprint!("{text}");
    Ok(())
}

// --------------------------------------------------------------------- split

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub discussions: Option<PathBuf>,
    /// `topics.json` written by the topics command.
    #[arg(long, value_name = "FILE")]
    pub topics: Option<PathBuf>,
    /// `pairs.jsonl`, for the statistics table.
    #[arg(long, value_name = "FILE")]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Topics with the highest mean delta ratio used for training [default: 7].
    #[arg(long)]
    pub training_topics: Option<usize>,
    /// Fraction of training discussions held out for validation [default: 0.1].
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

pub fn split(ctx: &Context, flags: SplitArgs) -> Result<()> {
    let a = resolve(&flags, ctx.file, "split")?;
    let disc_path = require(&a.discussions, "discussions")?;
    let topics_path = require(&a.topics, "topics")?;
    let pairs_path = require(&a.pairs, "pairs")?;
    let seed = require(&a.seed, "seed")?;
    let n_topics = a.training_topics.unwrap_or(7);
    let val_fraction = a.val_fraction.unwrap_or(0.1);
    let out = OutDir::create(
        &require(&a.out, "out")?,
        &[&disc_path, &topics_path, &pairs_path],
    )?;

    let records: Vec<DiscussionRecord> = read_jsonl(&disc_path)?;
    let topics: TopicsFile = read_json(&topics_path)?;
    let info = records
        .iter()
        .map(|r| {
            let topic = *topics.assignments.get(&r.post_id).ok_or_else(|| {
                Error::Data(format!("discussion {} has no topic assignment", r.post_id))
            })?;
            Ok(DiscussionInfo {
                post_id: r.post_id.clone(),
                partition: r.partition,
                topic,
                delta_ratio: r.delta_ratio,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let manifest = split_discussions(&info, n_topics, val_fraction, seed)?;
    let pairs: Vec<PairRecord> = read_jsonl(&pairs_path)?;
    let table = SplitStats::compute(&manifest, &pairs).table();
    out.write_json("split.json", &manifest)?;
    out.write("stats.txt", &table)?;
    run_record(
        &out,
        "split",
        &json!({ "options": a, "training-topics": n_topics, "val-fraction": val_fraction, "seed": seed }),
    )?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    eprint!("{table}");
    Ok(())
}

// ------------------------------------------------------------------ features

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FeaturesArgs {
    #[arg(long, value_name = "FILE")]
    pub pairs: Option<PathBuf>,
    /// `split.json` written by the split command.
    #[arg(long, value_name = "FILE")]
    pub split: Option<PathBuf>,
    /// Precomputed sentence embeddings (see docs/formats.md).
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Word vectors `word v1 v2 ...`; sentences are embedded by averaging.
    #[arg(long, value_name = "FILE")]
    pub word_vectors: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// [default: 40000]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// [default: 40000]
    #[arg(long)]
    pub tfidf_features: Option<usize>,
    /// Longest n-gram [default: 3].
    #[arg(long)]
    pub max_ngram: Option<usize>,
}

pub fn features(ctx: &Context, flags: FeaturesArgs) -> Result<()> {
    let a = resolve(&flags, ctx.file, "features")?;
    let pairs_path = canonical(&require(&a.pairs, "pairs")?)?;
    let split_path = canonical(&require(&a.split, "split")?)?;
    let embeddings = a.embeddings.as_deref().map(canonical).transpose()?;
    let word_vectors = a.word_vectors.as_deref().map(canonical).transpose()?;
    let vocab_size = a.vocab_size.unwrap_or(VOCABULARY_SIZE);
    let tfidf_features = a.tfidf_features.unwrap_or(MAX_TFIDF_FEATURES);
    let max_ngram = a.max_ngram.unwrap_or(MAX_NGRAM);
    let mut inputs: Vec<&Path> = vec![&pairs_path, &split_path];
    inputs.extend(embeddings.as_deref());
    inputs.extend(word_vectors.as_deref());
    let out = OutDir::create(&require(&a.out, "out")?, &inputs)?;

    let source = LoadedSource::load(embeddings.as_deref(), word_vectors.as_deref())?;
    let manifest: SplitManifest = read_json(&split_path)?;
    let records: Vec<PairRecord> = read_jsonl(&pairs_path)?;
    let train: Vec<&PairRecord> =
        manifest.select(SplitName::Train, &records, |p| p.post_id.as_str());
    if train.is_empty() {
        bail!(Error::EmptyInput("no training pairs in the split".into()));
    }
    let comment_docs: Vec<Vec<String>> = train.iter().map(|p| p.comment_tokens()).collect();
    let mut seen = BTreeSet::new();
    let mut vocab_docs = comment_docs.clone();
    for p in &train {
        if seen.insert(p.post_id.as_str()) {
            vocab_docs.push(p.oh_tokens());
        }
    }
    let vocab = Vocabulary::build(vocab_docs.iter().map(Vec::as_slice), vocab_size);
    let tfidf = TfidfModel::fit(&comment_docs, tfidf_features, max_ngram)?;

    // Fail now rather than in train if any used sentence lacks an embedding.
    let lookup = manifest.lookup();
    let used: Vec<PairRecord> = records
        .iter()
        .filter(|p| {
            !matches!(
                lookup.get(p.post_id.as_str()),
                None | Some(SplitName::Unused)
            )
        })
        .cloned()
        .collect();
    embed_sentences(&used, &source.source(), ctx.exec)?;

    out.write(VOCAB_FILE, &vocab.to_text())?;
    out.write(TFIDF_FILE, &tfidf.to_text())?;
    let fm = FeatureManifest {
        pairs: pairs_path.clone(),
        split: split_path.clone(),
        embeddings: embeddings.clone(),
        word_vectors: word_vectors.clone(),
        dim: source.source().dim(),
    };
    out.write_json(FEATURES_FILE, &fm)?;
    run_record(
        &out,
        "features",
        &json!({ "options": a, "vocab-size": vocab_size, "tfidf-features": tfidf_features, "max-ngram": max_ngram }),
    )?;
    eprintln!(
        "pairs={} training_pairs={} embedding_dim={} vocabulary={} tfidf_columns={}",
        used.len(),
        train.len(),
        fm.dim,
        vocab.len(),
        tfidf.dim()
    );
    Ok(())
}

// --------------------------------------------------------------------- train

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Directory written by the features command.
    #[arg(long, value_name = "DIR")]
    pub features: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated prediction inputs from max, hsent, tfidf, wdo [default: max].
    #[arg(long, value_delimiter = ',')]
    pub inputs: Vec<String>,
    /// inner-product or feed-forward [default: feed-forward].
    #[arg(long)]
    pub interaction: Option<String>,
    /// Replace attention with uniform weights.
    #[arg(long)]
    pub no_attention: bool,
    /// Encoder hidden size: 128 or 192 [default: 128].
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// First head width: 32 or 64 with hsent, else 1 [default: 32 or 1].
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// TFIDF head width: 1 or 3 [default: 1].
    #[arg(long)]
    pub tfidf_head_dim: Option<usize>,
    /// Use one encoder for the OH post and the comment.
    #[arg(long)]
    pub share_encoders: bool,
    /// [default: 0.002]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Per-epoch learning-rate factor [default: 0.95].
    #[arg(long)]
    pub decay: Option<f64>,
    /// [default: 10]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    pub base_epochs: Option<usize>,
    /// Epochs added when validation AUC kept improving [default: 5].
    #[arg(long)]
    pub extra_epochs: Option<usize>,
    /// Ranking-loss margin [default: 0.5].
    #[arg(long)]
    pub margin: Option<f64>,
}

fn parse_list<T: std::str::FromStr<Err = Error> + Ord>(
    values: &[String],
    default: &str,
) -> Result<BTreeSet<T>> {
    let values: Vec<&str> = if values.is_empty() {
        vec![default]
    } else {
        values.iter().map(String::as_str).collect()
    };
    Ok(values
        .iter()
        .map(|v| v.trim().parse::<T>())
        .collect::<Result<BTreeSet<T>, Error>>()?)
}

fn names<T: Serialize>(set: &BTreeSet<T>) -> String {
    set.iter()
        .map(|v| {
            serde_json::to_value(v)
                .ok()
                .and_then(|j| j.as_str().map(str::to_string))
                .unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join("+")
}

fn model_instances(ds: &Dataset, cfg: &AimConfig) -> Vec<Instance> {
    let tfidf = cfg.uses(PredictionInput::Tfidf).then_some(&ds.tfidf);
    ds.pairs
        .iter()
        .map(|p| p.to_instance(tfidf, cfg.uses(PredictionInput::Wdo), Some(&ds.vocab)))
        .collect()
}

fn predictions(ds: &Dataset, idx: &[usize], scores: &[f64]) -> Vec<Prediction> {
    idx.iter()
        .zip(scores)
        .map(|(&i, &p)| {
            let r = &ds.pairs[i].record;
            Prediction {
                pair_id: pair_id(&r.post_id, &r.comment_id),
                post_id: r.post_id.clone(),
                comment_id: r.comment_id.clone(),
                split: ds.splits[i],
                label: r.label,
                probability: p,
            }
        })
        .collect()
}

pub fn train(ctx: &Context, flags: TrainArgs) -> Result<()> {
    let a = resolve(&flags, ctx.file, "train")?;
    let feat = require(&a.features, "features")?;
    let seed = require(&a.seed, "seed")?;
    let inputs: BTreeSet<PredictionInput> = parse_list(&a.inputs, "max")?;
    let interaction = match a.interaction.as_deref().unwrap_or("feed-forward") {
        "inner-product" => InteractionKind::InnerProduct,
        "feed-forward" => InteractionKind::FeedForward,
        other => {
            return Err(usage(format!(
                "--interaction must be inner-product or feed-forward, got {other:?}"
            )))
        }
    };
    let out = OutDir::create(&require(&a.out, "out")?, &[&feat.join(FEATURES_FILE)])?;
    let ds = Dataset::load(&feat, ctx.exec)?;
    let hsent = inputs.contains(&PredictionInput::Hsent);
    let cfg = AimConfig {
        input_dim: ds.pairs.first().map_or(0, |p| p.oh.shape()[1]),
        hidden_dim: a.hidden_dim.unwrap_or(128),
        interaction,
        attention: !a.no_attention,
        head_dim: a.head_dim.unwrap_or(if hsent { 32 } else { 1 }),
        tfidf_dim: if inputs.contains(&PredictionInput::Tfidf) {
            ds.tfidf.dim()
        } else {
            0
        },
        tfidf_head_dim: a.tfidf_head_dim.unwrap_or(1),
        share_encoders: a.share_encoders,
        inputs,
    };
    cfg.validate_grid()?;
    let d = TrainConfig::default();
    let tc = TrainConfig {
        margin: a.margin.unwrap_or(d.margin),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        decay: a.decay.unwrap_or(d.decay),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        base_epochs: a.base_epochs.unwrap_or(d.base_epochs),
        extra_epochs: a.extra_epochs.unwrap_or(d.extra_epochs),
        seed,
        execution: ctx.exec,
        ..d
    };
    tc.validate()?;

    let instances = model_instances(&ds, &cfg);
    let pick = |s: SplitName| -> (Vec<usize>, Vec<Instance>) {
        let idx = ds.indices(s);
        let insts = idx.iter().map(|&i| instances[i].clone()).collect();
        (idx, insts)
    };
    let (_, train_set) = pick(SplitName::Train);
    let (_, val_set) = pick(SplitName::Validation);
    let mut model = AimModel::init(cfg.clone(), seed)?;
    let mut log = String::new();
    let outcome = train_model(&mut model, &train_set, &val_set, &tc, |e| {
        eprintln!("{e}");
        let _ = writeln!(log, "{e}");
    })?;
    writeln!(log, "extended={}", outcome.extended)?;

    let mut preds = Vec::new();
    for s in EVAL_SPLITS {
        let (idx, insts) = pick(s);
        let scores = predict_all(&model, &insts, ctx.exec)?;
        preds.extend(predictions(&ds, &idx, &scores));
    }
    model.params.save(out.file("model.ckpt")?)?;
    out.write_json("model.json", &cfg)?;
    out.write("train_log.txt", &log)?;
    out.write_jsonl("predictions.jsonl", &preds)?;
    let mut tc_echo = serde_json::to_value(&tc)?;
    tc_echo.as_object_mut().expect("object").remove("execution");
    run_record(
        &out,
        "train",
        &json!({ "options": a, "inputs": names(&cfg.inputs), "model": cfg, "training": tc_echo }),
    )?;
    Ok(())
}

// ------------------------------------------------------------------ baseline

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BaselineArgs {
    #[arg(long, value_name = "DIR")]
    pub features: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Comma-separated feature blocks from tfidf, oh, wdo, sent [default: tfidf].
    #[arg(long, value_delimiter = ',')]
    pub inputs: Vec<String>,
    /// l1 or l2. Setting any of penalty, strength or positive weight skips the grid search.
    #[arg(long)]
    pub penalty: Option<String>,
    /// Inverse regularization strength.
    #[arg(long)]
    pub strength: Option<f64>,
    /// Weight of the positive class.
    #[arg(long)]
    pub positive_weight: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// N-grams listed per sign in ngrams.txt [default: 20].
    #[arg(long)]
    pub top_ngrams: Option<usize>,
}

pub fn baseline(ctx: &Context, flags: BaselineArgs) -> Result<()> {
    let a = resolve(&flags, ctx.file, "baseline")?;
    let feat = require(&a.features, "features")?;
    let inputs: BTreeSet<LrInput> = parse_list(&a.inputs, "tfidf")?;
    let blocks: Vec<LrInput> = inputs.iter().copied().collect();
    let single = a.penalty.is_some() || a.strength.is_some() || a.positive_weight.is_some();
    let mut grid = if single {
        let penalty = match a.penalty.as_deref().unwrap_or("l2") {
            "l1" => Penalty::L1,
            "l2" => Penalty::L2,
            other => return Err(usage(format!("--penalty must be l1 or l2, got {other:?}"))),
        };
        vec![LrConfig::new(
            penalty,
            a.strength.unwrap_or(1.0),
            a.positive_weight.unwrap_or(1.0),
            &blocks,
        )]
    } else {
        lr_grid(&blocks)
    };
    for c in &mut grid {
        if let Some(t) = a.tolerance {
            c.tolerance = t;
        }
        if let Some(m) = a.max_iter {
            c.max_iter = m;
        }
        c.validate()?;
    }
    let out = OutDir::create(&require(&a.out, "out")?, &[&feat.join(FEATURES_FILE)])?;
    let ds = Dataset::load(&feat, ctx.exec)?;
    let rows = par::map(ctx.exec, &ds.pairs, |p| {
        lr_row(p, &inputs, Some(&ds.tfidf), Some(&ds.vocab))
    })
    .into_iter()
    .collect::<Result<Vec<SparseVector>, Error>>()?;
    let take = |s: SplitName| -> (Vec<usize>, Vec<SparseVector>, Vec<u8>) {
        let idx = ds.indices(s);
        let x = idx.iter().map(|&i| rows[i].clone()).collect();
        let y = idx.iter().map(|&i| ds.pairs[i].record.label).collect();
        (idx, x, y)
    };
    let (_, tx, ty) = take(SplitName::Train);
    let (_, vx, vy) = take(SplitName::Validation);
    let (model, report) = select_lr(&grid, (&tx, &ty), (&vx, &vy), ctx.exec)?;
    if !model.converged {
        eprintln!(
            "warning: selected model stopped at the iteration cap ({} iterations)",
            model.iterations
        );
    }

    let mut preds = Vec::new();
    for s in EVAL_SPLITS {
        let (idx, x, _) = take(s);
        let scores = x
            .iter()
            .map(|v| predict_lr(&model, v))
            .collect::<Result<Vec<f64>, Error>>()?;
        preds.extend(predictions(&ds, &idx, &scores));
    }
    out.write_json("model.json", &model)?;
    out.write("grid.txt", &report.table())?;
    out.write_jsonl("predictions.jsonl", &preds)?;
    if inputs.contains(&LrInput::Tfidf) {
        let (pos, neg) = top_ngrams(&model, &ds.tfidf, a.top_ngrams.unwrap_or(20))?;
        out.write("ngrams.txt", &ngram_table(&pos, &neg))?;
    }
    run_record(
        &out,
        "baseline",
        &json!({ "options": a, "inputs": names(&inputs), "grid": grid }),
    )?;
    eprint!("{}", report.table());
    Ok(())
}

// ---------------------------------------------------------------------- eval

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    /// `NAME=DIR` of a train or baseline output; repeat for each model.
    #[arg(long = "model", value_name = "NAME=DIR")]
    pub models: Vec<String>,
    /// Name of the model the others are tested against [default: the first].
    #[arg(long)]
    pub reference: Option<String>,
    /// Also write report.txt and run.json here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

struct Scored {
    name: String,
    inputs: String,
    by_pair: HashMap<String, Prediction>,
}

fn load_scored(spec: &str) -> Result<Scored> {
    let (name, dir) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("--model expects NAME=DIR, got {spec:?}")))?;
    let dir = Path::new(dir);
    let preds: Vec<Prediction> = read_jsonl(&dir.join("predictions.jsonl"))?;
    let run: serde_json::Value = read_json(&dir.join("run.json")).unwrap_or_default();
    let inputs = run["config"]["inputs"].as_str().unwrap_or("-").to_string();
    let by_pair = preds.into_iter().map(|p| (p.pair_id.clone(), p)).collect();
    Ok(Scored {
        name: name.to_string(),
        inputs,
        by_pair,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn eval(ctx: &Context, flags: EvalArgs) -> Result<()> {
    let a = resolve(&flags, ctx.file, "eval")?;
    if a.models.is_empty() {
        return Err(usage("give at least one --model NAME=DIR"));
    }
    let models = a
        .models
        .iter()
        .map(|m| load_scored(m))
        .collect::<Result<Vec<_>>>()?;
    let reference = match &a.reference {
        Some(r) => models
            .iter()
            .position(|m| &m.name == r)
            .ok_or_else(|| usage(format!("no model named {r:?}")))?,
        None => 0,
    };
    let refm = &models[reference];
    let mut order: Vec<&Prediction> = refm.by_pair.values().collect();
    order.sort_by(|x, y| x.pair_id.cmp(&y.pair_id));

    let splits = [SplitName::TestInDomain, SplitName::TestCrossDomain];
    let mut cells: Vec<[Option<f64>; 4]> = vec![[None; 4]; models.len()];
    for (col, split) in splits.iter().enumerate() {
        let ids: Vec<&Prediction> = order
            .iter()
            .copied()
            .filter(|p| p.split == *split)
            .collect();
        if ids.is_empty() {
            continue;
        }
        let labels: Vec<u8> = ids.iter().map(|p| p.label).collect();
        let ref_scores: Vec<f64> = ids.iter().map(|p| p.probability).collect();
        for (m, row) in models.iter().zip(cells.iter_mut()) {
            let scores = ids
                .iter()
                .map(|p| {
                    m.by_pair
                        .get(&p.pair_id)
                        .map(|q| q.probability)
                        .ok_or_else(|| {
                            Error::Data(format!(
                                "model {} has no prediction for pair {}",
                                m.name, p.pair_id
                            ))
                        })
                })
                .collect::<Result<Vec<f64>, Error>>()?;
            row[col] = Some(auc(&scores, &labels)?.auc);
            row[col + 2] = Some(delong(&scores, &ref_scores, &labels)?.p_value);
        }
    }
    let width = models
        .iter()
        .map(|m| m.name.len())
        .max()
        .unwrap_or(5)
        .max(5)
        + 2;
    let iw = models
        .iter()
        .map(|m| m.inputs.len())
        .max()
        .unwrap_or(6)
        .max(6)
        + 2;
    let mut report = format!(
        "{:<width$}{:<iw$}{:>8}{:>8}{:>8}{:>8}\n",
        "model", "inputs", "ID AUC", "CD AUC", "p(ID)", "p(CD)"
    );
    for (i, (m, row)) in models.iter().zip(&cells).enumerate() {
        let (p_id, p_cd) = if i == reference {
            ("ref".into(), "ref".into())
        } else {
            (fmt_opt(row[2]), fmt_opt(row[3]))
        };
        writeln!(
            report,
            "{:<width$}{:<iw$}{:>8}{:>8}{:>8}{:>8}",
            m.name,
            m.inputs,
            fmt_opt(row[0]),
            fmt_opt(row[1]),
            p_id,
            p_cd
        )?;
    }
    print!("{report}");
    if let Some(dir) = &a.out {
        let out = OutDir::create(dir, &[])?;
        out.write("report.txt", &report)?;
        run_record(
            &out,
            "eval",
            &json!({ "options": a, "reference": refm.name }),
        )?;
    }
    Ok(())
}

// --------------------------------------------------------- inspect-attention

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct InspectArgs {
    #[arg(long, value_name = "DIR")]
    pub features: Option<PathBuf>,
    /// Output directory of the train command.
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// train, validation, test-in-domain, test-cross-domain or all [default: test-in-domain].
    #[arg(long)]
    pub split: Option<String>,
}

pub fn inspect_attention(ctx: &Context, flags: InspectArgs) -> Result<()> {
    let a = resolve(&flags, ctx.file, "inspect-attention")?;
    let feat = require(&a.features, "features")?;
    let model_dir = require(&a.model, "model")?;
    let which = parse_split(a.split.as_deref().unwrap_or("test-in-domain"))?;
    let out = OutDir::create(
        &require(&a.out, "out")?,
        &[&model_dir.join("model.ckpt"), &model_dir.join("model.json")],
    )?;
    let cfg: AimConfig = read_json(&model_dir.join("model.json"))?;
    let params = ParamStore::load(model_dir.join("model.ckpt"))?;
    let model = AimModel::from_params(cfg.clone(), params)?;
    let ds = Dataset::load(&feat, ctx.exec)?;
    let instances = model_instances(&ds, &cfg);
    let chosen: Vec<usize> = (0..ds.pairs.len())
        .filter(|&i| which.is_none_or(|s| ds.splits[i] == s))
        .collect();
    let records = par::map(ctx.exec, &chosen, |&i| diagnostics(&model, &instances[i]))
        .into_iter()
        .collect::<Result<Vec<_>, Error>>()?;
    let texts: Vec<PairText> = chosen
        .iter()
        .map(|&i| {
            let r = &ds.pairs[i].record;
            PairText {
                pair_id: pair_id(&r.post_id, &r.comment_id),
                oh_sentences: r.oh_sentences.clone(),
                comment_sentences: r.comment_sentences.clone(),
            }
        })
        .collect();
    out.write_jsonl("diagnostics.jsonl", &records)?;
    out.write_jsonl("texts.jsonl", &texts)?;
    run_record(&out, "inspect-attention", &json!({ "options": a }))?;
    eprintln!("exported {} pairs", records.len());
    Ok(())
}

// ------------------------------------------------------------------- analyze

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnalyzeArgs {
    /// Output directory of inspect-attention.
    #[arg(long, value_name = "DIR")]
    pub attention: Option<PathBuf>,
    /// Lines of `comment_id idx1 idx2` naming the OH sentences a comment addresses.
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
    /// `topics.json`, for the interaction/topic-similarity correlation.
    #[arg(long, value_name = "FILE")]
    pub topics: Option<PathBuf>,
    /// Sentence pairs listed per interaction dimension [default: 150].
    #[arg(long)]
    pub top_pairs: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

pub fn analyze(ctx: &Context, flags: AnalyzeArgs) -> Result<()> {
    let a = resolve(&flags, ctx.file, "analyze")?;
    let dir = require(&a.attention, "attention")?;
    let diags: Vec<aim_core::aim::DiagnosticsRecord> = read_jsonl(&dir.join("diagnostics.jsonl"))?;
    let texts: HashMap<String, PairText> = read_jsonl::<PairText>(&dir.join("texts.jsonl"))?
        .into_iter()
        .map(|t| (t.pair_id.clone(), t))
        .collect();
    let n = a.top_pairs.unwrap_or(DEFAULT_TOP_PAIRS);

    let mut report = String::from("== attention on addressed sentences ==\n");
    match &a.annotations {
        Some(p) => {
            let ann = parse_annotations(&read_text(p)?)?;
            report.push_str(&alignment_report(&attention_alignment(&diags, &ann)?));
        }
        None => report.push_str("skipped: no --annotations file\n"),
    }
    report.push_str("\n== interaction vs topic similarity ==\n");
    match &a.topics {
        Some(p) => {
            let topics: TopicsFile = read_json(p)?;
            let index = TopicWordIndex::new(&topics.top_words);
            report.push_str(&correlation_report(&interaction_topic_correlation(
                &diags, &texts, &index,
            )?));
        }
        None => report.push_str("skipped: no --topics file\n"),
    }
    report.push_str("\n== top interaction pairs ==\n");
    let dims = diags.first().map_or(0, |d| d.interactions.dim);
    for k in 0..dims {
        let pairs = top_interaction_pairs(&diags, k, n)?;
        report.push_str(&top_pairs_report(k, &pairs, &texts));
    }
    if dims == 0 {
        report.push_str("no diagnostics records\n");
    }
    match &a.out {
        Some(o) => {
            let mut inputs = vec![dir.join("diagnostics.jsonl"), dir.join("texts.jsonl")];
            inputs.extend(a.annotations.clone());
            inputs.extend(a.topics.clone());
            let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            let out = OutDir::create(o, &refs)?;
            out.write("report.txt", &report)?;
            run_record(&out, "analyze", &json!({ "options": a, "top-pairs": n }))?;
        }
        None => print!("{report}"),
    }
    Ok(())
}
