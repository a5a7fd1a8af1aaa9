//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use aim_core::aim::{AimConfig, AimModel, Instance, InteractionKind, PredictionInput};
use aim_core::features::SparseVector;
use aim_core::{ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn config(
    interaction: InteractionKind,
    inputs: &[PredictionInput],
    input_dim: usize,
    hidden_dim: usize,
) -> AimConfig {
    let inputs: BTreeSet<_> = inputs.iter().copied().collect();
    let head_dim = if inputs.contains(&PredictionInput::Hsent) {
        32
    } else {
        1
    };
    AimConfig {
        input_dim,
        hidden_dim,
        interaction,
        attention: true,
        inputs,
        head_dim,
        tfidf_dim: 7,
        tfidf_head_dim: 3,
        share_encoders: false,
    }
}

/// Random instance with every optional feature filled in.
pub fn random_instance(
    rng: &mut impl Rng,
    post: &str,
    comment: &str,
    label: u8,
    m_oh: usize,
    m_c: usize,
    d: usize,
) -> Instance {
    let tfidf: Vec<f64> = (0..7)
        .map(|i| {
            if i % 2 == 0 {
                rng.random_range(0.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let wdo = [
        rng.random_range(0.0..5.0),
        rng.random(),
        rng.random(),
        rng.random(),
    ];
    Instance {
        post_id: post.into(),
        comment_id: comment.into(),
        label,
        oh: uniform_matrix(rng, m_oh, d, 1.0),
        comment: uniform_matrix(rng, m_c, d, 1.0),
        tfidf: Some(SparseVector::from_dense(&tfidf)),
        word_overlap: Some(wdo),
    }
}

/// Per-parameter relative error between analytic and central-difference gradients.
pub fn gradient_errors(
    params: &ParamStore,
    analytic: &[Tensor],
    step: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> Vec<(String, f64)> {
    let mut store = params.clone();
    let mut out = Vec::new();
    for id in 0..store.len() {
        let mut numeric = vec![0.0; store.get(id).len()];
        for k in 0..numeric.len() {
            let orig = store.get(id).data()[k];
            store.values_mut(id)[k] = orig + step;
            let up = f(&store);
            store.values_mut(id)[k] = orig - step;
            let down = f(&store);
            store.values_mut(id)[k] = orig;
            numeric[k] = (up - down) / (2.0 * step);
        }
        out.push((
            store.name(id).to_string(),
            relative_error(analytic[id].data(), &numeric),
        ));
    }
    out
}

/// Floor on the denominator so gradients that vanish analytically (and come
/// out as rounding noise numerically) do not divide by ~0.
pub const GRADIENT_SCALE_FLOOR: f64 = 1e-6;

/// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(GRADIENT_SCALE_FLOOR)
}

/// O(n²) pair counting.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Two-sided p-value of a paired permutation test on the AUC difference: each
/// resample swaps the two models' scores on a random subset of instances.
/// Scores are rank-transformed first so the swap compares like with like.
pub fn permutation_delong_p(
    a: &[f64],
    b: &[f64],
    labels: &[u8],
    resamples: usize,
    rng: &mut impl Rng,
) -> f64 {
    let ra = aim_core::metrics::midranks(a);
    let rb = aim_core::metrics::midranks(b);
    let observed = (brute_auc(&ra, labels) - brute_auc(&rb, labels)).abs();
    let mut extreme = 0usize;
    let mut xa = ra.clone();
    let mut xb = rb.clone();
    for _ in 0..resamples {
        for i in 0..a.len() {
            if rng.random::<bool>() {
                xa[i] = rb[i];
                xb[i] = ra[i];
            } else {
                xa[i] = ra[i];
                xb[i] = rb[i];
            }
        }
        let d = (brute_auc(&xa, labels) - brute_auc(&xb, labels)).abs();
        if d >= observed - 1e-12 {
            extreme += 1;
        }
    }
    extreme as f64 / resamples as f64
}

/// The combined loss written out term by term from its definition.
pub fn transcribed_loss(
    posts: &[&str],
    labels: &[u8],
    probs: &[f64],
    n_l: &HashMap<String, usize>,
    margin: f64,
) -> f64 {
    let distinct: BTreeSet<&str> = posts.iter().copied().collect();
    let mut bce = 0.0;
    for t in 0..probs.len() {
        let p = probs[t].clamp(1e-12, 1.0 - 1e-12);
        let y = labels[t] as f64;
        bce += (-(y * p.ln()) - (1.0 - y) * (1.0 - p).ln()) / n_l[posts[t]] as f64;
    }
    bce /= distinct.len() as f64;
    let mut mrl = 0.0;
    let mut count = 0.0;
    for i in 0..probs.len() {
        for j in 0..probs.len() {
            if labels[i] == 1 && labels[j] == 0 {
                count += 1.0;
                mrl += f64::max(0.0, probs[j] - probs[i] + margin);
            }
        }
    }
    bce + if count > 0.0 { mrl / count } else { 0.0 }
}

/// Pairs whose comment sentences echo OH sentences (Δ=1) or their negation
/// (Δ=0), plus a little noise.
pub fn planted_dataset(seed: u64, n: usize, d: usize) -> Vec<Instance> {
    let mut r = rng(seed);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
    labels.shuffle(&mut r);
    labels
        .into_iter()
        .enumerate()
        .map(|(t, label)| {
            let m_oh = 3;
            let m_c = 2;
            let oh = uniform_matrix(&mut r, m_oh, d, 1.0);
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let mut data = Vec::with_capacity(m_c * d);
            for _ in 0..m_c {
                let src = r.random_range(0..m_oh);
                for k in 0..d {
                    data.push(sign * oh.data()[src * d + k] + r.random_range(-0.1..0.1));
                }
            }
            Instance {
                post_id: format!("p{}", t / 2),
                comment_id: format!("c{t}"),
                label,
                oh,
                comment: Tensor::matrix(m_c, d, data).unwrap(),
                tfidf: None,
                word_overlap: None,
            }
        })
        .collect()
}

/// `docs` documents, each drawn from one of two disjoint vocabularies.
pub fn two_topic_corpus(
    seed: u64,
    docs: usize,
    len: usize,
) -> (Vec<Vec<String>>, Vec<String>, Vec<String>) {
    let mut r = rng(seed);
    let va: Vec<String> = (0..15).map(|i| format!("alpha{i}")).collect();
    let vb: Vec<String> = (0..15).map(|i| format!("beta{i}")).collect();
    let corpus = (0..docs)
        .map(|i| {
            let v = if i % 2 == 0 { &va } else { &vb };
            (0..len)
                .map(|_| v[r.random_range(0..v.len())].clone())
                .collect()
        })
        .collect();
    (corpus, va, vb)
}

pub fn model(cfg: AimConfig, seed: u64) -> AimModel {
    AimModel::init(cfg, seed).unwrap()
}

pub fn fixture_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn load_threads(rel: &str) -> Vec<aim_core::corpus::Thread> {
    let file = std::fs::File::open(fixture_path(rel)).unwrap();
    aim_core::corpus::read_threads(std::io::BufReader::new(file))
        .unwrap()
        .into_iter()
        .map(|t| t.unwrap())
        .collect()
}

/// Hand-traced reading order, labeled pairs and cut ancestor chains per fixture tree.
pub struct TreeExpectation {
    pub post: &'static str,
    pub sequence: &'static [&'static str],
    pub pairs: &'static [(&'static str, u8)],
    pub missing: &'static [&'static str],
}

pub const TREES: &[TreeExpectation] = &[
    TreeExpectation {
        post: "chain",
        sequence: &["c1", "o1"],
        pairs: &[("c1", 1)],
        missing: &[],
    },
    TreeExpectation {
        post: "siblings",
        sequence: &["c1", "o1", "c2", "o2"],
        pairs: &[("c1", 0), ("c2", 1)],
        missing: &[],
    },
    TreeExpectation {
        post: "consecutive",
        sequence: &["c1", "o1", "o2"],
        pairs: &[("c1", 0)],
        missing: &[],
    },
    TreeExpectation {
        post: "missing",
        sequence: &["c2", "o1"],
        pairs: &[("c2", 1)],
        missing: &["o1"],
    },
    TreeExpectation {
        post: "ohfirst",
        sequence: &["o1"],
        pairs: &[],
        missing: &[],
    },
    TreeExpectation {
        post: "multidelta",
        sequence: &["c1", "o1", "c2", "o2", "c3", "o3"],
        pairs: &[("c1", 1), ("c2", 1), ("c3", 0)],
        missing: &[],
    },
    TreeExpectation {
        post: "revisit",
        sequence: &["c1", "o1", "c2", "o2", "o3"],
        pairs: &[("c1", 0), ("c2", 0)],
        missing: &[],
    },
];

/// Rule fixture file and the report counter it must bump.
pub const RULES: &[(&str, &str)] = &[
    ("rules/r1_deltabot_empty.jsonl", "deltabot_empty"),
    ("rules/r2_deleted_comment.jsonl", "deleted_comments"),
    ("rules/r3_system_message.jsonl", "system_messages"),
    ("rules/r4_short_post.jsonl", "short_posts"),
    ("rules/r5_excluded_post.jsonl", "excluded_posts"),
];

pub fn rule_count(report: &aim_core::corpus::FilterReport, field: &str) -> usize {
    match field {
        "deltabot_empty" => report.deltabot_empty,
        "deleted_comments" => report.deleted_comments,
        "system_messages" => report.system_messages,
        "short_posts" => report.short_posts,
        "excluded_posts" => report.excluded_posts,
        _ => unreachable!("unknown rule field {field}"),
    }
}

/// Runs every tree and rule fixture; returns a description of each mismatch.
pub fn check_fixtures() -> Vec<String> {
    use aim_core::corpus::{filter_threads, label_pairs, linearize, CorpusConfig};
    let cfg = CorpusConfig::default();
    let mut problems = Vec::new();
    let (threads, _) = filter_threads(&load_threads("trees.jsonl"), &cfg);
    for exp in TREES {
        let Some(t) = threads.iter().find(|t| t.id == exp.post) else {
            problems.push(format!("{}: thread missing after filtering", exp.post));
            continue;
        };
        let lin = linearize(t);
        if lin.sequence != exp.sequence {
            problems.push(format!(
                "{}: sequence {:?}, expected {:?}",
                exp.post, lin.sequence, exp.sequence
            ));
        }
        if lin.missing_ancestors != exp.missing {
            problems.push(format!(
                "{}: gaps {:?}, expected {:?}",
                exp.post, lin.missing_ancestors, exp.missing
            ));
        }
        let (pairs, _) = label_pairs(t, &lin, &cfg);
        let got: Vec<(&str, u8)> = pairs
            .iter()
            .map(|p| (p.comment_id.as_str(), p.label))
            .collect();
        if got != exp.pairs {
            problems.push(format!(
                "{}: pairs {:?}, expected {:?}",
                exp.post, got, exp.pairs
            ));
        }
    }
    for (file, field) in RULES {
        let (_, report) = filter_threads(&load_threads(file), &cfg);
        if rule_count(&report, field) == 0 {
            problems.push(format!(
                "{file}: rule counter {field} did not fire ({report:?})"
            ));
        }
    }
    problems
}
