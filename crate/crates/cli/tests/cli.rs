use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use aim_core::corpus::{filter_threads, read_threads, CorpusConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tempfile::TempDir;

fn aim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aim"))
        .args(args)
        .output()
        .expect("spawn aim")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[track_caller]
fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[track_caller]
fn code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "stderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const TOPICS: [[&str; 8]; 3] = [
    [
        "transit", "bus", "subway", "fare", "commute", "station", "rail", "driver",
    ],
    [
        "vaccine", "doctor", "clinic", "dose", "patient", "nurse", "illness", "immunity",
    ],
    [
        "tax", "income", "wealth", "budget", "salary", "revenue", "audit", "wage",
    ],
];
const FILLER: [&str; 6] = ["people", "often", "think", "really", "about", "because"];

fn sentence(r: &mut ChaCha8Rng, topic: usize, signal: bool) -> String {
    let mut words: Vec<&str> = (0..6)
        .map(|i| {
            if i % 2 == 0 {
                TOPICS[topic][r.random_range(0..8)]
            } else {
                FILLER[r.random_range(0..6)]
            }
        })
        .collect();
    if signal {
        words.insert(r.random_range(0..words.len()), "evidence");
    }
    let mut s = words.join(" ");
    s.push('.');
    s
}

/// Threads whose challenger comments earn a delta when they mention "evidence".
fn corpus(n: usize, seed: u64) -> String {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    for t in 0..n {
        let topic = t % 3;
        let id = format!("p{t:03}");
        let body: Vec<String> = (0..4).map(|_| sentence(&mut r, topic, false)).collect();
        let mut comments = Vec::new();
        for c in 0..4 {
            let positive = r.random::<f64>() < 0.4;
            let text: Vec<String> = (0..3)
                .map(|k| {
                    let drift = usize::from(c == 0 && k == 2);
                    sentence(&mut r, (topic + drift) % 3, positive && k == 1)
                })
                .collect();
            let reply = if positive {
                "!delta you are right"
            } else {
                "I still disagree with that"
            };
            comments.push(json!({"id": format!("{id}c{c}"), "parent_id": format!("t3_{id}"), "author": format!("u{c}"),
                "body": text.join(" "), "created_utc": 10 * c + 1}));
            comments.push(json!({"id": format!("{id}o{c}"), "parent_id": format!("t1_{id}c{c}"), "author": "op",
                "body": reply, "created_utc": 10 * c + 2}));
        }
        let split = if t % 3 == 2 || t % 5 == 0 {
            "test"
        } else {
            "train"
        };
        lines.push(
            json!({"id": id, "title": format!("CMV: {}", sentence(&mut r, topic, false)), "selftext": body.join(" "),
                "author": "op", "split": split, "comments": comments})
            .to_string(),
        );
    }
    lines.join("\n") + "\n"
}

fn word_vectors() -> String {
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let mut words: Vec<&str> = TOPICS.iter().flatten().copied().collect();
    words.extend(FILLER);
    words.extend(["evidence", "cmv"]);
    let mut s = String::new();
    for w in words {
        let v: Vec<String> = (0..8)
            .map(|_| format!("{:.4}", r.random_range(-1.0..1.0)))
            .collect();
        s.push_str(&format!("{w} {}\n", v.join(" ")));
    }
    s
}

struct Pipeline {
    dir: TempDir,
}

impl Pipeline {
    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }
}

fn preprocess_topics_split(root: &Path) {
    let p = |x: &str| root.join(x);
    ok(&aim(&[
        "preprocess",
        "--input",
        s(&p("threads.jsonl")),
        "--out",
        s(&p("pre")),
    ]));
    ok(&aim(&[
        "topics",
        "--discussions",
        s(&p("pre/discussions.jsonl")),
        "--out",
        s(&p("topics")),
        "--topics",
        "3",
        "--iterations",
        "60",
        "--seed",
        "5",
        "--top-words",
        "12",
    ]));
    ok(&aim(&[
        "split",
        "--discussions",
        s(&p("pre/discussions.jsonl")),
        "--topics",
        s(&p("topics/topics.json")),
        "--pairs",
        s(&p("pre/pairs.jsonl")),
        "--out",
        s(&p("split")),
        "--training-topics",
        "2",
        "--val-fraction",
        "0.25",
        "--seed",
        "3",
    ]));
}

/// preprocess, topics, split, features and one model, built once for all tests.
fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::write(root.join("threads.jsonl"), corpus(60, 1)).unwrap();
        fs::write(root.join("vectors.txt"), word_vectors()).unwrap();
        preprocess_topics_split(root);
        let p = |x: &str| root.join(x);
        ok(&aim(&[
            "features",
            "--pairs",
            s(&p("pre/pairs.jsonl")),
            "--split",
            s(&p("split/split.json")),
            "--word-vectors",
            s(&p("vectors.txt")),
            "--out",
            s(&p("feat")),
            "--tfidf-features",
            "200",
        ]));
        ok(&aim_owned(&train_args(root, "model", "max,hsent")));
        Pipeline { dir }
    })
}

fn train_args(root: &Path, out: &str, inputs: &str) -> Vec<String> {
    [
        "train",
        "--features",
        s(&root.join("feat")),
        "--out",
        s(&root.join(out)),
        "--seed",
        "11",
        "--inputs",
        inputs,
        "--base-epochs",
        "2",
        "--extra-epochs",
        "0",
        "--learning-rate",
        "0.01",
    ]
    .iter()
    .map(|x| x.to_string())
    .collect()
}

fn aim_owned(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    aim(&refs)
}

fn report_value(report: &str, key: &str) -> usize {
    report
        .lines()
        .find_map(|l| {
            l.strip_prefix(key)
                .filter(|rest| rest.starts_with(' '))
                .map(|rest| rest.trim().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no {key} in report:\n{report}"))
}

#[test]
fn empty_input_warns_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    let out = aim(&[
        "preprocess",
        "--input",
        s(&input),
        "--out",
        s(&dir.path().join("o")),
    ]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(
        fs::read_to_string(dir.path().join("o/pairs.jsonl")).unwrap(),
        ""
    );
}

#[test]
fn malformed_thread_is_logged_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.jsonl");
    fs::write(
        &input,
        format!("{}{{\"id\": \"broken\", \"comments\": 5}}\n", corpus(2, 4)),
    )
    .unwrap();
    let out = aim(&[
        "preprocess",
        "--input",
        s(&input),
        "--out",
        s(&dir.path().join("o")),
    ]);
    code(&out, 2);
    let log = fs::read_to_string(dir.path().join("o/errors.log")).unwrap();
    assert!(log.contains("broken"), "{log}");
    let report = fs::read_to_string(dir.path().join("o/report.txt")).unwrap();
    assert_eq!(report_value(&report, "parse_failures"), 1);
    assert_eq!(report_value(&report, "threads_in"), 2);
}

#[test]
fn usage_errors_exit_one() {
    code(&aim(&["preprocess"]), 1);
    code(&aim(&["train", "--no-such-flag"]), 1);
    code(&aim(&["frobnicate"]), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[topics]\nsead = 3\n").unwrap();
    code(
        &aim(&[
            "--config",
            s(&cfg),
            "topics",
            "--discussions",
            "x",
            "--out",
            "y",
        ]),
        1,
    );
    ok(&aim(&["--help"]));
}

#[test]
fn exclusion_rule_counts_match_the_library() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/rules");
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(&fixtures).unwrap() {
        let path = entry.unwrap().path();
        let threads: Vec<_> = read_threads(std::io::BufReader::new(fs::File::open(&path).unwrap()))
            .unwrap()
            .into_iter()
            .map(Result::unwrap)
            .collect();
        let (_, want) = filter_threads(&threads, &CorpusConfig::default());
        let out = dir.path().join(path.file_stem().unwrap());
        ok(&aim(&["preprocess", "--input", s(&path), "--out", s(&out)]));
        let report = fs::read_to_string(out.join("report.txt")).unwrap();
        for (key, v) in [
            ("rule_deltabot_empty", want.deltabot_empty),
            ("rule_deleted_comments", want.deleted_comments),
            ("rule_system_messages", want.system_messages),
            ("rule_short_posts", want.short_posts),
            ("rule_excluded_posts", want.excluded_posts),
        ] {
            assert_eq!(report_value(&report, key), v, "{}: {key}", path.display());
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let p = pipeline();
    let again = tempfile::tempdir().unwrap();
    fs::copy(p.path("threads.jsonl"), again.path().join("threads.jsonl")).unwrap();
    preprocess_topics_split(again.path());
    for f in [
        "pre/pairs.jsonl",
        "pre/discussions.jsonl",
        "pre/report.txt",
        "topics/topics.json",
        "topics/summary.txt",
        "split/split.json",
        "split/stats.txt",
    ] {
        assert_eq!(
            fs::read(p.path(f)).unwrap(),
            fs::read(again.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn training_is_deterministic_and_echoes_its_config() {
    let p = pipeline();
    let root = p.dir.path();
    let mut args = train_args(root, "model-again", "max,hsent");
    args.insert(0, "--sequential".into());
    ok(&aim_owned(&args));
    for f in [
        "train_log.txt",
        "predictions.jsonl",
        "model.json",
        "model.ckpt",
    ] {
        assert_eq!(
            fs::read(p.path("model").join(f)).unwrap(),
            fs::read(p.path("model-again").join(f)).unwrap(),
            "{f}"
        );
    }
    let log = fs::read_to_string(p.path("model/train_log.txt")).unwrap();
    assert_eq!(
        log.lines().filter(|l| l.starts_with("epoch=")).count(),
        2,
        "{log}"
    );
    let run: Value =
        serde_json::from_str(&fs::read_to_string(p.path("model/run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "train");
    assert_eq!(run["config"]["model"]["hidden_dim"], 128);
    assert_eq!(run["config"]["inputs"], "max+hsent");
    assert_eq!(run["config"]["training"]["seed"], 11);
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let p = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[train]\nseed = 11\nbase-epochs = 2\nextra-epochs = 0\ninputs = [\"max\"]\nlearning-rate = 0.5\n")
        .unwrap();
    let out = dir.path().join("m");
    ok(&aim(&[
        "--config",
        s(&cfg),
        "train",
        "--features",
        s(&p.path("feat")),
        "--out",
        s(&out),
        "--learning-rate",
        "0.02",
    ]));
    let run: Value =
        serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["training"]["learning_rate"], 0.02);
    assert_eq!(run["config"]["training"]["base_epochs"], 2);
    assert_eq!(run["config"]["inputs"], "max");
}

#[test]
fn grid_flags_accept_exactly_the_allowed_values() {
    let p = pipeline();
    let root = p.dir.path();
    let quick = |extra: &[&str], inputs: &str| {
        let mut args = train_args(root, &format!("grid-{}", extra.join("-")), inputs);
        args.extend(extra.iter().map(|x| x.to_string()));
        aim_owned(&args)
    };
    for bad in [
        ["--hidden-dim", "100"],
        ["--hidden-dim", "64"],
        ["--head-dim", "48"],
        ["--tfidf-head-dim", "2"],
    ] {
        code(&quick(&bad, "max,hsent,tfidf"), 1);
    }
    code(&quick(&["--head-dim", "32"], "max"), 1);
    code(&quick(&["--interaction", "bilinear"], "max"), 1);
    ok(&quick(
        &[
            "--head-dim",
            "64",
            "--tfidf-head-dim",
            "3",
            "--interaction",
            "inner-product",
        ],
        "hsent,tfidf",
    ));
}

#[test]
fn baseline_eval_and_analysis_run_end_to_end() {
    let p = pipeline();
    let root = p.dir.path();
    let base = p.path("lr");
    ok(&aim(&[
        "baseline",
        "--features",
        s(&p.path("feat")),
        "--out",
        s(&base),
        "--inputs",
        "tfidf,wdo",
        "--penalty",
        "l2",
        "--strength",
        "1",
    ]));
    assert!(fs::read_to_string(base.join("ngrams.txt"))
        .unwrap()
        .contains("positive"));

    let model = format!("aim={}", s(&p.path("model")));
    let same = format!("copy={}", s(&p.path("model")));
    let lr = format!("lr={}", s(&base));
    let out = aim(&[
        "eval",
        "--model",
        &model,
        "--model",
        &same,
        "--model",
        &lr,
        "--out",
        s(&p.path("eval")),
    ]);
    ok(&out);
    let report = String::from_utf8(out.stdout).unwrap();
    let copy = report.lines().find(|l| l.starts_with("copy")).unwrap();
    let cols: Vec<&str> = copy.split_whitespace().collect();
    assert_eq!(&cols[cols.len() - 2..], ["1.0000", "1.0000"], "{report}");
    assert!(report.lines().next().unwrap().contains("p(CD)"));

    let att = p.path("att");
    ok(&aim(&[
        "inspect-attention",
        "--features",
        s(&p.path("feat")),
        "--model",
        s(&p.path("model")),
        "--out",
        s(&att),
        "--split",
        "all",
    ]));
    let diags = fs::read_to_string(att.join("diagnostics.jsonl")).unwrap();
    let first: Value = serde_json::from_str(diags.lines().next().unwrap()).unwrap();
    let weights: f64 = first["attention"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w.as_f64().unwrap())
        .sum();
    assert!((weights - 1.0).abs() < 1e-9);

    let out = aim(&["analyze", "--attention", s(&att), "--top-pairs", "5"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("skipped: no --annotations file"), "{text}");
    assert!(text.contains("# dimension 2"), "{text}");

    // Annotate the first two OH sentences for every comment of each exported post.
    let mut ann = String::new();
    for line in diags.lines() {
        let d: Value = serde_json::from_str(line).unwrap();
        ann.push_str(&format!("{} 0 1\n", d["comment_id"].as_str().unwrap()));
    }
    let ann_path = root.join("ann.txt");
    fs::write(&ann_path, ann).unwrap();
    let topics = p.path("topics/topics.json");
    let out = aim(&[
        "analyze",
        "--attention",
        s(&att),
        "--annotations",
        s(&ann_path),
        "--topics",
        s(&topics),
        "--out",
        s(&p.path("an")),
    ]);
    ok(&out);
    let text = fs::read_to_string(p.path("an/report.txt")).unwrap();
    assert!(text.contains("mean_attention_successful"), "{text}");
    assert!(!text.contains("skipped:"), "{text}");
    let dims = text
        .lines()
        .skip_while(|l| !l.starts_with("dimension"))
        .skip(1)
        .take(3);
    assert!(
        dims.clone().count() == 3 && dims.clone().all(|l| !l.ends_with("undefined")),
        "{text}"
    );
}

#[test]
fn eval_rejects_models_scored_on_different_pairs() {
    let p = pipeline();
    let dir = tempfile::tempdir().unwrap();
    let preds = fs::read_to_string(p.path("model/predictions.jsonl")).unwrap();
    let dropped = preds
        .lines()
        .position(|l| l.contains("\"test-in-domain\""))
        .unwrap();
    let kept: Vec<&str> = preds
        .lines()
        .enumerate()
        .filter(|(i, _)| *i != dropped)
        .map(|(_, l)| l)
        .collect();
    fs::write(dir.path().join("predictions.jsonl"), kept.join("\n")).unwrap();
    let full = format!("full={}", s(&p.path("model")));
    let partial = format!("partial={}", s(dir.path()));
    code(&aim(&["eval", "--model", &full, "--model", &partial]), 2);
}

#[test]
fn outputs_never_overwrite_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pairs.jsonl");
    let original = corpus(3, 8);
    fs::write(&input, &original).unwrap();
    code(
        &aim(&["preprocess", "--input", s(&input), "--out", s(dir.path())]),
        1,
    );
    assert_eq!(fs::read_to_string(&input).unwrap(), original);
}
