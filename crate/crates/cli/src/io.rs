//! File formats shared between subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aim_core::corpus::{
    embed_sentences, EmbeddedPair, EmbeddingSource, PairRecord, Partition, PrecomputedEmbeddings,
    SplitManifest, SplitName, Vocabulary, WordVectors,
};
use aim_core::features::TfidfModel;
use aim_core::Execution;
use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::usage;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let item =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Output directory that refuses to overwrite any of the command's inputs.
pub struct OutDir {
    dir: PathBuf,
    inputs: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(dir: &Path, inputs: &[&Path]) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let inputs = inputs
            .iter()
            .filter_map(|p| fs::canonicalize(p).ok())
            .collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            inputs,
        })
    }

    pub fn path(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Ok(c) = fs::canonicalize(&p) {
            if self.inputs.contains(&c) {
                return Err(usage(format!(
                    "output {} would overwrite an input file",
                    p.display()
                )));
            }
        }
        Ok(p)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name)?;
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    pub fn write_jsonl<'a, T: Serialize + 'a>(
        &self,
        name: &str,
        items: impl IntoIterator<Item = &'a T>,
    ) -> Result<()> {
        let p = self.path(name)?;
        let file = fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?;
        let mut w = BufWriter::new(file);
        for item in items {
            serde_json::to_writer(&mut w, item)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn file(&self, name: &str) -> Result<PathBuf> {
        self.path(name)
    }
}

/// Effective configuration echoed next to every output.
#[derive(Serialize, Deserialize)]
pub struct RunRecord<T> {
    pub command: String,
    pub version: String,
    pub config: T,
}

pub fn run_record<T: Serialize>(out: &OutDir, command: &str, config: &T) -> Result<()> {
    out.write_json(
        "run.json",
        &RunRecord {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
        },
    )
}

/// One discussion as written by `preprocess`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscussionRecord {
    pub post_id: String,
    pub partition: Partition,
    pub delta_ratio: f64,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopicsFile {
    pub topics: usize,
    pub top_words: Vec<Vec<String>>,
    pub assignments: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub pair_id: String,
    pub post_id: String,
    pub comment_id: String,
    pub split: SplitName,
    pub label: u8,
    pub probability: f64,
}

pub const FEATURES_FILE: &str = "features.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TFIDF_FILE: &str = "tfidf.txt";

/// Inputs recorded by `features`; later commands re-embed from these.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub pairs: PathBuf,
    pub split: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    pub dim: usize,
}

pub enum LoadedSource {
    Precomputed(PrecomputedEmbeddings),
    WordVectors(WordVectors),
}

impl LoadedSource {
    pub fn load(embeddings: Option<&Path>, word_vectors: Option<&Path>) -> Result<Self> {
        match (embeddings, word_vectors) {
            (Some(p), None) => Ok(Self::Precomputed(PrecomputedEmbeddings::from_text(
                &read_text(p)?,
            )?)),
            (None, Some(p)) => Ok(Self::WordVectors(WordVectors::from_text(&read_text(p)?)?)),
            _ => Err(usage("give exactly one of --embeddings and --word-vectors")),
        }
    }

    pub fn source(&self) -> EmbeddingSource<'_> {
        match self {
            Self::Precomputed(p) => EmbeddingSource::Precomputed(p),
            Self::WordVectors(w) => EmbeddingSource::WordVectors(w),
        }
    }
}

/// Embedded pairs of every used split plus the fitted text features.
pub struct Dataset {
    pub pairs: Vec<EmbeddedPair>,
    pub splits: Vec<SplitName>,
    pub tfidf: TfidfModel,
    pub vocab: Vocabulary,
}

impl Dataset {
    pub fn load(dir: &Path, exec: Execution) -> Result<Self> {
        let manifest: FeatureManifest = read_json(&dir.join(FEATURES_FILE))?;
        let split: SplitManifest = read_json(&manifest.split)?;
        let records: Vec<PairRecord> = read_jsonl(&manifest.pairs)?;
        let lookup = split.lookup();
        let mut kept = Vec::new();
        let mut splits = Vec::new();
        for r in records {
            match lookup.get(r.post_id.as_str()) {
                Some(SplitName::Unused) | None => {}
                Some(&s) => {
                    splits.push(s);
                    kept.push(r);
                }
            }
        }
        let source = LoadedSource::load(
            manifest.embeddings.as_deref(),
            manifest.word_vectors.as_deref(),
        )?;
        if source.source().dim() != manifest.dim {
            bail!(aim_core::Error::Data(format!(
                "embedding source has dimension {}, features were built with {}",
                source.source().dim(),
                manifest.dim
            )));
        }
        let pairs = embed_sentences(&kept, &source.source(), exec)?;
        let tfidf = TfidfModel::from_text(&read_text(&dir.join(TFIDF_FILE))?)?;
        let vocab = Vocabulary::from_text(&read_text(&dir.join(VOCAB_FILE))?)?;
        Ok(Self {
            pairs,
            splits,
            tfidf,
            vocab,
        })
    }

    pub fn indices(&self, split: SplitName) -> Vec<usize> {
        (0..self.pairs.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }
}

pub fn parse_split(s: &str) -> Result<Option<SplitName>> {
    Ok(Some(match s {
        "all" => return Ok(None),
        "train" => SplitName::Train,
        "validation" => SplitName::Validation,
        "test-in-domain" => SplitName::TestInDomain,
        "test-cross-domain" => SplitName::TestCrossDomain,
        other => return Err(usage(format!("unknown split {other:?}"))),
    }))
}

pub const EVAL_SPLITS: [SplitName; 3] = [
    SplitName::Validation,
    SplitName::TestInDomain,
    SplitName::TestCrossDomain,
];
