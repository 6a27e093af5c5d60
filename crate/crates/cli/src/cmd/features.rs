use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use signalcast::text::{build_candidate_vocabulary, corpus_ngram_counts, FeatureClass, FeatureVocabulary, NGram};
use signalcast::vsm::{build_pooled_score_matrix, build_score_matrix};

use crate::common::{default_out, default_true, load_corpus, pipeline, required, resolve, Outputs};
use crate::Common;

#[derive(Args, Serialize)]
pub struct FeaturesArgs {
    /// Posts JSONL.
    #[arg(long)]
    posts: Option<PathBuf>,
    /// Reference documents, one per line; without it every corpus n-gram is a candidate.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// 1 or 2.
    #[arg(long)]
    ngram: Option<usize>,
    /// Keep candidates occurring more than this many times.
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    stem: Option<bool>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub posts: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub ngram: usize,
    pub min_count: usize,
    pub stem: bool,
    pub stopwords: Option<PathBuf>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            seed: 0,
            out: default_out(),
            posts: None,
            reference: None,
            ngram: 1,
            min_count: 0,
            stem: default_true(),
            stopwords: None,
        }
    }
}

pub fn run_features(common: &Common, args: FeaturesArgs) -> Result<()> {
    let cfg: FeaturesConfig = resolve(common, &args)?;
    let pipe = pipeline(cfg.stem, &cfg.stopwords)?;
    let corpus = load_corpus(required(&cfg.posts, "posts")?, &pipe, "1d")?;
    let vocab = match &cfg.reference {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let docs: Vec<String> = text.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect();
            build_candidate_vocabulary(&docs, &pipe, &corpus, cfg.ngram, cfg.min_count)?
        }
        None => {
            let counts = corpus_ngram_counts(&corpus, cfg.ngram)?;
            let mut kept: Vec<NGram> = counts
                .into_iter()
                .filter(|(_, c)| *c > cfg.min_count)
                .map(|(t, _)| NGram::new(t))
                .collect::<std::result::Result<_, _>>()?;
            kept.sort();
            if kept.is_empty() {
                bail!("empty vocabulary: no n-gram occurs more than {} times", cfg.min_count);
            }
            FeatureVocabulary::new(kept, FeatureClass::for_arity(cfg.ngram)?, cfg.stem)?
        }
    };
    let mut out = Outputs::new(&cfg.out);
    out.add("vocabulary.txt", vocab.to_lines().into_bytes());
    out.commit("features", &cfg)
}

#[derive(Args, Serialize)]
pub struct ScoreMatrixArgs {
    #[arg(long)]
    posts: Option<PathBuf>,
    /// Vocabulary file, one n-gram per line.
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    /// Interval length such as 1d or 1h.
    #[arg(long)]
    interval: Option<String>,
    /// Count each post at most once per n-gram.
    #[arg(long)]
    boolean: Option<bool>,
    /// One row per interval with all locations merged.
    #[arg(long)]
    pooled: Option<bool>,
    /// Restrict to these locations (repeatable).
    #[arg(long = "location")]
    locations: Option<Vec<String>>,
    #[arg(long)]
    stem: Option<bool>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreMatrixConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub posts: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub interval: String,
    pub boolean: bool,
    pub pooled: bool,
    pub locations: Option<Vec<String>>,
    pub stem: bool,
    pub stopwords: Option<PathBuf>,
}

impl Default for ScoreMatrixConfig {
    fn default() -> Self {
        ScoreMatrixConfig {
            seed: 0,
            out: default_out(),
            posts: None,
            vocabulary: None,
            interval: "1d".into(),
            boolean: true,
            pooled: false,
            locations: None,
            stem: default_true(),
            stopwords: None,
        }
    }
}

pub fn run_score_matrix(common: &Common, args: ScoreMatrixArgs) -> Result<()> {
    let cfg: ScoreMatrixConfig = resolve(common, &args)?;
    let pipe = pipeline(cfg.stem, &cfg.stopwords)?;
    let vocab_path = required(&cfg.vocabulary, "vocabulary")?;
    let text = std::fs::read_to_string(vocab_path).with_context(|| format!("reading {}", vocab_path.display()))?;
    if text.trim().is_empty() {
        bail!("empty vocabulary in {}", vocab_path.display());
    }
    let vocab = FeatureVocabulary::read(vocab_path, cfg.stem)?;
    let corpus = load_corpus(required(&cfg.posts, "posts")?, &pipe, &cfg.interval)?;
    let m = if cfg.pooled {
        if cfg.locations.is_some() {
            bail!("`locations` cannot be combined with `pooled`");
        }
        build_pooled_score_matrix(&vocab, &corpus, cfg.boolean)?
    } else {
        build_score_matrix(&vocab, &corpus, cfg.locations.as_deref(), cfg.boolean)?
    };
    let mut bytes = Vec::new();
    m.write_csv(&mut bytes)?;
    let mut out = Outputs::new(&cfg.out);
    out.add("scores.csv", bytes);
    out.commit("score-matrix", &cfg)
}
