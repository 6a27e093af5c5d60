//! Config resolution, corpus loading and atomic output writing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use signalcast::nowcast::GroundTruthSeries;
use signalcast::text::{StopList, TextPipeline};
use signalcast::vsm::{read_posts_jsonl, IntervalLength, ScoreMatrix, TimeBinnedCorpus};

use crate::Common;

/// Defaults, then the config file, then flags (unset flags are skipped).
pub fn resolve<C: DeserializeOwned, F: Serialize>(common: &Common, flags: &F) -> Result<C> {
    let mut merged = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            match v {
                Value::Object(m) => m,
                _ => bail!("config {} must be a JSON object", p.display()),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(f) = serde_json::to_value(flags)? {
        for (k, v) in f {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    if let Some(seed) = common.seed {
        merged.insert("seed".into(), seed.into());
    }
    if let Some(out) = &common.out {
        merged.insert("out".into(), serde_json::to_value(out)?);
    }
    serde_json::from_value(Value::Object(merged)).context("invalid configuration")
}

pub fn default_out() -> PathBuf {
    PathBuf::from("out")
}

pub fn default_true() -> bool {
    true
}

pub fn required<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T> {
    v.as_ref()
        .with_context(|| format!("missing required setting `{key}` (flag or config key)"))
}

/// Files of one run, written only after everything has been computed.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.add(name, s.into_bytes());
        Ok(())
    }

    pub fn add_csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        self.add(name, w.into_inner().context("flushing CSV")?);
        Ok(())
    }

    /// Writes `run.json` plus every file, each through a temporary name.
    pub fn commit<C: Serialize>(mut self, command: &str, config: &C) -> Result<()> {
        self.add_json(
            "run.json",
            &serde_json::json!({ "command": command, "config": config }),
        )?;
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        for (name, bytes) in &self.files {
            let dst = self.dir.join(name);
            let tmp = self.dir.join(format!(".{name}.tmp"));
            fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
            fs::rename(&tmp, &dst).with_context(|| format!("renaming to {}", dst.display()))?;
        }
        Ok(())
    }
}

pub fn pipeline(stem: bool, stopwords: &Option<PathBuf>) -> Result<TextPipeline> {
    let stoplist = match stopwords {
        Some(p) => StopList::from_file(p)?,
        None => StopList::english(),
    };
    Ok(TextPipeline::new(stoplist, stem))
}

/// Reads posts and bins them over whole UTC days from the first post's
/// date through the last one's.
pub fn load_corpus(posts: &Path, pipeline: &TextPipeline, interval: &str) -> Result<TimeBinnedCorpus> {
    let interval: IntervalLength = interval.parse()?;
    let posts = read_posts_jsonl(posts, pipeline)?;
    let (Some(first), Some(last)) = (posts.iter().map(|p| p.time).min(), posts.iter().map(|p| p.time).max()) else {
        bail!("no posts in input");
    };
    let start = first.date_naive().and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let end = (last.date_naive() + chrono::Days::new(1)).and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let span = (end - start).num_seconds();
    let n = span.div_euclid(interval.secs()) + i64::from(span % interval.secs() != 0);
    let (corpus, dropped) = TimeBinnedCorpus::from_posts(posts, start, interval, n as usize)?;
    debug_assert_eq!(dropped, 0);
    Ok(corpus)
}

pub fn read_matrix(path: &Path, stemmed: bool) -> Result<ScoreMatrix> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ScoreMatrix::read_csv(f, stemmed).with_context(|| format!("reading score matrix {}", path.display()))
}

pub fn read_truth(path: &Path) -> Result<GroundTruthSeries> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    GroundTruthSeries::read_csv(f).with_context(|| format!("reading ground truth {}", path.display()))
}

/// Matrix with targets attached when a ground truth is given.
pub fn load_matrix(path: &Path, truth: Option<&GroundTruthSeries>, stemmed: bool) -> Result<ScoreMatrix> {
    let m = read_matrix(path, stemmed)?;
    match truth {
        Some(t) => {
            let y = t.align(&m)?;
            Ok(m.with_targets(y)?)
        }
        None => Ok(m),
    }
}

pub fn fmt(v: f64) -> String {
    v.to_string()
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}
