use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use signalcast::mood::{
    autocorrelation, circadian_aggregate, daily_patterns, mfms, msfms, na_minus_pa, periodicity_pvalue,
    stability_pvalue, MoodLexicon, Scheme,
};
use signalcast::rng::sub_seed;
use signalcast::stats::{mean, sample_std, Z975};
use signalcast::Error;

use crate::common::{default_out, default_true, fmt, load_corpus, pipeline, required, resolve, Outputs};
use crate::Common;

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown scheme {s:?} (mfms, msfms)"))
}

#[derive(Args, Serialize)]
pub struct MoodArgs {
    #[arg(long)]
    posts: Option<PathBuf>,
    /// Lexicon file, one stem per line; named after the file (repeatable).
    #[arg(long = "lexicon")]
    lexicons: Option<Vec<PathBuf>>,
    /// mfms or msfms.
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    #[arg(long)]
    interval: Option<String>,
    #[arg(long)]
    permutations: Option<usize>,
    /// Lags tested for periodicity (repeatable).
    #[arg(long = "lag")]
    lags: Option<Vec<usize>>,
    #[arg(long)]
    stem: Option<bool>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoodConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub posts: Option<PathBuf>,
    pub lexicons: Vec<PathBuf>,
    pub scheme: Scheme,
    pub interval: String,
    pub permutations: usize,
    pub lags: Vec<usize>,
    pub stem: bool,
    pub stopwords: Option<PathBuf>,
}

impl Default for MoodConfig {
    fn default() -> Self {
        MoodConfig {
            seed: 0,
            out: default_out(),
            posts: None,
            lexicons: Vec::new(),
            scheme: Scheme::Msfms,
            interval: "1h".into(),
            permutations: 1000,
            lags: vec![24],
            stem: default_true(),
            stopwords: None,
        }
    }
}

/// p-value, or `None` when the test is undefined for this series.
fn soft<T>(r: signalcast::Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(msg)) => {
            log::warn!("test skipped: {msg}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct LexiconTests {
    stability_p: Option<f64>,
    periodicity_p: BTreeMap<usize, Option<f64>>,
}

pub fn run(common: &Common, args: MoodArgs) -> Result<()> {
    let cfg: MoodConfig = resolve(common, &args)?;
    if cfg.lexicons.is_empty() {
        bail!("no lexicons given");
    }
    let pipe = pipeline(cfg.stem, &cfg.stopwords)?;
    let corpus = load_corpus(required(&cfg.posts, "posts")?, &pipe, &cfg.interval)?;
    let lexicons = cfg
        .lexicons
        .iter()
        .map(MoodLexicon::from_file)
        .collect::<signalcast::Result<Vec<_>>>()?;
    let mut names: Vec<&str> = lexicons.iter().map(|l| l.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        bail!("lexicon names must be distinct");
    }
    let series: Vec<Vec<f64>> = lexicons
        .iter()
        .map(|l| match cfg.scheme {
            Scheme::Mfms => mfms(&corpus, l),
            Scheme::Msfms => msfms(&corpus, l),
        })
        .map(|r| r.map(|s| s.values))
        .collect::<signalcast::Result<_>>()?;

    let find = |n: &str| lexicons.iter().position(|l| l.name == n);
    let napa = match (find("anger"), find("fear"), find("sadness"), find("joy")) {
        (Some(a), Some(f), Some(s), Some(j)) => Some(na_minus_pa(&series[a], &series[f], &series[s], &series[j])?),
        _ => None,
    };

    let mut out = Outputs::new(&cfg.out);
    let mut header: Vec<&str> = vec!["interval"];
    header.extend(lexicons.iter().map(|l| l.name.as_str()));
    if napa.is_some() {
        header.push("na_minus_pa");
    }
    out.add_csv(
        "series.csv",
        &header,
        (0..corpus.n_intervals())
            .map(|i| {
                let mut row = vec![corpus.interval_id(i)];
                row.extend(series.iter().map(|s| fmt(s[i])));
                if let Some(v) = &napa {
                    row.push(fmt(v[i]));
                }
                row
            })
            .collect(),
    )?;

    let secs = corpus.interval().secs();
    let per_day = if 86_400 % secs == 0 { Some((86_400 / secs) as usize) } else { None };
    let mut daily_rows = Vec::new();
    let mut circ_rows = Vec::new();
    let mut acf_rows = Vec::new();
    let mut tests = BTreeMap::new();
    for (k, (lex, s)) in lexicons.iter().zip(&series).enumerate() {
        let seed = sub_seed(cfg.seed, k as u64);
        if let Some(pd) = per_day {
            for (d, day) in daily_patterns(s, pd).iter().enumerate() {
                let m = mean(day);
                let half = if pd > 1 { Z975 * sample_std(day) / (pd as f64).sqrt() } else { 0.0 };
                daily_rows.push(vec![
                    lex.name.clone(),
                    corpus.interval_date(d * pd).to_string(),
                    fmt(m),
                    fmt(m - half),
                    fmt(m + half),
                ]);
            }
        }
        let mut stability_p = None;
        if per_day == Some(24) {
            let circ = circadian_aggregate(s)?;
            for (h, c) in circ.iter().enumerate() {
                circ_rows.push(vec![lex.name.clone(), h.to_string(), fmt(c.mean), fmt(c.low), fmt(c.high)]);
            }
            let avg: Vec<f64> = circ.iter().map(|c| c.mean).collect();
            stability_p = soft(stability_pvalue(&avg, &daily_patterns(s, 24), cfg.permutations, sub_seed(seed, 0)))?;
        }
        let usable: Vec<usize> = cfg.lags.iter().copied().filter(|&l| l > 0 && l < s.len()).collect();
        let mut periodicity_p = BTreeMap::new();
        if !usable.is_empty() {
            if let Some(acf) = soft(autocorrelation(s, *usable.iter().max().expect("non-empty")))? {
                for (l, v) in acf.values.iter().enumerate() {
                    acf_rows.push(vec![lex.name.clone(), (l + 1).to_string(), fmt(*v), fmt(acf.bound)]);
                }
            }
            let ps = soft(periodicity_pvalue(s, &usable, cfg.permutations, sub_seed(seed, 1)))?;
            for (i, &l) in usable.iter().enumerate() {
                periodicity_p.insert(l, ps.as_ref().map(|p| p[i]));
            }
        }
        tests.insert(lex.name.clone(), LexiconTests { stability_p, periodicity_p });
    }
    if per_day.is_some() {
        out.add_csv("daily.csv", &["lexicon", "date", "mean", "ci_low", "ci_high"], daily_rows)?;
    }
    if per_day == Some(24) {
        out.add_csv("circadian.csv", &["lexicon", "hour", "mean", "ci_low", "ci_high"], circ_rows)?;
    }
    out.add_csv("acf.csv", &["lexicon", "lag", "acf", "bound"], acf_rows)?;
    out.add_json("pvalues.json", &tests)?;
    out.commit("mood", &cfg)
}
