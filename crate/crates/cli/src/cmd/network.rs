use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use signalcast::geonet::{
    average_similarity, build_network, hourly_volume_pattern, impact_scores, similarity_score, stability_pvalue,
    Coordinates, DayFilter, SimilarityNetwork,
};
use signalcast::rng::sub_seed;
use signalcast::vsm::TimeBinnedCorpus;

use crate::common::{default_out, default_true, fmt, load_corpus, pipeline, required, resolve, Outputs};
use crate::Common;

#[derive(Args, Serialize)]
pub struct NetworkArgs {
    #[arg(long)]
    posts: Option<PathBuf>,
    /// Document interval such as 1d.
    #[arg(long)]
    interval: Option<String>,
    /// Pairs closer than this are ignored.
    #[arg(long)]
    min_distance_km: Option<f64>,
    /// Number of edges kept.
    #[arg(long)]
    alpha: Option<usize>,
    /// Random edge swaps per stability test.
    #[arg(long)]
    swaps: Option<usize>,
    /// Build one network per window of this many days and compare neighbours.
    #[arg(long)]
    window_days: Option<usize>,
    /// CSV with columns location, lat, lon; post centroids otherwise.
    #[arg(long)]
    coordinates: Option<PathBuf>,
    #[arg(long)]
    stem: Option<bool>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub posts: Option<PathBuf>,
    pub interval: String,
    pub min_distance_km: f64,
    pub alpha: usize,
    pub swaps: usize,
    pub window_days: Option<usize>,
    pub coordinates: Option<PathBuf>,
    pub stem: bool,
    pub stopwords: Option<PathBuf>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            seed: 0,
            out: default_out(),
            posts: None,
            interval: "1d".into(),
            min_distance_km: 20.0,
            alpha: 100,
            swaps: 1000,
            window_days: None,
            coordinates: None,
            stem: default_true(),
            stopwords: None,
        }
    }
}

#[derive(Deserialize)]
struct CoordRow {
    location: String,
    lat: f64,
    lon: f64,
}

fn read_coordinates(path: &PathBuf) -> Result<Coordinates> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Coordinates::new();
    for row in r.deserialize() {
        let row: CoordRow = row?;
        out.insert(row.location, (row.lat, row.lon));
    }
    Ok(out)
}

fn network_for(corpus: &TimeBinnedCorpus, coords: &Coordinates, cfg: &NetworkConfig) -> Result<(Vec<signalcast::geonet::LocationPairStats>, SimilarityNetwork)> {
    let stats = average_similarity(corpus, coords, cfg.min_distance_km)?;
    if stats.is_empty() {
        bail!("no location pair survives the {} km distance filter", cfg.min_distance_km);
    }
    let is = impact_scores(&stats)?;
    let net = build_network(&stats, &is, cfg.alpha)?;
    Ok((stats, net))
}

#[derive(Serialize)]
struct WindowTest {
    window: usize,
    start: String,
    end: String,
    ss: f64,
    jd: f64,
    p_value: f64,
}

pub fn run_network(common: &Common, args: NetworkArgs) -> Result<()> {
    let cfg: NetworkConfig = resolve(common, &args)?;
    let pipe = pipeline(cfg.stem, &cfg.stopwords)?;
    let corpus = load_corpus(required(&cfg.posts, "posts")?, &pipe, &cfg.interval)?;
    let coords = match &cfg.coordinates {
        Some(p) => read_coordinates(p)?,
        None => corpus.location_centroids(),
    };
    let (stats, net) = network_for(&corpus, &coords, &cfg)?;

    let mut out = Outputs::new(&cfg.out);
    out.add_csv(
        "pairs.csv",
        &["a", "b", "distance_km", "avg_similarity"],
        stats
            .iter()
            .map(|s| vec![s.a.clone(), s.b.clone(), fmt(s.distance_km), fmt(s.average_similarity)])
            .collect(),
    )?;
    out.add_csv(
        "nodes.csv",
        &["location", "impact_score"],
        net.nodes.iter().map(|(n, v)| vec![n.clone(), fmt(*v)]).collect(),
    )?;
    out.add_csv(
        "edges.csv",
        &["src", "dst", "avg_similarity"],
        net.edges
            .iter()
            .map(|e| vec![e.src.clone(), e.dst.clone(), fmt(e.avg_similarity)])
            .collect(),
    )?;

    let mut tests = Vec::new();
    if let Some(days) = cfg.window_days {
        if days == 0 {
            bail!("window_days must be positive");
        }
        let secs = corpus.interval().secs();
        let per_window = ((days as i64 * 86_400) / secs).max(1) as usize;
        let n_windows = corpus.n_intervals() / per_window;
        if n_windows < 2 {
            bail!("need at least two whole windows of {days} days");
        }
        let mut nets = Vec::with_capacity(n_windows);
        for w in 0..n_windows {
            let posts: Vec<_> = (w * per_window..(w + 1) * per_window)
                .flat_map(|i| corpus.interval_posts(i).cloned().collect::<Vec<_>>())
                .collect();
            let (sub, _) = TimeBinnedCorpus::from_posts(posts, corpus.interval_start(w * per_window), corpus.interval(), per_window)?;
            nets.push(network_for(&sub, &coords, &cfg)?.1);
        }
        for w in 0..n_windows - 1 {
            let ss = similarity_score(&nets[w], &nets[w + 1]);
            tests.push(WindowTest {
                window: w,
                start: corpus.interval_id(w * per_window),
                end: corpus.interval_id((w + 1) * per_window),
                ss,
                jd: 1.0 - ss,
                p_value: stability_pvalue(&nets[w], &nets[w + 1], cfg.swaps, sub_seed(cfg.seed, w as u64))?,
            });
        }
        out.add_csv(
            "ss.csv",
            &["window", "start", "next_start", "ss", "jd", "p_value"],
            tests
                .iter()
                .map(|t| vec![t.window.to_string(), t.start.clone(), t.end.clone(), fmt(t.ss), fmt(t.jd), fmt(t.p_value)])
                .collect(),
        )?;
    }
    out.add_json("pvalues.json", &serde_json::json!({ "windows": tests }))?;
    out.commit("network", &cfg)
}

fn parse_filter(s: &str) -> Result<DayFilter, String> {
    s.parse().map_err(|e: signalcast::Error| e.to_string())
}

#[derive(Args, Serialize)]
pub struct PostingArgs {
    #[arg(long)]
    posts: Option<PathBuf>,
    /// all, weekday or weekend.
    #[arg(long, value_parser = parse_filter)]
    filter: Option<DayFilter>,
    #[arg(long)]
    permutations: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostingConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub posts: Option<PathBuf>,
    pub filter: DayFilter,
    pub permutations: usize,
}

impl Default for PostingConfig {
    fn default() -> Self {
        PostingConfig {
            seed: 0,
            out: default_out(),
            posts: None,
            filter: DayFilter::All,
            permutations: 1000,
        }
    }
}

pub fn run_posting(common: &Common, args: PostingArgs) -> Result<()> {
    let cfg: PostingConfig = resolve(common, &args)?;
    // Tokens are not used; skip stemming.
    let pipe = pipeline(false, &None)?;
    let corpus = load_corpus(required(&cfg.posts, "posts")?, &pipe, "1h")?;
    let pattern = hourly_volume_pattern(&corpus, cfg.filter, cfg.permutations, cfg.seed)?;
    let mut out = Outputs::new(&cfg.out);
    out.add_csv(
        "posting.csv",
        &["hour", "share"],
        pattern.shares.iter().enumerate().map(|(h, s)| vec![h.to_string(), fmt(*s)]).collect(),
    )?;
    let mut header = vec!["date".to_string()];
    header.extend((0..24).map(|h| format!("h{h:02}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.add_csv(
        "posting_daily.csv",
        &header,
        pattern
            .days
            .iter()
            .map(|(d, v)| std::iter::once(d.to_string()).chain(v.iter().map(|x| fmt(*x))).collect())
            .collect(),
    )?;
    out.add_json(
        "pvalues.json",
        &serde_json::json!({ "days": pattern.days.len(), "p_value": pattern.p_value }),
    )?;
    out.commit("posting", &cfg)
}
