//! Content-similarity networks between locations and posting-time patterns.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{Datelike, NaiveDate, Timelike, Weekday};
use log::warn;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mood;
use crate::rng;
use crate::text::{FeatureClass, FeatureVocabulary, NGram};
use crate::vsm::{tf_idf, TimeBinnedCorpus};

/// Cosine of the angle between two vectors; 0 when either is all zeros.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} components", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPairStats {
    /// Lexicographically smaller location.
    pub a: String,
    pub b: String,
    pub distance_km: f64,
    /// Cosine per interval; `None` where either location had no posts.
    pub per_interval: Vec<Option<f64>>,
    pub average_similarity: f64,
}

pub type Coordinates = BTreeMap<String, (f64, f64)>;

/// Mean over intervals of the cosine similarity between the TF-IDF
/// documents of each location pair. A document is all posts of one
/// location in one interval; IDF runs over every such document. Pairs
/// closer than `min_distance_km` are left out.
pub fn average_similarity(
    corpus: &TimeBinnedCorpus,
    coords: &Coordinates,
    min_distance_km: f64,
) -> Result<Vec<LocationPairStats>> {
    let locs = corpus.locations();
    if locs.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 locations".into()));
    }
    for l in locs {
        if !coords.contains_key(l) {
            return Err(Error::Input(format!("no coordinates for location {l}")));
        }
    }
    let t = corpus.n_intervals();
    let mut docs = Vec::with_capacity(locs.len() * t);
    let mut has_posts = Vec::with_capacity(locs.len() * t);
    let mut terms = BTreeSet::new();
    for l in 0..locs.len() {
        for i in 0..t {
            let bin = corpus.bin(l, i);
            let doc: Vec<String> = bin.iter().flat_map(|p| p.tokens.iter().cloned()).collect();
            terms.extend(doc.iter().cloned());
            docs.push(doc);
            has_posts.push(!bin.is_empty());
        }
    }
    let vocab = FeatureVocabulary::new(
        terms.into_iter().map(NGram::unigram).collect(),
        FeatureClass::U,
        true,
    )?;
    let w = tf_idf(&docs, &vocab)?;
    let column = |l: usize, i: usize| -> Vec<f64> { w.column(l * t + i).iter().copied().collect() };

    let mut out = Vec::new();
    for a in 0..locs.len() {
        for b in a + 1..locs.len() {
            let (la, oa) = coords[&locs[a]];
            let (lb, ob) = coords[&locs[b]];
            let distance_km = haversine_km(la, oa, lb, ob);
            if distance_km < min_distance_km {
                continue;
            }
            let per_interval: Vec<Option<f64>> = (0..t)
                .map(|i| {
                    if has_posts[a * t + i] && has_posts[b * t + i] {
                        cosine_similarity(&column(a, i), &column(b, i)).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<_>>()?;
            let vals: Vec<f64> = per_interval.iter().flatten().copied().collect();
            if vals.is_empty() {
                warn!("{} and {} never post in the same interval; pair skipped", locs[a], locs[b]);
                continue;
            }
            if vals.len() < t {
                warn!("{} - {}: {} interval(s) skipped", locs[a], locs[b], t - vals.len());
            }
            out.push(LocationPairStats {
                a: locs[a].clone(),
                b: locs[b].clone(),
                distance_km,
                average_similarity: vals.iter().sum::<f64>() / vals.len() as f64,
                per_interval,
            });
        }
    }
    Ok(out)
}

/// Mean average similarity over the pairs that include `location`.
pub fn impact_score(location: &str, stats: &[LocationPairStats]) -> Result<f64> {
    let v: Vec<f64> = stats
        .iter()
        .filter(|s| s.a == location || s.b == location)
        .map(|s| s.average_similarity)
        .collect();
    if v.is_empty() {
        return Err(Error::UndefinedScore(format!("{location} is in no surviving pair")));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Impact score of every location appearing in `stats`.
pub fn impact_scores(stats: &[LocationPairStats]) -> Result<BTreeMap<String, f64>> {
    let names: BTreeSet<&str> = stats.iter().flat_map(|s| [s.a.as_str(), s.b.as_str()]).collect();
    names
        .into_iter()
        .map(|n| impact_score(n, stats).map(|v| (n.to_string(), v)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub avg_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityNetwork {
    pub nodes: BTreeMap<String, f64>,
    pub edges: Vec<Edge>,
    pub alpha: usize,
}

impl SimilarityNetwork {
    pub fn edge_set(&self) -> HashSet<(&str, &str)> {
        self.edges.iter().map(|e| (e.src.as_str(), e.dst.as_str())).collect()
    }

    /// (out-degree, in-degree) per node name.
    pub fn degrees(&self) -> BTreeMap<String, (usize, usize)> {
        let mut d: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for e in &self.edges {
            d.entry(e.src.clone()).or_default().0 += 1;
            d.entry(e.dst.clone()).or_default().1 += 1;
        }
        d
    }
}

/// Top-`alpha` pairs by average similarity (ties in pair-name order), each
/// directed from the higher to the lower impact score; equal scores point
/// toward the lexicographically larger name.
pub fn build_network(
    stats: &[LocationPairStats],
    impact: &BTreeMap<String, f64>,
    alpha: usize,
) -> Result<SimilarityNetwork> {
    if alpha > stats.len() {
        warn!("alpha {alpha} exceeds the {} available pairs; using all", stats.len());
    }
    let mut ranked: Vec<&LocationPairStats> = stats.iter().collect();
    ranked.sort_by(|x, y| {
        y.average_similarity
            .total_cmp(&x.average_similarity)
            .then_with(|| (&x.a, &x.b).cmp(&(&y.a, &y.b)))
    });
    let score = |n: &str| {
        impact
            .get(n)
            .copied()
            .ok_or_else(|| Error::Input(format!("no impact score for {n}")))
    };
    let edges = ranked
        .into_iter()
        .take(alpha)
        .map(|s| {
            let (ia, ib) = (score(&s.a)?, score(&s.b)?);
            let (src, dst) = if ia > ib || (ia == ib && s.a < s.b) {
                (&s.a, &s.b)
            } else {
                (&s.b, &s.a)
            };
            Ok(Edge {
                src: src.clone(),
                dst: dst.clone(),
                avg_similarity: s.average_similarity,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SimilarityNetwork {
        nodes: impact.clone(),
        edges,
        alpha,
    })
}

/// Jaccard overlap of the directed edge sets; 1 when both are empty.
pub fn similarity_score(a: &SimilarityNetwork, b: &SimilarityNetwork) -> f64 {
    let (ea, eb) = (a.edge_set(), b.edge_set());
    let union = ea.union(&eb).count();
    if union == 0 {
        warn!("similarity of two empty networks taken as 1");
        return 1.0;
    }
    ea.intersection(&eb).count() as f64 / union as f64
}

/// Attempts allowed per swap before giving up.
pub const SWAP_RETRIES: usize = 100;

/// One degree-preserving swap: edges v->x and y->z become v->z and y->x.
/// Candidates creating a self-loop or a duplicate edge are redrawn, up to
/// [`SWAP_RETRIES`] times. Returns whether a swap happened.
pub fn edge_swap(net: &mut SimilarityNetwork, rng: &mut rng::Rng) -> bool {
    let m = net.edges.len();
    if m < 2 {
        return false;
    }
    for _ in 0..SWAP_RETRIES {
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        let (v, x) = (&net.edges[i].src, &net.edges[i].dst);
        let (y, z) = (&net.edges[j].src, &net.edges[j].dst);
        if v == z || y == x {
            continue;
        }
        let exists = |s: &str, d: &str| net.edges.iter().any(|e| e.src == s && e.dst == d);
        if exists(v, z) || exists(y, x) {
            continue;
        }
        let (x, z) = (x.clone(), z.clone());
        net.edges[i].dst = z;
        net.edges[j].dst = x;
        return true;
    }
    false
}

/// Fraction of `n_swaps` successive random swaps of `t1` after which its
/// similarity to the original is at least the observed SS(t1, t2).
pub fn stability_pvalue(t1: &SimilarityNetwork, t2: &SimilarityNetwork, n_swaps: usize, seed: u64) -> Result<f64> {
    if n_swaps == 0 {
        return Err(Error::Parameter("need at least one swap".into()));
    }
    let observed = similarity_score(t1, t2);
    let mut current = t1.clone();
    let mut r = rng::stream(seed);
    let mut hits = 0usize;
    for _ in 0..n_swaps {
        edge_swap(&mut current, &mut r);
        if similarity_score(t1, &current) >= observed {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_swaps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayFilter {
    All,
    Weekday,
    Weekend,
}

impl std::str::FromStr for DayFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(DayFilter::All),
            "weekday" => Ok(DayFilter::Weekday),
            "weekend" => Ok(DayFilter::Weekend),
            _ => Err(Error::Config(format!("unknown day filter {s:?} (all, weekday, weekend)"))),
        }
    }
}

impl DayFilter {
    fn keeps(self, d: NaiveDate) -> bool {
        let weekend = matches!(d.weekday(), Weekday::Sat | Weekday::Sun);
        match self {
            DayFilter::All => true,
            DayFilter::Weekday => !weekend,
            DayFilter::Weekend => weekend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostingPattern {
    /// Mean share of a day's posts per UTC hour.
    pub shares: Vec<f64>,
    /// Per-day shares, one row per day with posts.
    pub days: Vec<(NaiveDate, Vec<f64>)>,
    pub p_value: Option<f64>,
}

/// Share of daily volume per hour, averaged over the days kept by
/// `filter`, with a permutation test of how stable the pattern is.
pub fn hourly_volume_pattern(
    corpus: &TimeBinnedCorpus,
    filter: DayFilter,
    permutations: usize,
    seed: u64,
) -> Result<PostingPattern> {
    let mut counts: BTreeMap<NaiveDate, [f64; 24]> = BTreeMap::new();
    for p in corpus.posts() {
        let d = p.time.date_naive();
        if filter.keeps(d) {
            counts.entry(d).or_insert([0.0; 24])[p.time.hour() as usize] += 1.0;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyData("no posts on the selected days".into()));
    }
    let days: Vec<(NaiveDate, Vec<f64>)> = counts
        .into_iter()
        .map(|(d, c)| {
            let total: f64 = c.iter().sum();
            (d, c.iter().map(|v| v / total).collect())
        })
        .collect();
    let n = days.len() as f64;
    let shares: Vec<f64> = (0..24).map(|h| days.iter().map(|d| d.1[h]).sum::<f64>() / n).collect();
    let daily: Vec<Vec<f64>> = days.iter().map(|d| d.1.clone()).collect();
    let p_value = match mood::stability_pvalue(&shares, &daily, permutations.max(1), seed) {
        Ok(p) => Some(p),
        Err(Error::Degenerate(msg)) => {
            warn!("posting pattern stability undefined: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(PostingPattern {
        shares,
        days,
        p_value,
    })
}
