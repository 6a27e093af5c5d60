//! Seeded synthetic posts and targets with a known set of signal terms.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate, TimeZone, Utc};
use rand::Rng as _;
use rand_distr::{Distribution, Exp, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nowcast::{interpolate_weekly, GroundTruthSeries, TruthPoint};
use crate::rng;
use crate::text::TextPipeline;
use crate::vsm::{format_time, IntervalLength, RawPost, TimeBinnedCorpus};

pub const RAIN_ZERO_PROB: f64 = 0.6;
pub const RAIN_RATE: f64 = 0.569;
pub const FLU_MU: f64 = 2.82451;
pub const FLU_SIGMA: f64 = 0.9254;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    FluLike,
    RainLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalTerm {
    pub term: String,
    pub slope: f64,
    pub base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseTerm {
    pub term: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfounderTerm {
    pub term: String,
    /// Per-day appearance probability.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthLocation {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub days: usize,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    pub locations: Vec<SynthLocation>,
    pub posts_per_bin: usize,
    pub signal_terms: Vec<SignalTerm>,
    #[serde(default)]
    pub noise_terms: Vec<NoiseTerm>,
    #[serde(default)]
    pub confounder_terms: Vec<ConfounderTerm>,
    pub target_kind: TargetKind,
    /// Stop words added to each post; the pipeline removes them again.
    #[serde(default = "default_filler")]
    pub filler_words: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 6).expect("valid date")
}

fn default_filler() -> usize {
    3
}

const FILLER: &[&str] = &["the", "and", "a", "of", "to", "is", "in", "it", "on", "my"];

/// Rough share of posts per UTC hour: quiet overnight, busy evenings.
const HOUR_WEIGHTS: [f64; 24] = [
    3.0, 2.0, 1.2, 0.8, 0.6, 0.7, 1.2, 2.2, 3.2, 3.6, 3.8, 4.0, 4.4, 4.3, 4.1, 4.2, 4.5, 4.9,
    5.4, 5.8, 6.0, 5.9, 5.2, 4.2,
];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.days == 0 || self.posts_per_bin == 0 {
            return Err(Error::Parameter("days and posts_per_bin must be positive".into()));
        }
        if self.locations.is_empty() {
            return Err(Error::Parameter("no locations".into()));
        }
        if self.signal_terms.is_empty() && self.noise_terms.is_empty() && self.confounder_terms.is_empty() {
            return Err(Error::Parameter("no terms to generate".into()));
        }
        if self.target_kind == TargetKind::FluLike && self.days < 14 {
            return Err(Error::Parameter("flu_like targets need at least 14 days".into()));
        }
        for c in &self.confounder_terms {
            if c.rates.len() != self.days {
                return Err(Error::Dimension(format!(
                    "confounder {} has {} rates for {} days",
                    c.term,
                    c.rates.len(),
                    self.days
                )));
            }
        }
        let mut names: Vec<&str> = self
            .signal_terms
            .iter()
            .map(|t| t.term.as_str())
            .chain(self.noise_terms.iter().map(|t| t.term.as_str()))
            .chain(self.confounder_terms.iter().map(|t| t.term.as_str()))
            .collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        if names.len() != n {
            return Err(Error::Parameter("term names must be distinct".into()));
        }
        Ok(())
    }

    pub fn region_names(&self) -> Vec<String> {
        self.locations.iter().map(|l| l.name.clone()).collect()
    }
}

/// Daily target per region. Rain: zero with probability 0.6, otherwise
/// exponential. Flu: weekly log-normal anchors interpolated to days.
pub fn gen_target_series(
    kind: TargetKind,
    days: usize,
    start: NaiveDate,
    regions: &[String],
    seed: u64,
) -> Result<GroundTruthSeries> {
    if days == 0 || regions.is_empty() {
        return Err(Error::Parameter("need days > 0 and at least one region".into()));
    }
    let mut points = Vec::with_capacity(days * regions.len());
    for (ri, region) in regions.iter().enumerate() {
        let mut r = rng::sub_stream(seed, ri as u64);
        match kind {
            TargetKind::RainLike => {
                let exp = Exp::new(RAIN_RATE).expect("positive rate");
                for d in 0..days {
                    let value = if r.random::<f64>() < RAIN_ZERO_PROB {
                        0.0
                    } else {
                        exp.sample(&mut r)
                    };
                    points.push(TruthPoint {
                        date: start + Days::new(d as u64),
                        region: region.clone(),
                        value,
                    });
                }
            }
            TargetKind::FluLike => {
                if days < 14 {
                    return Err(Error::Parameter("flu_like targets need at least 14 days".into()));
                }
                let ln = LogNormal::new(FLU_MU, FLU_SIGMA).expect("valid log-normal");
                let weeks = (days - 1).div_ceil(7) + 1;
                let anchors: Vec<TruthPoint> = (0..weeks)
                    .map(|w| TruthPoint {
                        date: start + Days::new(7 * w as u64),
                        region: region.clone(),
                        value: ln.sample(&mut r),
                    })
                    .collect();
                let daily = interpolate_weekly(&GroundTruthSeries::new(anchors)?)?;
                points.extend(daily.points.into_iter().take(days));
            }
        }
    }
    GroundTruthSeries::new(points)
}

/// Zero series with one peak of `width` days centred on `spike_day`,
/// falling off linearly; the peak height is drawn from the seed.
pub fn gen_confounder_spike(days: usize, spike_day: usize, width: usize, seed: u64) -> Result<Vec<f64>> {
    if spike_day >= days || width == 0 {
        return Err(Error::Parameter(format!(
            "spike day {spike_day} outside {days} days or zero width"
        )));
    }
    let height = 0.25 + 0.1 * rng::stream(seed).random::<f64>();
    let lo = (width - 1) / 2;
    let hi = width - 1 - lo;
    let reach = hi.max(lo) as f64 + 1.0;
    let mut out = vec![0.0; days];
    for (d, v) in out.iter_mut().enumerate() {
        let o = d as i64 - spike_day as i64;
        if -(lo as i64) <= o && o <= hi as i64 {
            *v = height * (1.0 - o.unsigned_abs() as f64 / reach);
        }
    }
    Ok(out)
}

/// Which generated terms carry signal, for checking selections later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportManifest {
    pub signal: Vec<String>,
    pub slopes: BTreeMap<String, f64>,
    pub noise: Vec<String>,
    pub confounders: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub posts: Vec<RawPost>,
    pub manifest: SupportManifest,
    pub start: NaiveDate,
    pub days: usize,
}

impl SynthCorpus {
    /// Day-binned corpus over exactly the generated days.
    pub fn corpus(&self, pipeline: &TextPipeline) -> Result<TimeBinnedCorpus> {
        let posts = self
            .posts
            .iter()
            .map(|p| p.to_post(pipeline))
            .collect::<Result<Vec<_>>>()?;
        let start = Utc.from_utc_datetime(&self.start.and_hms_opt(0, 0, 0).expect("midnight"));
        let (c, dropped) = TimeBinnedCorpus::from_posts(posts, start, IntervalLength::DAY, self.days)?;
        debug_assert_eq!(dropped, 0);
        Ok(c)
    }
}

fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Posts for every (location, day). A signal term shows up in a post with
/// probability clamp(base + slope * y), y being the target of that
/// location min-max scaled over the whole generated series; noise terms use fixed rates and confounders their
/// per-day rates. Each bin draws from its own sub-stream.
pub fn gen_corpus(spec: &SynthSpec, target: &GroundTruthSeries) -> Result<SynthCorpus> {
    spec.validate()?;
    let regions = target.regions();
    let raw: Vec<Vec<f64>> = spec
        .locations
        .iter()
        .map(|loc| {
            let name = if regions.contains(&loc.name) {
                loc.name.as_str()
            } else if regions.len() == 1 {
                regions[0].as_str()
            } else {
                return Err(Error::Input(format!("no target series for {}", loc.name)));
            };
            let values: Vec<f64> = target.region(name).iter().map(|p| p.value).collect();
            if values.len() < spec.days {
                return Err(Error::Input(format!(
                    "target for {name} has {} days, need {}",
                    values.len(),
                    spec.days
                )));
            }
            Ok(values[..spec.days].to_vec())
        })
        .collect::<Result<_>>()?;
    // One scaling for all locations so equal frequencies mean equal targets.
    let flat = min_max(&raw.concat());
    let scaled: Vec<&[f64]> = flat.chunks(spec.days).collect();

    let bins: Vec<(usize, usize)> = (0..spec.locations.len())
        .flat_map(|l| (0..spec.days).map(move |d| (l, d)))
        .collect();
    let hour_total: f64 = HOUR_WEIGHTS.iter().sum();
    let posts: Vec<Vec<RawPost>> = bins
        .par_iter()
        .map(|&(l, d)| {
            let mut r = rng::stream(rng::sub_seed_path(spec.seed, &[l as u64, d as u64]));
            let loc = &spec.locations[l];
            let y = scaled[l][d];
            let day = spec.start + Days::new(d as u64);
            let midnight = Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0).expect("midnight"));
            let mut times: Vec<i64> = (0..spec.posts_per_bin)
                .map(|_| {
                    let mut u = r.random::<f64>() * hour_total;
                    let mut hour = 23;
                    for (h, w) in HOUR_WEIGHTS.iter().enumerate() {
                        if u < *w {
                            hour = h;
                            break;
                        }
                        u -= w;
                    }
                    hour as i64 * 3600 + r.random_range(0..3600)
                })
                .collect();
            times.sort_unstable();
            times
                .into_iter()
                .enumerate()
                .map(|(k, secs)| {
                    let mut words: Vec<&str> = Vec::new();
                    for _ in 0..spec.filler_words {
                        words.push(FILLER[r.random_range(0..FILLER.len())]);
                    }
                    for t in &spec.signal_terms {
                        if r.random::<f64>() < (t.base + t.slope * y).clamp(0.0, 1.0) {
                            words.push(&t.term);
                        }
                    }
                    for t in &spec.noise_terms {
                        if r.random::<f64>() < t.rate.clamp(0.0, 1.0) {
                            words.push(&t.term);
                        }
                    }
                    for t in &spec.confounder_terms {
                        if r.random::<f64>() < t.rates[d].clamp(0.0, 1.0) {
                            words.push(&t.term);
                        }
                    }
                    RawPost {
                        id: format!("{}-{d}-{k}", loc.name),
                        time: format_time(&(midnight + chrono::Duration::seconds(secs))),
                        loc: loc.name.clone(),
                        lat: loc.lat,
                        lon: loc.lon,
                        text: words.join(" "),
                    }
                })
                .collect()
        })
        .collect();

    let manifest = SupportManifest {
        signal: spec.signal_terms.iter().map(|t| t.term.clone()).collect(),
        slopes: spec.signal_terms.iter().map(|t| (t.term.clone(), t.slope)).collect(),
        noise: spec.noise_terms.iter().map(|t| t.term.clone()).collect(),
        confounders: spec.confounder_terms.iter().map(|t| t.term.clone()).collect(),
    };
    Ok(SynthCorpus {
        posts: posts.into_iter().flatten().collect(),
        manifest,
        start: spec.start,
        days: spec.days,
    })
}

/// `n` locations spread about 40 km apart.
pub fn grid_locations(n: usize) -> Vec<SynthLocation> {
    (0..n)
        .map(|i| SynthLocation {
            name: format!("loc{i:02}"),
            lat: 50.0 + 0.4 * (i / 5) as f64,
            lon: -3.0 + 0.6 * (i % 5) as f64,
        })
        .collect()
}

/// Planted-support benchmark: 20 signal terms (six with negative slope)
/// among 180 noise terms, 3 locations, 120 days, 500 posts per bin.
pub fn benchmark_spec(seed: u64) -> SynthSpec {
    let mut r = rng::sub_stream(seed, 99);
    let signal_terms = (0..20)
        .map(|i| {
            let slope = 0.15 + 0.15 * r.random::<f64>();
            if i % 10 < 3 {
                SignalTerm {
                    term: format!("sig{i:02}"),
                    slope: -slope,
                    base: slope + 0.02 + 0.04 * r.random::<f64>(),
                }
            } else {
                SignalTerm {
                    term: format!("sig{i:02}"),
                    slope,
                    base: 0.02 + 0.04 * r.random::<f64>(),
                }
            }
        })
        .collect();
    let noise_terms = (0..180)
        .map(|i| NoiseTerm {
            term: format!("noise{i:03}"),
            rate: 0.01 + 0.09 * r.random::<f64>(),
        })
        .collect();
    SynthSpec {
        days: 120,
        start: default_start(),
        locations: grid_locations(3),
        posts_per_bin: 500,
        signal_terms,
        noise_terms,
        confounder_terms: Vec::new(),
        target_kind: TargetKind::FluLike,
        filler_words: 3,
        seed,
    }
}
