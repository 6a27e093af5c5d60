//! Posts, JSONL ingestion and (interval x location) binning.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TextPipeline;

/// A geolocated, timestamped unit of text after the token pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Post {
    pub id: String,
    pub time: DateTime<Utc>,
    pub location: String,
    pub lat: f64,
    pub lon: f64,
    pub tokens: Vec<String>,
}

/// One line of the posts JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPost {
    pub id: String,
    pub time: String,
    pub loc: String,
    pub lat: f64,
    pub lon: f64,
    pub text: String,
}

impl RawPost {
    pub fn to_post(&self, pipeline: &TextPipeline) -> Result<Post> {
        if self.loc.trim().is_empty() {
            return Err(Error::Input(format!("post {} has an empty location", self.id)));
        }
        if !self.lat.is_finite() || !self.lon.is_finite() {
            return Err(Error::Input(format!("post {} has non-finite coordinates", self.id)));
        }
        let time = DateTime::parse_from_rfc3339(&self.time)
            .map_err(|e| Error::Input(format!("post {}: bad time {:?}: {e}", self.id, self.time)))?
            .with_timezone(&Utc);
        Ok(Post {
            id: self.id.clone(),
            time,
            location: self.loc.clone(),
            lat: self.lat,
            lon: self.lon,
            tokens: pipeline.process(&self.text),
        })
    }
}

pub fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn read_raw_posts(path: impl AsRef<Path>) -> Result<Vec<RawPost>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPost = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::Input(format!("duplicate post id {}", raw.id)));
        }
        out.push(raw);
    }
    Ok(out)
}

/// Reads and validates a posts JSONL file, running each text through `pipeline`.
pub fn read_posts_jsonl(path: impl AsRef<Path>, pipeline: &TextPipeline) -> Result<Vec<Post>> {
    read_raw_posts(path)?
        .iter()
        .map(|r| r.to_post(pipeline))
        .collect()
}

pub fn write_posts_jsonl<W: Write>(mut w: W, posts: &[RawPost]) -> Result<()> {
    for p in posts {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io("<posts>", e))?;
    }
    Ok(())
}

/// Bin width, e.g. `1d`, `1h`, `10m`, `30s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IntervalLength {
    secs: i64,
}

impl IntervalLength {
    pub const DAY: IntervalLength = IntervalLength { secs: 86_400 };
    pub const HOUR: IntervalLength = IntervalLength { secs: 3_600 };

    pub fn from_secs(secs: i64) -> Result<Self> {
        if secs <= 0 {
            return Err(Error::Parameter("interval length must be positive".into()));
        }
        Ok(IntervalLength { secs })
    }

    pub fn secs(&self) -> i64 {
        self.secs
    }
}

impl FromStr for IntervalLength {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (num, unit) = s.split_at(s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len()));
        let n: i64 = num
            .parse()
            .map_err(|_| Error::Parameter(format!("bad interval length {s:?}")))?;
        let mult = match unit {
            "d" => 86_400,
            "h" => 3_600,
            "m" => 60,
            "s" | "" => 1,
            _ => return Err(Error::Parameter(format!("bad interval unit in {s:?}"))),
        };
        Self::from_secs(n * mult)
    }
}

impl TryFrom<String> for IntervalLength {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<IntervalLength> for String {
    fn from(l: IntervalLength) -> String {
        l.to_string()
    }
}

impl fmt::Display for IntervalLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.secs;
        if s % 86_400 == 0 {
            write!(f, "{}d", s / 86_400)
        } else if s % 3_600 == 0 {
            write!(f, "{}h", s / 3_600)
        } else if s % 60 == 0 {
            write!(f, "{}m", s / 60)
        } else {
            write!(f, "{s}s")
        }
    }
}

/// Posts grouped into contiguous, equally sized intervals per location.
///
/// Bins are stored location-major: `bins[loc * n_intervals + interval]`.
/// Locations are kept in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBinnedCorpus {
    start: DateTime<Utc>,
    interval: IntervalLength,
    n_intervals: usize,
    locations: Vec<String>,
    bins: Vec<Vec<Post>>,
}

impl TimeBinnedCorpus {
    /// Bins posts into `n_intervals` intervals starting at `start`. Posts
    /// outside the window are dropped; the number dropped is returned.
    pub fn from_posts(
        posts: Vec<Post>,
        start: DateTime<Utc>,
        interval: IntervalLength,
        n_intervals: usize,
    ) -> Result<(Self, usize)> {
        if n_intervals == 0 {
            return Err(Error::Parameter("corpus needs at least one interval".into()));
        }
        let locations: Vec<String> = posts
            .iter()
            .map(|p| p.location.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let loc_index: BTreeMap<&str, usize> = locations
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut bins: Vec<Vec<Post>> = vec![Vec::new(); locations.len() * n_intervals];
        let mut dropped = 0;
        let start_ts = start.timestamp();
        for post in posts {
            let offset = post.time.timestamp() - start_ts;
            let idx = offset.div_euclid(interval.secs);
            if offset < 0 || idx as usize >= n_intervals {
                dropped += 1;
                continue;
            }
            let l = loc_index[post.location.as_str()];
            bins[l * n_intervals + idx as usize].push(post);
        }
        for bin in &mut bins {
            bin.sort_by(|a, b| a.time.cmp(&b.time).then_with(|| a.id.cmp(&b.id)));
        }
        Ok((
            TimeBinnedCorpus {
                start,
                interval,
                n_intervals,
                locations,
                bins,
            },
            dropped,
        ))
    }

    /// Bins posts over the smallest epoch-aligned window covering all of them.
    pub fn covering(posts: Vec<Post>, interval: IntervalLength) -> Result<Self> {
        let (min, max) = posts
            .iter()
            .fold(None, |acc: Option<(i64, i64)>, p| {
                let t = p.time.timestamp();
                Some(acc.map_or((t, t), |(lo, hi)| (lo.min(t), hi.max(t))))
            })
            .ok_or_else(|| Error::EmptyData("no posts to bin".into()))?;
        let first = min.div_euclid(interval.secs) * interval.secs;
        let n = (max.div_euclid(interval.secs) * interval.secs - first) / interval.secs + 1;
        let start = DateTime::from_timestamp(first, 0)
            .ok_or_else(|| Error::Input("timestamp out of range".into()))?;
        Ok(Self::from_posts(posts, start, interval, n as usize)?.0)
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn interval(&self) -> IntervalLength {
        self.interval
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn location_index(&self, name: &str) -> Option<usize> {
        self.locations.binary_search_by(|l| l.as_str().cmp(name)).ok()
    }

    pub fn interval_start(&self, interval: usize) -> DateTime<Utc> {
        self.start + chrono::Duration::seconds(self.interval.secs * interval as i64)
    }

    /// Interval identifier: RFC 3339 start timestamp.
    pub fn interval_id(&self, interval: usize) -> String {
        format_time(&self.interval_start(interval))
    }

    pub fn interval_date(&self, interval: usize) -> NaiveDate {
        self.interval_start(interval).date_naive()
    }

    pub fn bin(&self, location: usize, interval: usize) -> &[Post] {
        &self.bins[location * self.n_intervals + interval]
    }

    /// Posts of every location in one interval, location-major.
    pub fn interval_posts(&self, interval: usize) -> impl Iterator<Item = &Post> {
        (0..self.locations.len()).flat_map(move |l| self.bin(l, interval).iter())
    }

    pub fn posts(&self) -> impl Iterator<Item = &Post> {
        self.bins.iter().flatten()
    }

    pub fn n_posts(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }

    /// Mean post coordinates per location.
    pub fn location_centroids(&self) -> BTreeMap<String, (f64, f64)> {
        let mut out = BTreeMap::new();
        for (l, name) in self.locations.iter().enumerate() {
            let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
            for i in 0..self.n_intervals {
                for p in self.bin(l, i) {
                    lat += p.lat;
                    lon += p.lon;
                    n += 1;
                }
            }
            if n > 0 {
                out.insert(name.clone(), (lat / n as f64, lon / n as f64));
            }
        }
        out
    }
}
