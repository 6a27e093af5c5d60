//! Lexicon mood scores over time bins, permutation tests for stability and
//! periodicity, and PCA.

use std::collections::HashMap;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{mean, pearson_correlation, population_variance, sample_std, Z975};
use crate::vsm::TimeBinnedCorpus;

/// A named set of stems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoodLexicon {
    pub name: String,
    stems: Vec<String>,
}

impl MoodLexicon {
    pub fn new(name: impl Into<String>, stems: impl IntoIterator<Item = impl Into<String>>) -> Result<Self> {
        let mut stems: Vec<String> = stems
            .into_iter()
            .map(Into::into)
            .map(|s: String| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        stems.sort();
        stems.dedup();
        if stems.is_empty() {
            return Err(Error::Parameter("lexicon has no stems".into()));
        }
        Ok(MoodLexicon {
            name: name.into(),
            stems,
        })
    }

    /// One stem per line; the lexicon is named after the file stem.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "lexicon".into());
        Self::new(name, text.lines())
    }

    pub fn stems(&self) -> &[String] {
        &self.stems
    }

    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Mfms,
    Msfms,
}

/// One score per corpus interval (all locations pooled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoodSeries {
    pub values: Vec<f64>,
    pub scheme: Scheme,
    /// Intervals without posts, scored 0.
    pub empty: Vec<bool>,
}

/// Per-interval share of posts containing each stem: intervals x stems.
/// Empty intervals give zero rows and are flagged.
pub fn term_frequencies(corpus: &TimeBinnedCorpus, lexicon: &MoodLexicon) -> (DMatrix<f64>, Vec<bool>) {
    let index: HashMap<&str, usize> = lexicon
        .stems()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let rows: Vec<(Vec<f64>, bool)> = (0..corpus.n_intervals())
        .into_par_iter()
        .map(|t| {
            let mut counts = vec![0.0; lexicon.len()];
            let mut n = 0usize;
            let mut seen = Vec::new();
            for post in corpus.interval_posts(t) {
                n += 1;
                seen.clear();
                seen.extend(post.tokens.iter().filter_map(|tok| index.get(tok.as_str()).copied()));
                seen.sort_unstable();
                seen.dedup();
                for &i in &seen {
                    counts[i] += 1.0;
                }
            }
            if n > 0 {
                counts.iter_mut().for_each(|c| *c /= n as f64);
            }
            (counts, n == 0)
        })
        .collect();
    let empty: Vec<bool> = rows.iter().map(|r| r.1).collect();
    if empty.iter().any(|&e| e) {
        warn!(
            "{} interval(s) have no posts; their mood scores are 0",
            empty.iter().filter(|&&e| e).count()
        );
    }
    let flat: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
    (DMatrix::from_row_slice(corpus.n_intervals(), lexicon.len(), &flat), empty)
}

/// Mean frequency mood score.
pub fn mfms(corpus: &TimeBinnedCorpus, lexicon: &MoodLexicon) -> Result<MoodSeries> {
    if lexicon.is_empty() {
        return Err(Error::Parameter("empty lexicon".into()));
    }
    let (f, empty) = term_frequencies(corpus, lexicon);
    Ok(MoodSeries {
        values: f.row_iter().map(|r| r.mean()).collect(),
        scheme: Scheme::Mfms,
        empty,
    })
}

/// Mean standardised frequency mood score: each stem's frequency series is
/// z-scored over all intervals (population variance) before averaging.
/// Stems with constant frequency are dropped.
pub fn msfms(corpus: &TimeBinnedCorpus, lexicon: &MoodLexicon) -> Result<MoodSeries> {
    if lexicon.is_empty() {
        return Err(Error::Parameter("empty lexicon".into()));
    }
    if corpus.n_intervals() < 2 {
        return Err(Error::InsufficientData("MSFMS needs at least 2 intervals".into()));
    }
    let (f, empty) = term_frequencies(corpus, lexicon);
    let values = standardized_mean(&f, lexicon.stems())?;
    Ok(MoodSeries {
        values,
        scheme: Scheme::Msfms,
        empty,
    })
}

/// Row means of the column-standardized matrix, skipping constant columns.
pub fn standardized_mean(f: &DMatrix<f64>, names: &[String]) -> Result<Vec<f64>> {
    let m = f.nrows();
    let mut sum = vec![0.0; m];
    let mut used = 0usize;
    for (j, col) in f.column_iter().enumerate() {
        let v: Vec<f64> = col.iter().copied().collect();
        let mu = mean(&v);
        let sd = population_variance(&v).sqrt();
        if sd <= 1e-15 * mu.abs().max(1.0) {
            warn!("stem {:?} has constant frequency; dropped", names.get(j));
            continue;
        }
        used += 1;
        for (s, x) in sum.iter_mut().zip(&v) {
            *s += (x - mu) / sd;
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every lexicon stem has constant frequency".into()));
    }
    Ok(sum.into_iter().map(|s| s / used as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourStat {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

/// Mean score per hour of day over D days, with a normal 95% interval from
/// the sample standard deviation across days.
pub fn circadian_aggregate(hourly: &[f64]) -> Result<Vec<HourStat>> {
    if hourly.is_empty() || hourly.len() % 24 != 0 {
        return Err(Error::Input(format!(
            "hourly series length {} is not a whole number of days",
            hourly.len()
        )));
    }
    let days = hourly.len() / 24;
    if days < 2 {
        warn!("one day of data: no confidence interval");
    }
    Ok((0..24)
        .map(|h| {
            let v: Vec<f64> = (0..days).map(|d| hourly[d * 24 + h]).collect();
            let m = mean(&v);
            let half = Z975 * sample_std(&v) / (days as f64).sqrt();
            HourStat {
                mean: m,
                low: m - half,
                high: m + half,
            }
        })
        .collect())
}

/// Splits a series into consecutive days of `per_day` values.
pub fn daily_patterns(series: &[f64], per_day: usize) -> Vec<Vec<f64>> {
    series.chunks_exact(per_day).map(<[f64]>::to_vec).collect()
}

/// Pattern stability: for each day, the fraction of `k` random
/// permutations of that day's pattern whose correlation with `avg` is at
/// least the observed one; averaged over days. Days with a constant
/// pattern are skipped.
pub fn stability_pvalue(avg: &[f64], daily: &[Vec<f64>], k: usize, seed: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Parameter("need at least one permutation".into()));
    }
    let per_day: Vec<Option<f64>> = daily
        .par_iter()
        .enumerate()
        .map(|(i, day)| {
            let obs = pearson_correlation(avg, day)?;
            if obs.degenerate {
                return Ok(None);
            }
            let mut r = rng::sub_stream(seed, i as u64);
            let mut perm = day.clone();
            let mut hits = 0usize;
            for _ in 0..k {
                perm.shuffle(&mut r);
                if pearson_correlation(avg, &perm)?.r >= obs.r {
                    hits += 1;
                }
            }
            Ok(Some(hits as f64 / k as f64))
        })
        .collect::<Result<_>>()?;
    let used: Vec<f64> = per_day.iter().flatten().copied().collect();
    if used.len() < per_day.len() {
        warn!("{} constant day pattern(s) skipped", per_day.len() - used.len());
    }
    if used.is_empty() {
        return Err(Error::Degenerate("every day pattern is constant".into()));
    }
    Ok(mean(&used))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autocorrelation {
    /// Lags 1..=max_lag.
    pub values: Vec<f64>,
    /// Significance bound, +-1.96 / sqrt(N).
    pub bound: f64,
}

fn acf_at(centered: &[f64], denom: f64, lag: usize) -> f64 {
    centered
        .iter()
        .zip(&centered[lag..])
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / denom
}

/// Sample autocorrelation at lags 1..=max_lag.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Autocorrelation> {
    let n = series.len();
    if max_lag >= n {
        return Err(Error::Parameter(format!("max_lag {max_lag} must be below the length {n}")));
    }
    let m = mean(series);
    let c: Vec<f64> = series.iter().map(|x| x - m).collect();
    let denom: f64 = c.iter().map(|x| x * x).sum();
    if denom <= 0.0 {
        return Err(Error::Degenerate("constant series".into()));
    }
    Ok(Autocorrelation {
        values: (1..=max_lag).map(|l| acf_at(&c, denom, l)).collect(),
        bound: Z975 / (n as f64).sqrt(),
    })
}

/// Per-lag fraction of `k` random permutations of the series whose
/// autocorrelation at that lag is at least the observed one.
pub fn periodicity_pvalue(series: &[f64], lags: &[usize], k: usize, seed: u64) -> Result<Vec<f64>> {
    let n = series.len();
    if k == 0 {
        return Err(Error::Parameter("need at least one permutation".into()));
    }
    if let Some(&l) = lags.iter().find(|&&l| l == 0 || l >= n) {
        return Err(Error::Parameter(format!("lag {l} outside 1..{n}")));
    }
    let m = mean(series);
    let c: Vec<f64> = series.iter().map(|x| x - m).collect();
    let denom: f64 = c.iter().map(|x| x * x).sum();
    if denom <= 0.0 {
        return Err(Error::Degenerate("constant series".into()));
    }
    let observed: Vec<f64> = lags.iter().map(|&l| acf_at(&c, denom, l)).collect();
    let hits: Vec<Vec<bool>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut perm = c.clone();
            perm.shuffle(&mut rng::sub_stream(seed, i as u64));
            lags.iter()
                .zip(&observed)
                .map(|(&l, &o)| acf_at(&perm, denom, l) >= o)
                .collect()
        })
        .collect();
    Ok((0..lags.len())
        .map(|j| hits.iter().filter(|h| h[j]).count() as f64 / k as f64)
        .collect())
}

/// Negative affect (mean of anger, fear, sadness) minus joy.
pub fn na_minus_pa(anger: &[f64], fear: &[f64], sadness: &[f64], joy: &[f64]) -> Result<Vec<f64>> {
    let n = joy.len();
    if anger.len() != n || fear.len() != n || sadness.len() != n {
        return Err(Error::Dimension("mood series have different lengths".into()));
    }
    Ok((0..n)
        .map(|i| (anger[i] + fear[i] + sadness[i]) / 3.0 - joy[i])
        .collect())
}

/// `scale * (x - mean) / std` with population std. With `running_stats`
/// each value uses the mean and std of the series up to and including it;
/// a prefix with zero spread maps to 0.
pub fn zscore_scaled(series: &[f64], scale: f64, running_stats: bool) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::EmptyData("empty series".into()));
    }
    let sd = population_variance(series).sqrt();
    if sd <= 0.0 {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    if !running_stats {
        let m = mean(series);
        return Ok(series.iter().map(|x| scale * (x - m) / sd).collect());
    }
    Ok((0..series.len())
        .map(|i| {
            let prefix = &series[..=i];
            let s = population_variance(prefix).sqrt();
            if s > 0.0 {
                scale * (series[i] - mean(prefix)) / s
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// n x dims projections of the centered data.
    pub coordinates: DMatrix<f64>,
    /// d x dims, one unit component per column.
    pub components: DMatrix<f64>,
    /// Eigenvalues of the sample covariance for the kept components.
    pub explained_variance: Vec<f64>,
    /// Share of total variance per kept component.
    pub explained_ratio: Vec<f64>,
}

/// Principal components of the sample covariance, largest first. Each
/// component's largest-magnitude loading is made positive.
pub fn pca_project(data: &DMatrix<f64>, dims: usize) -> Result<Pca> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::InsufficientData("PCA needs at least 2 rows".into()));
    }
    if dims == 0 || dims > (n - 1).min(d) {
        return Err(Error::Parameter(format!(
            "dims must lie in 1..={} for a {n}x{d} matrix",
            (n - 1).min(d)
        )));
    }
    let means = data.row_mean();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut components = DMatrix::zeros(d, dims);
    let mut explained_variance = Vec::with_capacity(dims);
    for (k, &j) in order.iter().take(dims).enumerate() {
        let mut v = eig.eigenvectors.column(j).clone_owned();
        let lead = v.iter().fold(0.0f64, |m, &x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v = -v;
        }
        components.set_column(k, &v);
        explained_variance.push(eig.eigenvalues[j].max(0.0));
    }
    let explained_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(Pca {
        coordinates: &centered * &components,
        components,
        explained_variance,
        explained_ratio,
    })
}
