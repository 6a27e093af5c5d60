//! Vector-space representations of time-binned text: marker scores, score
//! matrices, TF-IDF weights and topic scores.

mod corpus;

use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::text::{FeatureVocabulary, NGram};

pub use corpus::{
    format_time, read_posts_jsonl, read_raw_posts, write_posts_jsonl, IntervalLength, Post,
    RawPost, TimeBinnedCorpus,
};

/// Number of contiguous occurrences of `marker` in `tokens`.
fn occurrences(marker: &[String], tokens: &[String]) -> usize {
    if marker.is_empty() || tokens.len() < marker.len() {
        return 0;
    }
    tokens.windows(marker.len()).filter(|w| *w == marker).count()
}

/// Normalized frequency of `marker` over `posts`: mean per-post count, or
/// the fraction of posts containing it when `boolean_mode` is set.
pub fn marker_score(marker: &NGram, posts: &[Post], boolean_mode: bool) -> Result<f64> {
    if posts.is_empty() {
        return Err(Error::UndefinedScore("marker score over zero posts".into()));
    }
    let total: usize = posts
        .iter()
        .map(|p| {
            let c = occurrences(marker.tokens(), &p.tokens);
            if boolean_mode {
                usize::from(c > 0)
            } else {
                c
            }
        })
        .sum();
    Ok(total as f64 / posts.len() as f64)
}

/// Scores every vocabulary entry over a group of posts. `None` for an empty group.
fn score_row<'a>(
    vocab: &FeatureVocabulary,
    arities: &[usize],
    posts: impl Iterator<Item = &'a Post>,
    boolean_mode: bool,
) -> Option<Vec<f64>> {
    let mut row = vec![0.0; vocab.len()];
    let mut n_posts = 0usize;
    let mut seen: Vec<usize> = Vec::new();
    for post in posts {
        n_posts += 1;
        seen.clear();
        for &n in arities {
            for w in post.tokens.windows(n) {
                if let Some(j) = vocab.index_of(w) {
                    if boolean_mode {
                        seen.push(j);
                    } else {
                        row[j] += 1.0;
                    }
                }
            }
        }
        if boolean_mode {
            seen.sort_unstable();
            seen.dedup();
            for &j in &seen {
                row[j] += 1.0;
            }
        }
    }
    if n_posts == 0 {
        return None;
    }
    let n = n_posts as f64;
    row.iter_mut().for_each(|v| *v /= n);
    Some(row)
}

/// Identifies one row of a score matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowKey {
    /// Index of the interval within the corpus window.
    pub interval: usize,
    /// Interval identifier (RFC 3339 start time).
    pub id: String,
    /// Location, when rows are per location.
    pub location: Option<String>,
}

/// Interval-by-feature scores with an optional aligned target.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub x: DMatrix<f64>,
    pub vocabulary: FeatureVocabulary,
    pub rows: Vec<RowKey>,
    pub y: Option<DVector<f64>>,
}

impl ScoreMatrix {
    pub fn new(
        x: DMatrix<f64>,
        vocabulary: FeatureVocabulary,
        rows: Vec<RowKey>,
        y: Option<DVector<f64>>,
    ) -> Result<Self> {
        if x.nrows() != rows.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} row keys",
                x.nrows(),
                rows.len()
            )));
        }
        if x.ncols() != vocabulary.len() {
            return Err(Error::Dimension(format!(
                "{} columns but {} vocabulary entries",
                x.ncols(),
                vocabulary.len()
            )));
        }
        if let Some(y) = &y {
            if y.len() != rows.len() {
                return Err(Error::Dimension(format!(
                    "{} targets for {} rows",
                    y.len(),
                    rows.len()
                )));
            }
        }
        Ok(ScoreMatrix {
            x,
            vocabulary,
            rows,
            y,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn feature_ids(&self) -> Vec<String> {
        self.vocabulary.feature_ids()
    }

    /// The target vector, or an error when none is attached.
    pub fn targets(&self) -> Result<&DVector<f64>> {
        self.y
            .as_ref()
            .ok_or_else(|| Error::Input("score matrix has no target vector".into()))
    }

    pub fn with_targets(mut self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n_rows() {
            return Err(Error::Dimension(format!(
                "{} targets for {} rows",
                y.len(),
                self.n_rows()
            )));
        }
        self.y = Some(y);
        Ok(self)
    }

    /// Submatrix over the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> ScoreMatrix {
        let x = self.x.select_rows(rows.iter());
        ScoreMatrix {
            x,
            vocabulary: self.vocabulary.clone(),
            rows: rows.iter().map(|&r| self.rows[r].clone()).collect(),
            y: self
                .y
                .as_ref()
                .map(|y| DVector::from_iterator(rows.len(), rows.iter().map(|&r| y[r]))),
        }
    }

    fn has_location_column(&self) -> bool {
        self.rows.iter().any(|r| r.location.is_some())
    }

    /// CSV: `interval[,location],<feature headers...>`, 2-gram tokens joined by `|`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let with_loc = self.has_location_column();
        let mut header = vec!["interval".to_string()];
        if with_loc {
            header.push("location".into());
        }
        header.extend(self.vocabulary.entries().iter().map(NGram::header));
        wtr.write_record(&header)?;
        for (i, key) in self.rows.iter().enumerate() {
            let mut rec = vec![key.id.clone()];
            if with_loc {
                rec.push(key.location.clone().unwrap_or_default());
            }
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<score matrix>", e))?;
        Ok(())
    }

    /// Reads a matrix written by [`ScoreMatrix::write_csv`]. Interval
    /// indices are reassigned by sorted order of the distinct interval ids.
    pub fn read_csv<R: Read>(r: R, stemmed: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(r);
        let header = rdr.headers()?.clone();
        let with_loc = header.get(1) == Some("location");
        let first_feature = if with_loc { 2 } else { 1 };
        if header.get(0) != Some("interval") {
            return Err(Error::Input("score matrix CSV must start with an interval column".into()));
        }
        let entries = header
            .iter()
            .skip(first_feature)
            .map(NGram::parse)
            .collect::<Result<Vec<_>>>()?;
        let vocabulary = FeatureVocabulary::infer_class(entries, stemmed)?;
        let mut ids = Vec::new();
        let mut locs = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            locs.push(if with_loc { Some(rec[1].to_string()) } else { None });
            for v in rec.iter().skip(first_feature) {
                values.push(v.parse::<f64>().map_err(|_| {
                    Error::Input(format!("bad score value {v:?}"))
                })?);
            }
        }
        let mut distinct: Vec<&String> = ids.iter().collect();
        distinct.sort();
        distinct.dedup();
        let rows: Vec<RowKey> = ids
            .iter()
            .zip(locs)
            .map(|(id, location)| RowKey {
                interval: distinct.binary_search(&id).expect("id present"),
                id: id.clone(),
                location,
            })
            .collect();
        let x = DMatrix::from_row_slice(rows.len(), vocabulary.len(), &values);
        ScoreMatrix::new(x, vocabulary, rows, None)
    }
}

/// Builds a score matrix with one row per (location, interval), stacked
/// location-major: all intervals of the first location, then the next.
/// `location_filter` restricts and orders nothing beyond selecting which
/// locations appear; corpus (lexicographic) order is kept.
pub fn build_score_matrix(
    vocab: &FeatureVocabulary,
    corpus: &TimeBinnedCorpus,
    location_filter: Option<&[String]>,
    boolean_mode: bool,
) -> Result<ScoreMatrix> {
    let locations: Vec<usize> = match location_filter {
        None => (0..corpus.locations().len()).collect(),
        Some(filter) => {
            let mut idx = filter
                .iter()
                .map(|name| {
                    corpus
                        .location_index(name)
                        .ok_or_else(|| Error::Input(format!("unknown location {name}")))
                })
                .collect::<Result<Vec<_>>>()?;
            idx.sort_unstable();
            idx.dedup();
            idx
        }
    };
    let keys: Vec<(usize, usize)> = locations
        .iter()
        .flat_map(|&l| (0..corpus.n_intervals()).map(move |i| (l, i)))
        .collect();
    let arities = vocab.arities();
    let rows: Vec<Vec<f64>> = keys
        .par_iter()
        .map(|&(l, i)| {
            score_row(vocab, &arities, corpus.bin(l, i).iter(), boolean_mode).unwrap_or_else(|| {
                warn!(
                    "empty bin ({}, {}): scored as zeros",
                    corpus.locations()[l],
                    corpus.interval_id(i)
                );
                vec![0.0; vocab.len()]
            })
        })
        .collect();
    let row_keys = keys
        .iter()
        .map(|&(l, i)| RowKey {
            interval: i,
            id: corpus.interval_id(i),
            location: Some(corpus.locations()[l].clone()),
        })
        .collect();
    assemble(vocab, rows, row_keys)
}

/// One row per interval, pooling the posts of every location.
pub fn build_pooled_score_matrix(
    vocab: &FeatureVocabulary,
    corpus: &TimeBinnedCorpus,
    boolean_mode: bool,
) -> Result<ScoreMatrix> {
    let arities = vocab.arities();
    let rows: Vec<Vec<f64>> = (0..corpus.n_intervals())
        .into_par_iter()
        .map(|i| {
            score_row(vocab, &arities, corpus.interval_posts(i), boolean_mode).unwrap_or_else(|| {
                warn!("empty interval {}: scored as zeros", corpus.interval_id(i));
                vec![0.0; vocab.len()]
            })
        })
        .collect();
    let keys = (0..corpus.n_intervals())
        .map(|i| RowKey {
            interval: i,
            id: corpus.interval_id(i),
            location: None,
        })
        .collect();
    assemble(vocab, rows, keys)
}

fn assemble(vocab: &FeatureVocabulary, rows: Vec<Vec<f64>>, keys: Vec<RowKey>) -> Result<ScoreMatrix> {
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let x = DMatrix::from_row_slice(n, vocab.len(), &flat);
    ScoreMatrix::new(x, vocab.clone(), keys, None)
}

/// Mean over markers of their Boolean scores over the posts of one interval.
pub fn topic_score(markers: &[NGram], posts: &[Post]) -> Result<f64> {
    if markers.is_empty() || posts.is_empty() {
        return Err(Error::UndefinedScore("topic score needs markers and posts".into()));
    }
    let weights = vec![1.0; markers.len()];
    Ok(weighted_topic_score(markers, &weights, posts)?.0)
}

/// Weighted topic score: each marker contributes `w_i * presence_count / (k * n)`.
/// Returns the total and the per-marker subscores.
pub fn weighted_topic_score(
    markers: &[NGram],
    weights: &[f64],
    posts: &[Post],
) -> Result<(f64, Vec<f64>)> {
    if markers.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} markers but {} weights",
            markers.len(),
            weights.len()
        )));
    }
    if markers.is_empty() || posts.is_empty() {
        return Err(Error::UndefinedScore("topic score needs markers and posts".into()));
    }
    let denom = (markers.len() * posts.len()) as f64;
    let subscores: Vec<f64> = markers
        .iter()
        .zip(weights)
        .map(|(m, w)| {
            let present = posts
                .iter()
                .filter(|p| occurrences(m.tokens(), &p.tokens) > 0)
                .count();
            w * present as f64 / denom
        })
        .collect();
    Ok((subscores.iter().sum(), subscores))
}

/// TF-IDF weights as a terms-by-documents matrix.
///
/// `tf = f / max_f` where the maximum runs over vocabulary terms in the
/// document, `idf = ln(m / df)`. A document with no vocabulary term yields
/// an all-zero column; a term in no document gets zero weight.
pub fn tf_idf(documents: &[Vec<String>], vocab: &FeatureVocabulary) -> Result<DMatrix<f64>> {
    if documents.is_empty() {
        return Err(Error::EmptyData("tf-idf needs at least one document".into()));
    }
    let m = documents.len();
    let n = vocab.len();
    let arities = vocab.arities();
    let mut counts = DMatrix::<f64>::zeros(n, m);
    for (j, doc) in documents.iter().enumerate() {
        for &a in &arities {
            for w in doc.windows(a) {
                if let Some(i) = vocab.index_of(w) {
                    counts[(i, j)] += 1.0;
                }
            }
        }
    }
    let df: Vec<usize> = (0..n)
        .map(|i| counts.row(i).iter().filter(|&&c| c > 0.0).count())
        .collect();
    let mut w = DMatrix::<f64>::zeros(n, m);
    for j in 0..m {
        let max = counts.column(j).max();
        if max <= 0.0 {
            continue;
        }
        for i in 0..n {
            let f = counts[(i, j)];
            if f > 0.0 {
                w[(i, j)] = (f / max) * (m as f64 / df[i] as f64).ln();
            }
        }
    }
    Ok(w)
}
