//! Ground truth handling, smoothing, inference post-processing, metrics and
//! the cross-validation harness.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::NaiveDate;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bolasso::{
    baseline_correlation_select, hybrid_h, hybrid_hii, soft_bolasso, union_class_ub, BolassoConfig,
    ClassData, Ct, SelectionResult,
};
use crate::cart::{fit_bagged_ensemble, select_tree_count, ensemble_predict, TreeParams};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::mse;
use crate::vsm::ScoreMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub date: NaiveDate,
    pub region: String,
    pub value: f64,
}

/// Dated target values, sorted by (region, date).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthSeries {
    pub points: Vec<TruthPoint>,
}

impl GroundTruthSeries {
    pub fn new(mut points: Vec<TruthPoint>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.value.is_finite()) {
            return Err(Error::Data(format!("non-finite target on {} ({})", p.date, p.region)));
        }
        points.sort_by(|a, b| a.region.cmp(&b.region).then(a.date.cmp(&b.date)));
        if points
            .windows(2)
            .any(|w| w[0].region == w[1].region && w[0].date == w[1].date)
        {
            return Err(Error::Input("duplicate (date, region) in ground truth".into()));
        }
        Ok(GroundTruthSeries { points })
    }

    pub fn regions(&self) -> Vec<String> {
        let mut r: Vec<String> = self.points.iter().map(|p| p.region.clone()).collect();
        r.dedup();
        r
    }

    pub fn region(&self, name: &str) -> Vec<&TruthPoint> {
        self.points.iter().filter(|p| p.region == name).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let points = rdr.deserialize().collect::<std::result::Result<Vec<TruthPoint>, _>>()?;
        Self::new(points)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(["date", "region", "value"])?;
        for p in &self.points {
            wtr.write_record([p.date.to_string(), p.region.clone(), p.value.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<ground truth>", e))?;
        Ok(())
    }

    /// Target vector aligned to the rows of `m`: row (interval, location)
    /// takes the value for the interval's date in that region. A pooled
    /// row (no location) needs a single-region series.
    pub fn align(&self, m: &ScoreMatrix) -> Result<DVector<f64>> {
        let mut lookup: HashMap<(&str, NaiveDate), f64> = HashMap::new();
        for p in &self.points {
            lookup.insert((p.region.as_str(), p.date), p.value);
        }
        let regions = self.regions();
        let values = m
            .rows
            .iter()
            .map(|row| {
                let date = row_date(&row.id)?;
                let region = match &row.location {
                    Some(l) => l.as_str(),
                    None if regions.len() == 1 => regions[0].as_str(),
                    None => {
                        return Err(Error::Input(
                            "pooled rows need a ground truth with exactly one region".into(),
                        ))
                    }
                };
                lookup
                    .get(&(region, date))
                    .copied()
                    .ok_or_else(|| Error::Input(format!("no ground truth for {region} on {date}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(DVector::from_vec(values))
    }
}

/// Calendar date of an interval id (RFC 3339 start time).
fn row_date(id: &str) -> Result<NaiveDate> {
    chrono::DateTime::parse_from_rfc3339(id)
        .map(|t| t.date_naive())
        .map_err(|_| Error::Input(format!("bad interval id {id:?}")))
}

/// Linear daily interpolation between consecutive weekly values. Each week
/// contributes seven days starting at its anchor; the last anchor closes
/// the series, so N weekly points give 7(N-1)+1 days per region.
pub fn interpolate_weekly(weekly: &GroundTruthSeries) -> Result<GroundTruthSeries> {
    let mut out = Vec::new();
    for region in weekly.regions() {
        let pts = weekly.region(&region);
        if pts.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "region {region} has {} weekly points, need 2",
                pts.len()
            )));
        }
        for w in pts.windows(2) {
            if (w[1].date - w[0].date).num_days() != 7 {
                return Err(Error::Input(format!(
                    "weekly points {} and {} are not 7 days apart",
                    w[0].date, w[1].date
                )));
            }
            let delta = (w[1].value - w[0].value) / 7.0;
            let mut d = w[0].value;
            for k in 0..7 {
                out.push(TruthPoint {
                    date: w[0].date + chrono::Days::new(k),
                    region: region.clone(),
                    value: d,
                });
                d += delta;
            }
        }
        let last = pts[pts.len() - 1];
        out.push(last.clone());
    }
    GroundTruthSeries::new(out)
}

/// Centred n-point moving average. Near the start the window shrinks
/// symmetrically (2j-1 points for the j-th value); near the end it is cut
/// at the last value.
pub fn moving_average(series: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 || n % 2 == 0 {
        return Err(Error::Parameter(format!("window must be odd and positive, got {n}")));
    }
    let h = (n - 1) / 2;
    let k = series.len();
    Ok((0..k)
        .map(|i| {
            let (lo, hi) = if i < h { (0, (2 * i).min(k - 1)) } else { (i - h, (i + h).min(k - 1)) };
            series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

pub fn threshold_negative(series: &[f64]) -> Vec<f64> {
    series.iter().map(|&v| v.max(0.0)).collect()
}

/// Mean of the current inference and the six before it.
pub fn smooth_inference_weekly(current: f64, previous_raw: &[f64; 6]) -> f64 {
    (current + previous_raw.iter().sum::<f64>()) / 7.0
}

/// Applies [`smooth_inference_weekly`] along a series, padding with zeros
/// before the start. The second vector flags values that used padding.
pub fn smooth_series_weekly(raw: &[f64]) -> (Vec<f64>, Vec<bool>) {
    raw.iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut prev = [0.0; 6];
            for (k, p) in prev.iter_mut().enumerate() {
                if i > k {
                    *p = raw[i - k - 1];
                }
            }
            (smooth_inference_weekly(v, &prev), i < 6)
        })
        .unzip()
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    mse(pred, actual).map(f64::sqrt)
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyData("no values to compare".into()));
    }
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

/// A random permutation of `0..n`.
pub fn permute_days(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed));
    idx
}

/// Interval indices per role for one cross-validation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub train: Vec<usize>,
    pub validate: Vec<usize>,
    pub test: Vec<usize>,
}

/// Contiguous folds over a (possibly permuted) interval order. In round r
/// fold r is held out: its first ceil(len/2) intervals validate and the rest
/// test; every other fold trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_intervals: usize,
    pub folds: usize,
    pub order: Vec<usize>,
    pub permutation_seed: Option<u64>,
}

impl FoldPlan {
    pub fn contiguous(n_intervals: usize, folds: usize) -> Result<Self> {
        if folds < 2 || folds > n_intervals {
            return Err(Error::Parameter(format!(
                "need 2 <= folds <= intervals, got {folds} folds for {n_intervals}"
            )));
        }
        Ok(FoldPlan {
            n_intervals,
            folds,
            order: (0..n_intervals).collect(),
            permutation_seed: None,
        })
    }

    /// Folds over a seeded random permutation of the interval index.
    pub fn permuted(n_intervals: usize, folds: usize, seed: u64) -> Result<Self> {
        let mut plan = Self::contiguous(n_intervals, folds)?;
        plan.order = permute_days(n_intervals, seed);
        plan.permutation_seed = Some(seed);
        Ok(plan)
    }

    pub fn rounds(&self) -> Vec<Round> {
        let n = self.n_intervals;
        let bounds: Vec<usize> = (0..=self.folds).map(|f| f * n / self.folds).collect();
        (0..self.folds)
            .map(|r| {
                let held = &self.order[bounds[r]..bounds[r + 1]];
                let n_val = held.len().div_ceil(2);
                let train = (0..self.folds)
                    .filter(|&f| f != r)
                    .flat_map(|f| self.order[bounds[f]..bounds[f + 1]].iter().copied())
                    .collect();
                Round {
                    train,
                    validate: held[..n_val].to_vec(),
                    test: held[n_val..].to_vec(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub trees: usize,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            trees: 150,
            tree: TreeParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Bolasso(BolassoConfig),
    CartEnsemble(EnsembleConfig),
    Baseline { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hybrid {
    #[serde(rename = "none")]
    None,
    H,
    #[serde(rename = "H_II")]
    HII,
    UB,
}

impl std::str::FromStr for Hybrid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Hybrid::None),
            "H" => Ok(Hybrid::H),
            "H_II" => Ok(Hybrid::HII),
            "UB" => Ok(Hybrid::UB),
            _ => Err(Error::Config(format!("unknown hybrid {s:?} (none, H, H_II, UB)"))),
        }
    }
}

/// Score matrices with targets attached. `b` is the 2-gram class, needed
/// for the hybrids.
pub struct CvData<'a> {
    pub u: &'a ScoreMatrix,
    pub b: Option<&'a ScoreMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub interval: String,
    pub region: String,
    pub actual: f64,
    pub inferred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub rmse: f64,
    pub rmse_by_region: BTreeMap<String, f64>,
    pub ct: Option<Ct>,
    pub tree_count: Option<usize>,
    pub features: Vec<String>,
    pub predictions: Vec<PredictionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub rounds: Vec<RoundReport>,
    /// Mean over rounds of the per-round pooled RMSE.
    pub mean_rmse: f64,
    /// RMSE over the test residuals of all rounds together.
    pub pooled_rmse: f64,
    pub mean_rmse_by_region: BTreeMap<String, f64>,
}

/// Rows of `m` whose interval is in `intervals`, in matrix order.
pub fn rows_for(m: &ScoreMatrix, intervals: &[usize]) -> Vec<usize> {
    let mut wanted = vec![false; m.rows.iter().map(|r| r.interval + 1).max().unwrap_or(0)];
    for &i in intervals {
        if i < wanted.len() {
            wanted[i] = true;
        }
    }
    (0..m.n_rows())
        .filter(|&r| wanted[m.rows[r].interval])
        .collect()
}

/// A trained model that can score matrices of the training layout.
#[derive(Debug, Clone)]
pub enum Fitted {
    Linear(SelectionResult),
    Ensemble(crate::cart::TreeEnsemble, usize),
}

impl Fitted {
    /// Raw (unthresholded) inferences for every row of `m`. Hybrid models
    /// expect the 1-gram and 2-gram columns side by side.
    pub fn predict(&self, m: &ScoreMatrix) -> Result<Vec<f64>> {
        match self {
            Fitted::Linear(sel) => Ok(sel.record().predict(m)?.iter().copied().collect()),
            Fitted::Ensemble(ens, t) => (0..m.n_rows())
                .map(|i| {
                    let row: Vec<f64> = m.x.row(i).iter().copied().collect();
                    ensemble_predict(ens, &row, Some(*t))
                })
                .collect(),
        }
    }
}

/// Validation outcome of one consensus threshold of one feature class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtRow {
    pub class: String,
    pub ct: f64,
    pub n_features: usize,
    pub lambda: f64,
    pub used_cv: bool,
    pub validation_rmse: f64,
}

fn ct_rows(class: &str, per_ct: &[crate::bolasso::CtDiagnostic]) -> Vec<CtRow> {
    per_ct
        .iter()
        .map(|d| CtRow {
            class: class.to_string(),
            ct: d.ct,
            n_features: d.selected.len(),
            lambda: d.lambda,
            used_cv: d.used_cv,
            validation_rmse: d.validation_loss.sqrt(),
        })
        .collect()
}

/// Trains `learner` on the training half of each class and tunes it on the
/// validation half. `b` holds the 2-gram matrices, needed by the hybrids.
pub fn fit_learner(
    u: &ClassData,
    b: Option<&ClassData>,
    learner: &Learner,
    hybrid: Hybrid,
) -> Result<(Fitted, Vec<CtRow>)> {
    let need_b = || b.ok_or_else(|| Error::Config("this hybrid needs a 2-gram score matrix".into()));
    let ub;
    let base = if hybrid == Hybrid::UB {
        let b = need_b()?;
        ub = (union_class_ub(u.train, b.train)?, union_class_ub(u.val, b.val)?);
        ClassData { train: &ub.0, val: &ub.1 }
    } else {
        ClassData { train: u.train, val: u.val }
    };
    match (learner, hybrid) {
        (Learner::Bolasso(cfg), Hybrid::None | Hybrid::UB) => {
            let out = soft_bolasso(base.train, base.val, cfg)?;
            let class = if hybrid == Hybrid::UB { "UB" } else { "U" };
            Ok((Fitted::Linear(out.result), ct_rows(class, &out.per_ct)))
        }
        (Learner::Bolasso(cfg), Hybrid::H | Hybrid::HII) => {
            let b = need_b()?;
            let ou = soft_bolasso(u.train, u.val, cfg)?;
            let ob = soft_bolasso(b.train, b.val, cfg)?;
            let sel = if hybrid == Hybrid::H {
                hybrid_h(&ou.per_ct, &ob.per_ct, u, b)?
            } else {
                hybrid_hii(&ou.per_ct, &ob.per_ct, u, b)?
            };
            let mut rows = ct_rows("U", &ou.per_ct);
            rows.extend(ct_rows("B", &ob.per_ct));
            Ok((Fitted::Linear(sel), rows))
        }
        (Learner::Baseline { k }, Hybrid::None | Hybrid::UB) => {
            Ok((Fitted::Linear(baseline_correlation_select(base.train, base.val, *k)?), Vec::new()))
        }
        (Learner::CartEnsemble(cfg), Hybrid::None) => {
            let ens = fit_bagged_ensemble(&base.train.x, base.train.targets()?, cfg.trees, &cfg.tree, cfg.seed)?;
            let t = select_tree_count(&ens, &base.val.x, base.val.targets()?)?;
            Ok((Fitted::Ensemble(ens, t), Vec::new()))
        }
        (l, h) => Err(Error::Config(format!(
            "hybrid {h:?} cannot be combined with learner {}",
            learner_name(l)
        ))),
    }
}

fn fit_round(data: &CvData, round: &Round, learner: &Learner, hybrid: Hybrid) -> Result<(Fitted, ScoreMatrix)> {
    let split = |m: &ScoreMatrix| {
        (
            m.select_rows(&rows_for(m, &round.train)),
            m.select_rows(&rows_for(m, &round.validate)),
            m.select_rows(&rows_for(m, &round.test)),
        )
    };
    let (utr, uva, ute) = split(data.u);
    let bs = data.b.map(split);
    let bcd = bs.as_ref().map(|(tr, va, _)| ClassData { train: tr, val: va });
    let (fitted, _) = fit_learner(&ClassData { train: &utr, val: &uva }, bcd.as_ref(), learner, hybrid)?;
    let te = match (&bs, hybrid) {
        (Some((_, _, bte)), Hybrid::H | Hybrid::HII | Hybrid::UB) => union_class_ub(&ute, bte)?,
        _ => ute,
    };
    Ok((fitted, te))
}

pub fn learner_name(l: &Learner) -> &'static str {
    match l {
        Learner::Bolasso(_) => "bolasso",
        Learner::CartEnsemble(_) => "cart",
        Learner::Baseline { .. } => "baseline",
    }
}

/// Cross-validated nowcasting: per round, fit on training intervals, pick
/// CT / tree count on the validation half and score the test half with
/// negative inferences clipped to zero.
pub fn run_cv(data: &CvData, plan: &FoldPlan, learner: &Learner, hybrid: Hybrid) -> Result<CvReport> {
    data.u.targets()?;
    if let Some(b) = data.b {
        if b.rows != data.u.rows {
            return Err(Error::Dimension("1-gram and 2-gram matrices have different rows".into()));
        }
        b.targets()?;
    }
    let max_interval = data.u.rows.iter().map(|r| r.interval).max().unwrap_or(0);
    if plan.n_intervals <= max_interval {
        return Err(Error::Input(format!(
            "fold plan covers {} intervals, matrix has {}",
            plan.n_intervals,
            max_interval + 1
        )));
    }
    if matches!(learner, Learner::CartEnsemble(_)) && hybrid != Hybrid::None {
        return Err(Error::Config(format!("hybrid {hybrid:?} cannot be combined with learner cart")));
    }
    let rounds = plan.rounds();
    let reports: Vec<RoundReport> = rounds
        .par_iter()
        .enumerate()
        .map(|(r, round)| {
            let (fitted, te) = fit_round(data, round, learner, hybrid)?;
            let pred = threshold_negative(&fitted.predict(&te)?);
            let actual: Vec<f64> = te.targets()?.iter().copied().collect();
            let predictions: Vec<PredictionRow> = te
                .rows
                .iter()
                .zip(pred.iter().zip(&actual))
                .map(|(k, (&p, &a))| PredictionRow {
                    interval: k.id.clone(),
                    region: k.location.clone().unwrap_or_default(),
                    actual: a,
                    inferred: p,
                })
                .collect();
            let mut by_region: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for row in &predictions {
                let e = by_region.entry(row.region.clone()).or_default();
                e.0.push(row.inferred);
                e.1.push(row.actual);
            }
            let rmse_by_region = by_region
                .into_iter()
                .map(|(k, (p, a))| rmse(&p, &a).map(|v| (k, v)))
                .collect::<Result<_>>()?;
            let (ct, tree_count, features) = match &fitted {
                Fitted::Linear(sel) => (sel.ct, None, sel.features.clone()),
                Fitted::Ensemble(_, t) => (None, Some(*t), Vec::new()),
            };
            Ok(RoundReport {
                round: r,
                rmse: rmse(&pred, &actual)?,
                rmse_by_region,
                ct,
                tree_count,
                features,
                predictions,
            })
        })
        .collect::<Result<_>>()?;

    let mean_rmse = reports.iter().map(|r| r.rmse).sum::<f64>() / reports.len() as f64;
    let (all_p, all_a): (Vec<f64>, Vec<f64>) = reports
        .iter()
        .flat_map(|r| r.predictions.iter().map(|p| (p.inferred, p.actual)))
        .unzip();
    let mut region_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in &reports {
        for (k, v) in &r.rmse_by_region {
            let e = region_sums.entry(k.clone()).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    Ok(CvReport {
        mean_rmse,
        pooled_rmse: rmse(&all_p, &all_a)?,
        mean_rmse_by_region: region_sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        rounds: reports,
    })
}
