//! Soft-Bolasso feature selection with consensus-threshold validation, the
//! hybrid 1-gram/2-gram combiners and the correlation-ranking baseline.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{
    compute_lambdas, lars_lasso_path, lasso_weights_at, ols_fit, resample_rows, LinearModel,
};
use crate::rng;
use crate::stats::{mse, pearson_correlation};
use crate::vsm::ScoreMatrix;

pub use crate::stats::Correlation;

/// Weights below this magnitude count as "not selected".
pub const NONZERO_TOL: f64 = 1e-10;

/// 21 thresholds 0.500, 0.525, ..., 1.000.
pub fn default_ct_grid() -> Vec<f64> {
    (0..=20).map(|i| (500 + 25 * i) as f64 / 1000.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BolassoConfig {
    pub ct_grid: Vec<f64>,
    /// Bootstrap count; `None` means `ceil(0.13 * training rows)`.
    pub bootstraps: Option<usize>,
    pub max_features: usize,
    pub max_iters: usize,
    pub percent_lcr: f64,
    pub cv_folds: usize,
    pub resample_runs: usize,
    pub seed: u64,
}

impl Default for BolassoConfig {
    fn default() -> Self {
        BolassoConfig {
            ct_grid: default_ct_grid(),
            bootstraps: None,
            max_features: 300,
            max_iters: 900,
            percent_lcr: 0.05,
            cv_folds: 5,
            resample_runs: 3,
            seed: 0,
        }
    }
}

impl BolassoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ct_grid.is_empty() {
            return Err(Error::Parameter("ct_grid is empty".into()));
        }
        if self.ct_grid.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return Err(Error::Parameter("ct_grid values must lie in (0, 1]".into()));
        }
        if self.ct_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("ct_grid must be strictly ascending".into()));
        }
        if self.bootstraps == Some(0) {
            return Err(Error::Parameter("bootstraps must be >= 1".into()));
        }
        if self.max_features == 0 || self.max_iters == 0 {
            return Err(Error::Parameter("max_features and max_iters must be >= 1".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Parameter("cv_folds must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.percent_lcr) {
            return Err(Error::Parameter("percent_lcr must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn bootstrap_count(&self, train_rows: usize) -> usize {
        self.bootstraps
            .unwrap_or_else(|| (0.13 * train_rows as f64).ceil() as usize)
            .max(1)
    }
}

/// The consensus threshold(s) a selection was made with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ct {
    Single(f64),
    /// (1-gram CT, 2-gram CT) for the pairwise hybrid.
    Pair(f64, f64),
}

/// Selected features and the least-squares model refitted on them.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Feature ids (space-joined n-grams), in model column order.
    pub features: Vec<String>,
    pub model: LinearModel,
    /// `None` for selections made without a consensus threshold.
    pub ct: Option<Ct>,
    /// Validation mean squared error of the refit.
    pub validation_loss: f64,
    /// Set when nothing was selected and the model predicts the training mean.
    pub empty: bool,
}

/// JSON form: `{features, weights, bias, ct, validation_rmse}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub features: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub ct: Option<Ct>,
    pub validation_rmse: f64,
}

impl SelectionResult {
    pub fn record(&self) -> SelectionRecord {
        SelectionRecord {
            features: self.features.clone(),
            weights: self.model.weights.clone(),
            bias: self.model.bias,
            ct: self.ct,
            validation_rmse: self.validation_loss.sqrt(),
        }
    }
}

impl SelectionRecord {
    /// Predictions for every row of `m`, whose vocabulary must contain all
    /// selected features.
    pub fn predict(&self, m: &ScoreMatrix) -> Result<DVector<f64>> {
        let cols = lookup_columns(m, &self.features)?;
        let x = m.x.select_columns(cols.iter());
        LinearModel {
            weights: self.weights.clone(),
            bias: self.bias,
        }
        .predict(&x)
    }
}

/// Column indices of `features` within `m`.
pub fn lookup_columns(m: &ScoreMatrix, features: &[String]) -> Result<Vec<usize>> {
    let ids = m.feature_ids();
    let index: std::collections::HashMap<&str, usize> =
        ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    features
        .iter()
        .map(|f| {
            index
                .get(f.as_str())
                .copied()
                .ok_or_else(|| Error::Input(format!("feature {f:?} missing from score matrix")))
        })
        .collect()
}

/// Outcome of one consensus threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CtDiagnostic {
    pub ct: f64,
    /// Selected column indices, ascending.
    pub selected: Vec<usize>,
    /// Largest lambda at which `selected` is the consensus set.
    pub lambda: f64,
    /// True when the consistent region was too short and cross-validation chose lambda.
    pub used_cv: bool,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BolassoOutcome {
    pub result: SelectionResult,
    pub per_ct: Vec<CtDiagnostic>,
    pub lambdas: Vec<f64>,
    pub bootstraps: usize,
}

/// Uniform-with-replacement resample of paired rows.
pub fn bootstrap_sample(x: &DMatrix<f64>, y: &DVector<f64>, rng: &mut rng::Rng) -> (DMatrix<f64>, DVector<f64>) {
    resample_rows(x, y, rng)
}

/// Longest run of consecutive lambdas with an identical selected set.
/// Equal-length runs resolve to the one at larger lambda (earlier in the
/// descending list). Returns the set and the index range of the run.
pub fn largest_consistent_region(
    lambdas: &[f64],
    selected_sets: &[Vec<usize>],
) -> Result<(Vec<usize>, std::ops::Range<usize>)> {
    if lambdas.len() != selected_sets.len() {
        return Err(Error::Dimension(format!(
            "{} lambdas but {} selected sets",
            lambdas.len(),
            selected_sets.len()
        )));
    }
    if lambdas.is_empty() {
        return Err(Error::EmptyData("no lambdas".into()));
    }
    let mut best = 0..1;
    let mut start = 0;
    for i in 1..=selected_sets.len() {
        if i == selected_sets.len() || selected_sets[i] != selected_sets[start] {
            if i - start > best.len() {
                best = start..i;
            }
            start = i;
        }
    }
    Ok((selected_sets[best.start].clone(), best))
}

fn check_pair(train: &ScoreMatrix, val: &ScoreMatrix) -> Result<()> {
    if train.vocabulary != val.vocabulary {
        return Err(Error::Input("training and validation vocabularies differ".into()));
    }
    if val.n_rows() == 0 {
        return Err(Error::EmptyData("validation set has no rows".into()));
    }
    Ok(())
}

/// OLS refit of `cols` on the training data, scored on validation.
fn refit(
    xt: &DMatrix<f64>,
    yt: &DVector<f64>,
    xv: &DMatrix<f64>,
    yv: &DVector<f64>,
    cols: &[usize],
) -> Result<(LinearModel, f64)> {
    let model = ols_fit(&xt.select_columns(cols.iter()), yt, true)?;
    let pred = model.predict(&xv.select_columns(cols.iter()))?;
    let loss = mse(pred.as_slice(), yv.as_slice())?;
    Ok((model, loss))
}

/// Per-lambda mean held-out MSE of the LASSO fit, over contiguous folds.
fn cv_lasso_losses(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambdas: &[f64],
    folds: usize,
    cfg: &BolassoConfig,
) -> Result<Vec<f64>> {
    let m = x.nrows();
    let folds = folds.min(m);
    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let lo = f * m / folds;
            let hi = (f + 1) * m / folds;
            let train: Vec<usize> = (0..m).filter(|&i| i < lo || i >= hi).collect();
            let held: Vec<usize> = (lo..hi).collect();
            let xt = x.select_rows(train.iter());
            let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
            let xh = x.select_rows(held.iter());
            let yh: Vec<f64> = held.iter().map(|&i| y[i]).collect();
            let path = lars_lasso_path(&xt, &yt, cfg.max_features, cfg.max_iters)?;
            lambdas
                .iter()
                .map(|&l| {
                    let model = path.standardization.destandardize(&lasso_weights_at(&path, l));
                    mse(model.predict(&xh)?.as_slice(), &yh)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..lambdas.len())
        .map(|i| per_fold.iter().map(|f| f[i]).sum::<f64>() / folds as f64)
        .collect())
}

/// Soft-Bolasso with consensus-threshold validation.
pub fn soft_bolasso(train: &ScoreMatrix, val: &ScoreMatrix, cfg: &BolassoConfig) -> Result<BolassoOutcome> {
    cfg.validate()?;
    check_pair(train, val)?;
    let x = &train.x;
    let y = train.targets()?;
    let (xv, yv) = (&val.x, val.targets()?);
    let m = x.nrows();
    if m < 2 {
        return Err(Error::InsufficientData("soft-Bolasso needs at least 2 training rows".into()));
    }
    let p = x.ncols();
    let lambdas = compute_lambdas(
        x,
        y,
        cfg.resample_runs,
        cfg.max_features,
        cfg.max_iters,
        rng::sub_seed(cfg.seed, 0),
    )?;
    let b = cfg.bootstrap_count(m);
    let boot_seed = rng::sub_seed(cfg.seed, 1);

    // counts[l * p + j]: bootstraps in which feature j is nonzero at lambdas[l].
    let per_boot: Vec<Vec<u32>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::sub_stream(boot_seed, k as u64);
            let (xs, ys) = bootstrap_sample(x, y, &mut r);
            let path = lars_lasso_path(&xs, &ys, cfg.max_features, cfg.max_iters)?;
            let mut hits = vec![0u32; lambdas.len() * p];
            for (l, &lam) in lambdas.iter().enumerate() {
                let w = lasso_weights_at(&path, lam);
                for j in 0..p {
                    if w[j].abs() > NONZERO_TOL {
                        hits[l * p + j] = 1;
                    }
                }
            }
            Ok(hits)
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0u32; lambdas.len() * p];
    for hits in &per_boot {
        for (c, h) in counts.iter_mut().zip(hits) {
            *c += h;
        }
    }

    let min_run = cfg.percent_lcr * lambdas.len() as f64;
    let mut cv_losses: Option<Vec<f64>> = None;
    let mut per_ct = Vec::with_capacity(cfg.ct_grid.len());
    for &ct in &cfg.ct_grid {
        let need = ct * b as f64;
        let sets: Vec<Vec<usize>> = (0..lambdas.len())
            .map(|l| {
                (0..p)
                    .filter(|&j| counts[l * p + j] as f64 >= need - 1e-9)
                    .collect()
            })
            .collect();
        let (set, run) = largest_consistent_region(&lambdas, &sets)?;
        let (selected, lambda, used_cv) = if (run.len() as f64) < min_run {
            if cv_losses.is_none() {
                cv_losses = Some(cv_lasso_losses(x, y, &lambdas, cfg.cv_folds, cfg)?);
            }
            let losses = cv_losses.as_ref().expect("just computed");
            let best = argmin_first(losses);
            (sets[best].clone(), lambdas[best], true)
        } else {
            (set, lambdas[run.start], false)
        };
        let (_, loss) = refit(x, y, xv, yv, &selected)?;
        per_ct.push(CtDiagnostic {
            ct,
            selected,
            lambda,
            used_cv,
            validation_loss: loss,
        });
    }

    let best = argmin_first(&per_ct.iter().map(|d| d.validation_loss).collect::<Vec<_>>());
    let win = &per_ct[best];
    let (model, loss) = refit(x, y, xv, yv, &win.selected)?;
    let ids = train.feature_ids();
    let empty = win.selected.is_empty();
    if empty {
        warn!("soft-Bolasso selected no features at the winning threshold");
    }
    Ok(BolassoOutcome {
        result: SelectionResult {
            features: win.selected.iter().map(|&j| ids[j].clone()).collect(),
            model,
            ct: Some(Ct::Single(win.ct)),
            validation_loss: loss,
            empty,
        },
        per_ct,
        lambdas,
        bootstraps: b,
    })
}

/// Index of the first minimum (NaN never wins).
fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] || v[best].is_nan() {
            best = i;
        }
    }
    best
}

/// One training/validation pair per feature class.
pub struct ClassData<'a> {
    pub train: &'a ScoreMatrix,
    pub val: &'a ScoreMatrix,
}

fn union_refit(
    u: &ClassData,
    b: &ClassData,
    su: &[usize],
    sb: &[usize],
) -> Result<(Vec<String>, LinearModel, f64)> {
    let xt = hstack(&u.train.x.select_columns(su.iter()), &b.train.x.select_columns(sb.iter()));
    let xv = hstack(&u.val.x.select_columns(su.iter()), &b.val.x.select_columns(sb.iter()));
    let (model, loss) = refit(&xt, u.train.targets()?, &xv, u.val.targets()?, &(0..su.len() + sb.len()).collect::<Vec<_>>())?;
    let uid = u.train.feature_ids();
    let bid = b.train.feature_ids();
    let features = su
        .iter()
        .map(|&j| uid[j].clone())
        .chain(sb.iter().map(|&j| bid[j].clone()))
        .collect();
    Ok((features, model, loss))
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn check_hybrid(sel_u: &[CtDiagnostic], sel_b: &[CtDiagnostic], u: &ClassData, b: &ClassData) -> Result<()> {
    if sel_u.is_empty() || sel_b.is_empty() {
        return Err(Error::EmptyData("hybrid needs at least one CT per class".into()));
    }
    if u.train.n_rows() != b.train.n_rows() || u.val.n_rows() != b.val.n_rows() {
        return Err(Error::Dimension("1-gram and 2-gram matrices have different rows".into()));
    }
    if u.train.targets()? != b.train.targets()? || u.val.targets()? != b.val.targets()? {
        return Err(Error::Input("1-gram and 2-gram targets differ".into()));
    }
    Ok(())
}

/// Hybrid H: at each CT, the union of the 1-gram and 2-gram selections is
/// refitted; the CT with the lowest validation MSE wins (smallest CT on ties).
pub fn hybrid_h(
    sel_u: &[CtDiagnostic],
    sel_b: &[CtDiagnostic],
    u: &ClassData,
    b: &ClassData,
) -> Result<SelectionResult> {
    check_hybrid(sel_u, sel_b, u, b)?;
    if sel_u.len() != sel_b.len() || sel_u.iter().zip(sel_b).any(|(a, c)| a.ct != c.ct) {
        return Err(Error::Input("hybrid H needs both classes on the same CT grid".into()));
    }
    let mut best: Option<SelectionResult> = None;
    for (du, db) in sel_u.iter().zip(sel_b) {
        let (features, model, loss) = union_refit(u, b, &du.selected, &db.selected)?;
        if best.as_ref().is_none_or(|r| loss < r.validation_loss) {
            best = Some(SelectionResult {
                empty: features.is_empty(),
                features,
                model,
                ct: Some(Ct::Single(du.ct)),
                validation_loss: loss,
            });
        }
    }
    Ok(best.expect("non-empty grid"))
}

/// Hybrid H_II: every (1-gram CT, 2-gram CT) pair is refitted.
pub fn hybrid_hii(
    sel_u: &[CtDiagnostic],
    sel_b: &[CtDiagnostic],
    u: &ClassData,
    b: &ClassData,
) -> Result<SelectionResult> {
    check_hybrid(sel_u, sel_b, u, b)?;
    let mut best: Option<SelectionResult> = None;
    for du in sel_u {
        for db in sel_b {
            let (features, model, loss) = union_refit(u, b, &du.selected, &db.selected)?;
            if best.as_ref().is_none_or(|r| loss < r.validation_loss) {
                best = Some(SelectionResult {
                    empty: features.is_empty(),
                    features,
                    model,
                    ct: Some(Ct::Pair(du.ct, db.ct)),
                    validation_loss: loss,
                });
            }
        }
    }
    Ok(best.expect("non-empty grid"))
}

/// Column concatenation of a 1-gram and a 2-gram score matrix.
pub fn union_class_ub(u: &ScoreMatrix, b: &ScoreMatrix) -> Result<ScoreMatrix> {
    if u.rows != b.rows {
        return Err(Error::Dimension(format!(
            "row mismatch: {} vs {} rows",
            u.n_rows(),
            b.n_rows()
        )));
    }
    let vocabulary = u.vocabulary.concat(&b.vocabulary)?;
    ScoreMatrix::new(hstack(&u.x, &b.x), vocabulary, u.rows.clone(), u.y.clone().or_else(|| b.y.clone()))
}

/// Features ranked by signed Pearson correlation with the target, highest
/// first; constant features rank as 0. Ties keep column order.
pub fn correlation_ranking(train: &ScoreMatrix) -> Result<Vec<(usize, f64)>> {
    let y = train.targets()?;
    let mut ranked: Vec<(usize, f64)> = (0..train.n_features())
        .map(|j| {
            let col: Vec<f64> = train.x.column(j).iter().copied().collect();
            pearson_correlation(&col, y.as_slice()).map(|c| (j, c.r))
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Correlation baseline: refit the top-i ranked features for i = 1..=k and
/// keep the prefix with the lowest validation MSE (shortest on ties).
pub fn baseline_correlation_select(train: &ScoreMatrix, val: &ScoreMatrix, k: usize) -> Result<SelectionResult> {
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    check_pair(train, val)?;
    let ranked = correlation_ranking(train)?;
    let kmax = k.min(ranked.len());
    let (x, y) = (&train.x, train.targets()?);
    let (xv, yv) = (&val.x, val.targets()?);
    let losses: Vec<f64> = (1..=kmax)
        .into_par_iter()
        .map(|i| {
            let cols: Vec<usize> = ranked[..i].iter().map(|r| r.0).collect();
            refit(x, y, xv, yv, &cols).map(|r| r.1)
        })
        .collect::<Result<_>>()?;
    let ids = train.feature_ids();
    if losses.is_empty() {
        let (model, loss) = refit(x, y, xv, yv, &[])?;
        return Ok(SelectionResult {
            features: Vec::new(),
            model,
            ct: None,
            validation_loss: loss,
            empty: true,
        });
    }
    let best = argmin_first(&losses) + 1;
    let cols: Vec<usize> = ranked[..best].iter().map(|r| r.0).collect();
    let (model, loss) = refit(x, y, xv, yv, &cols)?;
    Ok(SelectionResult {
        features: cols.iter().map(|&j| ids[j].clone()).collect(),
        model,
        ct: None,
        validation_loss: loss,
        empty: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lcr_examples() {
        let l = [5.0, 4.0, 3.0, 2.0, 1.0];
        let a = vec![0];
        let bset = vec![0, 1];
        let (s, r) = largest_consistent_region(&l, &vec![a.clone(); 5]).unwrap();
        assert_eq!((s, r), (a.clone(), 0..5));
        let sets = vec![a.clone(), a.clone(), bset.clone(), bset.clone(), bset.clone()];
        assert_eq!(largest_consistent_region(&l, &sets).unwrap(), (bset.clone(), 2..5));
        let alt = vec![a.clone(), bset.clone(), a.clone(), bset.clone(), a.clone()];
        assert_eq!(largest_consistent_region(&l, &alt).unwrap(), (a, 0..1));
        assert!(largest_consistent_region(&l[..2], &sets).is_err());
    }

    #[test]
    fn ct_grid_default() {
        let g = default_ct_grid();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[20], 1.0);
        assert_eq!(g[1], 0.525);
    }

    #[test]
    fn bootstrap_single_row() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = DVector::from_vec(vec![3.0]);
        let mut r = rng::stream(1);
        let (xs, ys) = bootstrap_sample(&x, &y, &mut r);
        assert_eq!((xs, ys), (x, y));
    }
}
