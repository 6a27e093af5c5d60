//! Linear learners: least squares with an intercept, ridge, and the LARS
//! algorithm with the LASSO modification.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// `y ≈ X w + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn intercept_only(bias: f64, n_features: usize) -> Self {
        LinearModel {
            weights: vec![0.0; n_features],
            bias,
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "model has {} weights, input has {} columns",
                self.weights.len(),
                x.ncols()
            )));
        }
        let w = DVector::from_column_slice(&self.weights);
        Ok((x * w).add_scalar(self.bias))
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>()
    }
}

fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyData("no training rows".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in X or y".into()));
    }
    Ok(())
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Minimum-norm least squares through the SVD pseudo-inverse.
fn lstsq(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = a.nrows().max(a.ncols()) as f64 * smax * f64::EPSILON;
    svd.solve(y, eps).expect("u and v were computed")
}

/// Ordinary least squares. Rank-deficient designs get the minimum-norm solution.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>, with_bias: bool) -> Result<LinearModel> {
    check_xy(x, y)?;
    if with_bias {
        let beta = lstsq(&with_intercept(x), y);
        Ok(LinearModel {
            weights: beta.iter().skip(1).copied().collect(),
            bias: beta[0],
        })
    } else {
        Ok(LinearModel {
            weights: lstsq(x, y).iter().copied().collect(),
            bias: 0.0,
        })
    }
}

/// Ridge regression with an unpenalized intercept.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LinearModel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    check_xy(x, y)?;
    if lambda == 0.0 {
        return ols_fit(x, y, true);
    }
    let a = with_intercept(x);
    let mut m = a.tr_mul(&a);
    for i in 1..m.nrows() {
        m[(i, i)] += lambda;
    }
    let rhs = a.tr_mul(y);
    let beta = match Cholesky::new(m.clone()) {
        Some(ch) => ch.solve(&rhs),
        None => lstsq(&m, &rhs),
    };
    Ok(LinearModel {
        weights: beta.iter().skip(1).copied().collect(),
        bias: beta[0],
    })
}

/// Column means and population standard deviations, plus the response mean.
/// Columns with (numerically) zero spread get std 0 and are left out of fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub y_mean: f64,
}

impl Standardization {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut stds = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            means.push(mean);
            stds.push(if std > 1e-12 * scale.max(f64::MIN_POSITIVE) { std } else { 0.0 });
        }
        Standardization {
            means,
            stds,
            y_mean: y.mean(),
        }
    }

    /// Standardized design; excluded columns are all zero.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            if s > 0.0 {
                col.iter_mut().for_each(|v| *v = (*v - m) / s);
            } else {
                col.fill(0.0);
            }
        }
        z
    }

    /// Maps standardized weights back to the original feature scale.
    pub fn destandardize(&self, w: &DVector<f64>) -> LinearModel {
        let weights: Vec<f64> = w
            .iter()
            .zip(&self.stds)
            .map(|(w, s)| if *s > 0.0 { w / s } else { 0.0 })
            .collect();
        let bias = self.y_mean - weights.iter().zip(&self.means).map(|(w, m)| w * m).sum::<f64>();
        LinearModel { weights, bias }
    }
}

/// One breakpoint of the LASSO path. `weights` are on the standardized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Knot {
    pub lambda: f64,
    pub weights: DVector<f64>,
    pub active: Vec<usize>,
}

/// Piecewise-linear LASSO path for the objective
/// `0.5 * ||y_c - Z w||^2 + lambda * ||w||_1` over the standardized design `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationPath {
    pub knots: Vec<Knot>,
    pub standardization: Standardization,
}

impl RegularizationPath {
    pub fn lambdas(&self) -> Vec<f64> {
        self.knots.iter().map(|k| k.lambda).collect()
    }

    pub fn n_features(&self) -> usize {
        self.standardization.means.len()
    }
}

/// Incrementally maintained Cholesky factor of the active Gram matrix.
struct ActiveSet {
    idx: Vec<usize>,
    signs: Vec<f64>,
    l: DMatrix<f64>,
}

impl ActiveSet {
    fn new() -> Self {
        ActiveSet {
            idx: Vec::new(),
            signs: Vec::new(),
            l: DMatrix::zeros(0, 0),
        }
    }

    fn len(&self) -> usize {
        self.idx.len()
    }

    /// Tries to append column `j`. Returns false when it is (numerically)
    /// a linear combination of the active columns.
    fn push(&mut self, z: &DMatrix<f64>, j: usize, sign: f64) -> bool {
        let k = self.len();
        let zj = z.column(j);
        let g: DVector<f64> = DVector::from_iterator(k, self.idx.iter().map(|&i| z.column(i).dot(&zj)));
        let l12 = if k > 0 {
            self.l
                .solve_lower_triangular(&g)
                .unwrap_or_else(|| DVector::zeros(k))
        } else {
            DVector::zeros(0)
        };
        let djj = zj.norm_squared() - l12.norm_squared();
        if djj <= 1e-10 * zj.norm_squared().max(1.0) {
            return false;
        }
        let mut l = DMatrix::zeros(k + 1, k + 1);
        l.view_mut((0, 0), (k, k)).copy_from(&self.l);
        for c in 0..k {
            l[(k, c)] = l12[c];
        }
        l[(k, k)] = djj.sqrt();
        self.l = l;
        self.idx.push(j);
        self.signs.push(sign);
        true
    }

    /// Drops the variable at `pos`. Deleting its row leaves L lower
    /// Hessenberg; Givens rotations on column pairs restore the triangle.
    fn remove(&mut self, pos: usize) {
        self.idx.remove(pos);
        self.signs.remove(pos);
        let m = self.l.nrows();
        let mut l = std::mem::replace(&mut self.l, DMatrix::zeros(0, 0)).remove_row(pos);
        for j in pos..m - 1 {
            let (a, b) = (l[(j, j)], l[(j, j + 1)]);
            let r = a.hypot(b);
            if r == 0.0 {
                continue;
            }
            let (c, s) = (a / r, b / r);
            for i in j..m - 1 {
                let (x, y) = (l[(i, j)], l[(i, j + 1)]);
                l[(i, j)] = c * x + s * y;
                l[(i, j + 1)] = c * y - s * x;
            }
        }
        self.l = l.remove_column(m - 1);
    }

    /// Solves `G_A d = s_A`.
    fn direction(&self) -> DVector<f64> {
        let s = DVector::from_column_slice(&self.signs);
        let t = self.l.solve_lower_triangular(&s).expect("positive diagonal");
        self.l.tr_solve_lower_triangular(&t).expect("positive diagonal")
    }
}

/// Relative tolerance for treating two correlations as tied.
const TIE_TOL: f64 = 1e-12;

/// LARS with the LASSO modification.
///
/// Stops after `max_iters` steps, once `max_features` variables are active,
/// or at lambda = 0. When every usable variable is active (bounded by the
/// rank of the centered design, at most N - 1) the last segment runs to the
/// least-squares fit at lambda = 0.
pub fn lars_lasso_path(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    max_features: usize,
    max_iters: usize,
) -> Result<RegularizationPath> {
    check_xy(x, y)?;
    if max_features == 0 {
        return Err(Error::Parameter("max_features must be >= 1".into()));
    }
    let n = x.nrows();
    let p = x.ncols();
    let stdz = Standardization::fit(x, y);
    let z = stdz.apply(x);
    let yc = y.add_scalar(-stdz.y_mean);

    let mut usable: Vec<bool> = stdz.stds.iter().map(|&s| s > 0.0).collect();
    let mut w = DVector::<f64>::zeros(p);
    let mut r = yc.clone();
    let mut c = z.tr_mul(&r);
    let mut lambda = c.amax();
    let mut knots = vec![Knot {
        lambda,
        weights: w.clone(),
        active: Vec::new(),
    }];

    let y_scale = yc.amax();
    if n < 2 || lambda <= 1e-13 * (y_scale * n as f64).max(f64::MIN_POSITIVE) {
        knots[0].lambda = lambda.max(0.0);
        return Ok(RegularizationPath {
            knots,
            standardization: stdz,
        });
    }

    let rank_cap = numerical_rank(&z).min(usable.iter().filter(|&&u| u).count());
    let mut active = ActiveSet::new();
    let mut in_active = vec![false; p];
    let mut just_dropped: Option<usize> = None;

    // First entry.
    if !admit_next(&z, &c, &mut usable, &in_active, &mut active, None) {
        return Ok(RegularizationPath {
            knots,
            standardization: stdz,
        });
    }
    for &j in &active.idx {
        in_active[j] = true;
    }

    for _ in 0..max_iters {
        let full = active.len() >= rank_cap;
        if active.len() >= max_features && !full {
            break;
        }
        let d_a = active.direction();
        let mut u = DVector::<f64>::zeros(n);
        for (k, &j) in active.idx.iter().enumerate() {
            u.axpy(d_a[k], &z.column(j), 1.0);
        }
        let a = z.tr_mul(&u);

        let mut gamma = lambda;
        let mut entering: Option<usize> = None;
        if !full {
            for j in 0..p {
                if in_active[j] || !usable[j] {
                    continue;
                }
                // A variable that just left sits on the bound; only a genuine
                // later crossing may bring it back.
                let floor = if Some(j) == just_dropped { 1e-9 * lambda } else { -1e-12 * lambda };
                for cand in [(lambda - c[j]) / (1.0 - a[j]), (lambda + c[j]) / (1.0 + a[j])] {
                    if cand > floor && cand < gamma * (1.0 - TIE_TOL) {
                        gamma = cand.max(0.0);
                        entering = Some(j);
                    }
                }
            }
        }
        let mut dropping: Option<usize> = None;
        for (k, &j) in active.idx.iter().enumerate() {
            if d_a[k] == 0.0 {
                continue;
            }
            let g = -w[j] / d_a[k];
            if g > 1e-14 * lambda && g < gamma {
                gamma = g;
                dropping = Some(k);
                entering = None;
            }
        }

        for (k, &j) in active.idx.iter().enumerate() {
            w[j] += gamma * d_a[k];
        }
        r.axpy(-gamma, &u, 1.0);
        lambda -= gamma;
        if lambda < 1e-12 * knots[0].lambda {
            lambda = 0.0;
        }
        c = z.tr_mul(&r);
        just_dropped = None;

        if let Some(k) = dropping {
            let j = active.idx[k];
            w[j] = 0.0;
            in_active[j] = false;
            active.remove(k);
            just_dropped = Some(j);
        }
        if let Some(j) = entering {
            if lambda > 0.0 && active.push(&z, j, c[j].signum()) {
                in_active[j] = true;
            } else {
                usable[j] = false;
            }
        }
        push_knot(&mut knots, lambda, &w, &active.idx);
        if lambda == 0.0 {
            break;
        }
        if active.len() == 0 {
            if !admit_next(&z, &c, &mut usable, &in_active, &mut active, just_dropped) {
                break;
            }
            for &j in &active.idx {
                in_active[j] = true;
            }
            knots.last_mut().expect("non-empty").active = active.idx.clone();
        }
    }

    for k in &mut knots {
        k.active.sort_unstable();
    }
    Ok(RegularizationPath {
        knots,
        standardization: stdz,
    })
}

/// Rank of the (centered) standardized design; resampled rows make it
/// smaller than N - 1.
fn numerical_rank(z: &DMatrix<f64>) -> usize {
    let sv = z.singular_values();
    let top = sv.max();
    let tol = 1e-10 * top * z.nrows().max(z.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Admits the usable variable with the largest absolute correlation
/// (lowest index on ties) into an empty active set.
fn admit_next(
    z: &DMatrix<f64>,
    c: &DVector<f64>,
    usable: &mut [bool],
    in_active: &[bool],
    active: &mut ActiveSet,
    skip: Option<usize>,
) -> bool {
    loop {
        let best = (0..c.len())
            .filter(|&j| usable[j] && !in_active[j] && Some(j) != skip)
            .fold(None::<usize>, |best, j| match best {
                Some(b) if c[j].abs() <= c[b].abs() * (1.0 + TIE_TOL) => Some(b),
                _ => Some(j),
            });
        let Some(j) = best else { return false };
        if c[j] == 0.0 {
            return false;
        }
        if active.push(z, j, c[j].signum()) {
            return true;
        }
        usable[j] = false;
    }
}

/// Appends a knot, merging with the previous one when lambda did not move.
fn push_knot(knots: &mut Vec<Knot>, lambda: f64, w: &DVector<f64>, active: &[usize]) {
    let last = knots.last_mut().expect("path starts with a knot");
    if lambda >= last.lambda {
        last.weights = w.clone();
        last.active = active.to_vec();
        return;
    }
    knots.push(Knot {
        lambda,
        weights: w.clone(),
        active: active.to_vec(),
    });
}

/// Standardized weights at `lambda`, interpolated linearly between knots.
pub fn lasso_weights_at(path: &RegularizationPath, lambda: f64) -> DVector<f64> {
    let knots = &path.knots;
    let first = &knots[0];
    if lambda >= first.lambda {
        return DVector::zeros(first.weights.len());
    }
    let last = knots.last().expect("non-empty path");
    if lambda <= last.lambda {
        return last.weights.clone();
    }
    // knots[k].lambda >= lambda > knots[k + 1].lambda
    let k = knots.partition_point(|kn| kn.lambda >= lambda) - 1;
    let (a, b) = (&knots[k], &knots[k + 1]);
    let t = (a.lambda - lambda) / (a.lambda - b.lambda);
    &a.weights * (1.0 - t) + &b.weights * t
}

/// The path's model at `lambda`, on the original feature scale.
pub fn lasso_at(path: &RegularizationPath, lambda: f64) -> LinearModel {
    path.standardization
        .destandardize(&lasso_weights_at(path, lambda))
}

/// Resamples rows uniformly with replacement.
pub fn resample_rows(x: &DMatrix<f64>, y: &DVector<f64>, rng: &mut rng::Rng) -> (DMatrix<f64>, DVector<f64>) {
    use rand::Rng as _;
    let m = x.nrows();
    let rows: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
    let xs = x.select_rows(rows.iter());
    let ys = DVector::from_iterator(m, rows.iter().map(|&r| y[r]));
    (xs, ys)
}

/// Union of knot lambdas from a full-data path and `resample_runs` paths on
/// bootstrap resamples, deduplicated at relative tolerance 1e-9 and sorted
/// descending. Full-data lambdas are always kept verbatim.
pub fn compute_lambdas(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    resample_runs: usize,
    max_features: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let full = lars_lasso_path(x, y, max_features, max_iters)?;
    let extra: Vec<Vec<f64>> = (0..resample_runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::sub_stream(seed, i as u64);
            let (xs, ys) = resample_rows(x, y, &mut rng);
            lars_lasso_path(&xs, &ys, max_features, max_iters).map(|p| p.lambdas())
        })
        .collect::<Result<_>>()?;
    // Ascending while building.
    let mut kept: Vec<f64> = Vec::new();
    let mut insert = |v: f64| {
        let pos = kept.partition_point(|&k| k < v);
        let close = |k: f64| (k - v).abs() <= 1e-9 * k.abs().max(v.abs());
        if (pos > 0 && close(kept[pos - 1])) || (pos < kept.len() && close(kept[pos])) {
            return;
        }
        kept.insert(pos, v);
    };
    full.lambdas().into_iter().for_each(&mut insert);
    extra.into_iter().flatten().for_each(&mut insert);
    kept.reverse();
    Ok(kept)
}
