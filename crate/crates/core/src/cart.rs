//! Least-squares regression trees, weakest-link pruning and bagged ensembles.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{mse, sample_std, Z975};

/// A tree node. Internal nodes keep the statistics of the samples that
/// reached them so pruning can turn them back into leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
        count: usize,
        sse: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        value: f64,
        count: usize,
        sse: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn value(&self) -> f64 {
        match self {
            Node::Leaf { value, .. } | Node::Split { value, .. } => *value,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            Node::Leaf { count, .. } | Node::Split { count, .. } => *count,
        }
    }

    pub fn sse(&self) -> f64 {
        match self {
            Node::Leaf { sse, .. } | Node::Split { sse, .. } => *sse,
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    /// Depth below this node; a leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Sum of leaf SSEs in the subtree.
    pub fn leaf_sse(&self) -> f64 {
        match self {
            Node::Leaf { sse, .. } => *sse,
            Node::Split { left, right, .. } => left.leaf_sse() + right.leaf_sse(),
        }
    }

    fn collapse(&self) -> Node {
        Node::Leaf {
            value: self.value(),
            count: self.count(),
            sse: self.sse(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: Node,
    pub n_features: usize,
}

impl RegressionTree {
    pub fn leaves(&self) -> usize {
        self.root.leaves()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Goes left iff the value is at most the threshold.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() < self.n_features {
            return Err(Error::Input(format!(
                "row has {} features, tree expects {}",
                x.len(),
                self.n_features
            )));
        }
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value, .. } => return Ok(*value),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.predict(&row)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub min_leaf: usize,
    /// `None` grows until another rule stops it.
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_leaf: 5,
            max_depth: None,
        }
    }
}

fn node_stats(y: &DVector<f64>, idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    let sse = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>();
    (mean, sse)
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Best split of `idx`: largest SSE decrease, then lowest feature, then
/// smallest threshold.
fn best_split(x: &DMatrix<f64>, y: &DVector<f64>, idx: &[usize], mean: f64, sse: f64, min_leaf: usize) -> Option<Split> {
    let n = idx.len();
    if n < 2 * min_leaf {
        return None;
    }
    let tol = 1e-12 * sse.max(f64::MIN_POSITIVE);
    let mut best: Option<Split> = None;
    let mut order: Vec<usize> = idx.to_vec();
    for f in 0..x.ncols() {
        order.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]));
        // Centered responses keep the running sums well conditioned.
        let total: f64 = order.iter().map(|&i| y[i] - mean).sum();
        let mut s_left = 0.0;
        for k in 0..n - 1 {
            s_left += y[order[k]] - mean;
            let nl = k + 1;
            let nr = n - nl;
            let (v, v_next) = (x[(order[k], f)], x[(order[k + 1], f)]);
            if v == v_next || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let s_right = total - s_left;
            // Decrease in SSE from splitting: sum_L^2/n_L + sum_R^2/n_R - total^2/n.
            let gain = s_left * s_left / nl as f64 + s_right * s_right / nr as f64 - total * total / n as f64;
            if best.as_ref().is_none_or(|b| gain > b.gain + tol) {
                best = Some(Split {
                    feature: f,
                    threshold: v + (v_next - v) / 2.0,
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > tol)
}

fn grow(x: &DMatrix<f64>, y: &DVector<f64>, idx: Vec<usize>, params: &TreeParams, depth: usize) -> Node {
    let (value, sse) = node_stats(y, &idx);
    let count = idx.len();
    let leaf = Node::Leaf { value, count, sse };
    if params.max_depth.is_some_and(|d| depth >= d) || sse <= 0.0 {
        return leaf;
    }
    let Some(split) = best_split(x, y, &idx, value, sse, params.min_leaf) else {
        return leaf;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[(i, split.feature)] <= split.threshold);
    Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        value,
        count,
        sse,
        left: Box::new(grow(x, y, l, params, depth + 1)),
        right: Box::new(grow(x, y, r, params, depth + 1)),
    }
}

/// Greedy least-squares tree.
pub fn fit_tree(x: &DMatrix<f64>, y: &DVector<f64>, params: &TreeParams) -> Result<RegressionTree> {
    if x.nrows() == 0 {
        return Err(Error::EmptyData("no training rows".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if params.min_leaf == 0 {
        return Err(Error::Parameter("min_leaf must be >= 1".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in X or y".into()));
    }
    Ok(RegressionTree {
        root: grow(x, y, (0..x.nrows()).collect(), params, 0),
        n_features: x.ncols(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneStep {
    pub alpha: f64,
    pub tree: RegressionTree,
    pub leaves: usize,
    pub depth: usize,
}

/// Nested subtrees from the full tree down to the root, with the critical
/// complexity parameter at which each becomes optimal.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningSequence {
    pub steps: Vec<PruneStep>,
}

/// Smallest weakest-link value `(R(t) - R(T_t)) / (|T_t| - 1)` in the subtree.
fn min_link(node: &Node) -> Option<f64> {
    match node {
        Node::Leaf { .. } => None,
        Node::Split { left, right, sse, .. } => {
            let g = (sse - node.leaf_sse()) / (node.leaves() - 1) as f64;
            [Some(g), min_link(left), min_link(right)]
                .into_iter()
                .flatten()
                .reduce(f64::min)
        }
    }
}

/// Collapses every internal node whose link value is within `tol` of `alpha`.
fn collapse_at(node: &Node, alpha: f64, tol: f64) -> Node {
    match node {
        Node::Leaf { .. } => node.clone(),
        Node::Split {
            feature,
            threshold,
            value,
            count,
            sse,
            left,
            right,
        } => {
            let g = (sse - node.leaf_sse()) / (node.leaves() - 1) as f64;
            if g <= alpha + tol {
                return node.collapse();
            }
            Node::Split {
                feature: *feature,
                threshold: *threshold,
                value: *value,
                count: *count,
                sse: *sse,
                left: Box::new(collapse_at(left, alpha, tol)),
                right: Box::new(collapse_at(right, alpha, tol)),
            }
        }
    }
}

/// Weakest-link pruning. The first step is the full tree at alpha 0.
pub fn prune_sequence(tree: &RegressionTree) -> PruningSequence {
    let step = |t: RegressionTree, alpha: f64| PruneStep {
        alpha,
        leaves: t.leaves(),
        depth: t.depth(),
        tree: t,
    };
    let scale = tree.root.sse().max(f64::MIN_POSITIVE);
    let mut steps = vec![step(tree.clone(), 0.0)];
    let mut current = tree.root.clone();
    while let Some(alpha) = min_link(&current) {
        let tol = 1e-12 * scale;
        current = collapse_at(&current, alpha, tol);
        let t = RegressionTree {
            root: current.clone(),
            n_features: tree.n_features,
        };
        let last = steps.last_mut().expect("non-empty");
        if alpha <= last.alpha + tol {
            *last = step(t, last.alpha);
        } else {
            steps.push(step(t, alpha));
        }
    }
    PruningSequence { steps }
}

/// Among subtrees keeping at least `min_level_fraction` of the full depth,
/// the one with the lowest validation MSE (fewer leaves on ties).
pub fn select_pruned(
    seq: &PruningSequence,
    val_x: &DMatrix<f64>,
    val_y: &DVector<f64>,
    min_level_fraction: f64,
) -> Result<RegressionTree> {
    if !(0.0..=1.0).contains(&min_level_fraction) {
        return Err(Error::Parameter("min_level_fraction must lie in [0, 1]".into()));
    }
    let full = &seq.steps[0];
    let min_depth = min_level_fraction * full.depth as f64;
    let mut best: Option<(f64, &PruneStep)> = None;
    for s in &seq.steps {
        if (s.depth as f64) < min_depth - 1e-9 {
            continue;
        }
        let loss = mse(&s.tree.predict_matrix(val_x)?, val_y.as_slice())?;
        let better = match best {
            None => true,
            Some((b, bs)) => loss < b || (loss == b && s.leaves < bs.leaves),
        };
        if better {
            best = Some((loss, s));
        }
    }
    match best {
        Some((_, s)) => Ok(s.tree.clone()),
        None => {
            warn!("no pruned subtree is deep enough; keeping the full tree");
            Ok(full.tree.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<RegressionTree>,
    pub seeds: Vec<u64>,
    pub active_count: usize,
    /// Bootstrap row indices per tree.
    #[serde(skip)]
    pub in_bag: Vec<Vec<usize>>,
}

/// Bagging: each tree is grown on its own bootstrap resample, seeded from
/// `(seed, tree index)`.
pub fn fit_bagged_ensemble(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    b: usize,
    params: &TreeParams,
    seed: u64,
) -> Result<TreeEnsemble> {
    if b == 0 {
        return Err(Error::Parameter("ensemble size must be >= 1".into()));
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyData("no training rows".into()));
    }
    let m = x.nrows();
    let fitted: Vec<(RegressionTree, u64, Vec<usize>)> = (0..b)
        .into_par_iter()
        .map(|k| {
            use rand::Rng as _;
            let s = rng::sub_seed(seed, k as u64);
            let mut r = rng::stream(s);
            let rows: Vec<usize> = (0..m).map(|_| r.random_range(0..m)).collect();
            let xs = x.select_rows(rows.iter());
            let ys = DVector::from_iterator(m, rows.iter().map(|&i| y[i]));
            fit_tree(&xs, &ys, params).map(|t| (t, s, rows))
        })
        .collect::<Result<_>>()?;
    let mut trees = Vec::with_capacity(b);
    let mut seeds = Vec::with_capacity(b);
    let mut in_bag = Vec::with_capacity(b);
    for (t, s, rows) in fitted {
        trees.push(t);
        seeds.push(s);
        in_bag.push(rows);
    }
    Ok(TreeEnsemble {
        trees,
        seeds,
        active_count: b,
        in_bag,
    })
}

impl TreeEnsemble {
    /// Per-tree predictions for one row.
    pub fn tree_predictions(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.trees[..t].iter().map(|tree| tree.predict(x)).collect()
    }
}

/// Number of leading trees whose average has the lowest validation MSE
/// (fewest trees on ties).
pub fn select_tree_count(ens: &TreeEnsemble, val_x: &DMatrix<f64>, val_y: &DVector<f64>) -> Result<usize> {
    if val_x.nrows() == 0 {
        return Err(Error::EmptyData("validation set has no rows".into()));
    }
    let preds: Vec<Vec<f64>> = ens
        .trees
        .par_iter()
        .map(|t| t.predict_matrix(val_x))
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; val_x.nrows()];
    let mut best = (f64::INFINITY, 1);
    for (t, p) in preds.iter().enumerate() {
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
        let avg: Vec<f64> = sums.iter().map(|s| s / (t + 1) as f64).collect();
        let loss = mse(&avg, val_y.as_slice())?;
        if loss < best.0 {
            best = (loss, t + 1);
        }
    }
    Ok(best.1)
}

/// Mean prediction of the first `t` trees (default: the active count).
pub fn ensemble_predict(ens: &TreeEnsemble, x: &[f64], t: Option<usize>) -> Result<f64> {
    let t = t.unwrap_or(ens.active_count);
    if t == 0 || t > ens.trees.len() {
        return Err(Error::Parameter(format!(
            "tree count {t} outside 1..={}",
            ens.trees.len()
        )));
    }
    let p = ens.tree_predictions(x, t)?;
    Ok(p.iter().sum::<f64>() / t as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub mean: f64,
    pub se: f64,
    pub low: f64,
    pub high: f64,
}

/// Mean of the active trees with a normal 95% interval from the spread of
/// per-tree predictions (sample std over sqrt of the tree count).
pub fn ensemble_predict_ci(ens: &TreeEnsemble, x: &[f64]) -> Result<PredictionInterval> {
    let t = ens.active_count;
    if t < 2 {
        return Err(Error::UndefinedScore("standard error needs at least 2 trees".into()));
    }
    let p = ens.tree_predictions(x, t)?;
    let mean = p.iter().sum::<f64>() / t as f64;
    let se = sample_std(&p) / (t as f64).sqrt();
    Ok(PredictionInterval {
        mean,
        se,
        low: mean - Z975 * se,
        high: mean + Z975 * se,
    })
}

fn accumulate_importance(node: &Node, n_root: f64, out: &mut [f64]) {
    if let Node::Split {
        feature, sse, left, right, ..
    } = node
    {
        out[*feature] += (sse - left.sse() - right.sse()) / n_root;
        accumulate_importance(left, n_root, out);
        accumulate_importance(right, n_root, out);
    }
}

/// Mean over all trees of the weighted impurity decrease attributed to each
/// feature: `N(t)/N_root * [MSE(t) - N_L/N(t) MSE(L) - N_R/N(t) MSE(R)]`.
pub fn variable_importance(ens: &TreeEnsemble) -> Vec<f64> {
    let p = ens.trees.first().map_or(0, |t| t.n_features);
    let mut delta = vec![0.0; p];
    for t in &ens.trees {
        accumulate_importance(&t.root, t.root.count() as f64, &mut delta);
    }
    let b = ens.trees.len() as f64;
    delta.iter_mut().for_each(|d| *d /= b);
    delta
}
