use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use signalcast::bolasso::{lookup_columns, union_class_ub, BolassoConfig, Ct};
use signalcast::cart::{ensemble_predict, ensemble_predict_ci};
use signalcast::nowcast::{mae, rmse, run_cv, smooth_series_weekly, threshold_negative, CvData, EnsembleConfig, FoldPlan, Hybrid};
use signalcast::rng::sub_seed;
use signalcast::stats::pearson_correlation;
use signalcast::vsm::ScoreMatrix;

use super::train::{build_learner, parse_hybrid, LearnerKind, ModelFile};
use crate::common::{default_out, default_true, fmt, fmt_opt, load_matrix, read_truth, required, resolve, Outputs};
use crate::Common;

fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
}

struct Inference {
    raw: Vec<f64>,
    ci: Option<Vec<(f64, f64)>>,
}

fn apply_model(model: &ModelFile, u: &ScoreMatrix, b: Option<&ScoreMatrix>) -> Result<Inference> {
    match model {
        ModelFile::Linear(l) => {
            let m = match l.hybrid {
                Hybrid::None => u.clone(),
                _ => union_class_ub(u, b.context("this model needs the 2-gram score matrix (scores_b)")?)?,
            };
            Ok(Inference {
                raw: l.selection.predict(&m)?.iter().copied().collect(),
                ci: None,
            })
        }
        ModelFile::Ensemble(e) => {
            let cols = lookup_columns(u, &e.features)?;
            let x = u.x.select_columns(cols.iter());
            let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
            if e.ensemble.active_count >= 2 {
                let ci = rows
                    .iter()
                    .map(|r| ensemble_predict_ci(&e.ensemble, r))
                    .collect::<signalcast::Result<Vec<_>>>()?;
                Ok(Inference {
                    raw: ci.iter().map(|c| c.mean).collect(),
                    ci: Some(ci.iter().map(|c| (c.low, c.high)).collect()),
                })
            } else {
                Ok(Inference {
                    raw: rows
                        .iter()
                        .map(|r| ensemble_predict(&e.ensemble, r, Some(e.tree_count)))
                        .collect::<signalcast::Result<_>>()?,
                    ci: None,
                })
            }
        }
    }
}

/// Rows of the inference table, plus the inferred values for metrics.
fn inference_table(
    m: &ScoreMatrix,
    inf: &Inference,
    threshold: bool,
    smooth: bool,
) -> (Vec<Vec<String>>, Vec<f64>) {
    let inferred = if threshold { threshold_negative(&inf.raw) } else { inf.raw.clone() };
    let mut smoothed: Vec<Option<f64>> = vec![None; inferred.len()];
    if smooth {
        let mut by_region: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in m.rows.iter().enumerate() {
            by_region.entry(r.location.as_deref().unwrap_or("")).or_default().push(i);
        }
        for idx in by_region.values_mut() {
            idx.sort_by_key(|&i| m.rows[i].interval);
            let series: Vec<f64> = idx.iter().map(|&i| inferred[i]).collect();
            let (s, padded) = smooth_series_weekly(&series);
            for (k, &i) in idx.iter().enumerate() {
                if !padded[k] {
                    smoothed[i] = Some(s[k]);
                }
            }
        }
    }
    let rows = m
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                r.id.clone(),
                r.location.clone().unwrap_or_default(),
                fmt_opt(m.y.as_ref().map(|y| y[i])),
                fmt(inferred[i]),
                fmt_opt(smoothed[i]),
                fmt_opt(inf.ci.as_ref().map(|c| c[i].0)),
                fmt_opt(inf.ci.as_ref().map(|c| c[i].1)),
            ]
        })
        .collect();
    (rows, inferred)
}

const INFERENCE_HEADER: [&str; 7] = ["interval", "region", "actual", "inferred", "inferred_smoothed", "ci_low", "ci_high"];

#[derive(Serialize)]
struct Metrics {
    n: usize,
    rmse: f64,
    mae: f64,
    pearson: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rmse_by_region: Option<BTreeMap<String, f64>>,
}

fn metrics(pred: &[f64], actual: &[f64]) -> Result<Metrics> {
    let c = pearson_correlation(pred, actual)?;
    Ok(Metrics {
        n: pred.len(),
        rmse: rmse(pred, actual)?,
        mae: mae(pred, actual)?,
        pearson: (!c.degenerate).then_some(c.r),
        mean_rmse: None,
        rmse_by_region: None,
    })
}

#[derive(Args, Serialize)]
pub struct InferArgs {
    /// model.json written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    scores_b: Option<PathBuf>,
    /// Optional ground truth, echoed in the `actual` column.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Clip negative inferences to zero.
    #[arg(long)]
    threshold: Option<bool>,
    /// Add the 7-day trailing mean column.
    #[arg(long)]
    smooth: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub scores_b: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub threshold: bool,
    pub smooth: bool,
    pub stemmed: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            seed: 0,
            out: default_out(),
            model: None,
            scores: None,
            scores_b: None,
            truth: None,
            threshold: true,
            smooth: true,
            stemmed: default_true(),
        }
    }
}

pub fn run_infer(common: &Common, args: InferArgs) -> Result<()> {
    let cfg: InferConfig = resolve(common, &args)?;
    let model = read_model(required(&cfg.model, "model")?)?;
    let truth = cfg.truth.as_deref().map(read_truth).transpose()?;
    let u = load_matrix(required(&cfg.scores, "scores")?, truth.as_ref(), cfg.stemmed)?;
    let b = cfg.scores_b.as_deref().map(|p| load_matrix(p, truth.as_ref(), cfg.stemmed)).transpose()?;
    let inf = apply_model(&model, &u, b.as_ref())?;
    let (rows, _) = inference_table(&u, &inf, cfg.threshold, cfg.smooth);
    let mut out = Outputs::new(&cfg.out);
    out.add_csv("inference.csv", &INFERENCE_HEADER, rows)?;
    out.commit("infer", &cfg)
}

#[derive(Args, Serialize)]
pub struct EvaluateArgs {
    /// Trained model; without it the learner is cross-validated instead.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    scores_b: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<bool>,
    #[arg(long)]
    smooth: Option<bool>,
    #[arg(long, value_enum)]
    learner: Option<LearnerKind>,
    #[arg(long, value_parser = parse_hybrid)]
    hybrid: Option<Hybrid>,
    /// Cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// Fold over a seeded permutation of the intervals.
    #[arg(long)]
    permute: Option<bool>,
    #[arg(long)]
    baseline_k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub scores_b: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub threshold: bool,
    pub smooth: bool,
    pub stemmed: bool,
    pub learner: LearnerKind,
    pub hybrid: Hybrid,
    pub folds: usize,
    pub permute: bool,
    pub baseline_k: usize,
    pub bolasso: BolassoConfig,
    pub ensemble: EnsembleConfig,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            seed: 0,
            out: default_out(),
            model: None,
            scores: None,
            scores_b: None,
            truth: None,
            threshold: true,
            smooth: true,
            stemmed: default_true(),
            learner: LearnerKind::Bolasso,
            hybrid: Hybrid::None,
            folds: 5,
            permute: false,
            baseline_k: 300,
            bolasso: BolassoConfig::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

fn ct_label(ct: Option<Ct>) -> String {
    match ct {
        None => String::new(),
        Some(Ct::Single(c)) => fmt(c),
        Some(Ct::Pair(a, b)) => format!("{}|{}", fmt(a), fmt(b)),
    }
}

pub fn run_evaluate(common: &Common, args: EvaluateArgs) -> Result<()> {
    let cfg: EvaluateConfig = resolve(common, &args)?;
    let truth = read_truth(required(&cfg.truth, "truth")?)?;
    let u = load_matrix(required(&cfg.scores, "scores")?, Some(&truth), cfg.stemmed)?;
    let b = cfg.scores_b.as_deref().map(|p| load_matrix(p, Some(&truth), cfg.stemmed)).transpose()?;
    let mut out = Outputs::new(&cfg.out);

    if let Some(path) = &cfg.model {
        let model = read_model(path)?;
        let inf = apply_model(&model, &u, b.as_ref())?;
        let (rows, inferred) = inference_table(&u, &inf, cfg.threshold, cfg.smooth);
        let actual: Vec<f64> = u.targets()?.iter().copied().collect();
        out.add_csv("inference.csv", &INFERENCE_HEADER, rows)?;
        out.add_json("metrics.json", &metrics(&inferred, &actual)?)?;
        return out.commit("evaluate", &cfg);
    }

    let n_intervals = u.rows.iter().map(|r| r.interval).max().map_or(0, |m| m + 1);
    let plan = if cfg.permute {
        FoldPlan::permuted(n_intervals, cfg.folds, sub_seed(cfg.seed, 3))?
    } else {
        FoldPlan::contiguous(n_intervals, cfg.folds)?
    };
    if !cfg.threshold {
        bail!("cross-validation always clips negative inferences; set threshold to true");
    }
    let learner = build_learner(cfg.learner, &cfg.bolasso, &cfg.ensemble, cfg.baseline_k, cfg.seed);
    let report = run_cv(&CvData { u: &u, b: b.as_ref() }, &plan, &learner, cfg.hybrid)?;
    let mut pred = Vec::new();
    let mut actual = Vec::new();
    let mut rows = Vec::new();
    for r in &report.rounds {
        for p in &r.predictions {
            pred.push(p.inferred);
            actual.push(p.actual);
            rows.push(vec![
                r.round.to_string(),
                p.interval.clone(),
                p.region.clone(),
                fmt(p.actual),
                fmt(p.inferred),
            ]);
        }
    }
    out.add_csv("predictions.csv", &["round", "interval", "region", "actual", "inferred"], rows)?;
    out.add_csv(
        "rounds.csv",
        &["round", "rmse", "ct", "tree_count", "n_features"],
        report
            .rounds
            .iter()
            .map(|r| {
                vec![
                    r.round.to_string(),
                    fmt(r.rmse),
                    ct_label(r.ct),
                    r.tree_count.map(|t| t.to_string()).unwrap_or_default(),
                    r.features.len().to_string(),
                ]
            })
            .collect(),
    )?;
    let mut m = metrics(&pred, &actual)?;
    m.mean_rmse = Some(report.mean_rmse);
    m.rmse_by_region = Some(report.mean_rmse_by_region.clone());
    out.add_json("metrics.json", &m)?;
    out.commit("evaluate", &cfg)
}
