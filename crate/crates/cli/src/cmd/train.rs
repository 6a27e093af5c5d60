use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use signalcast::bolasso::{BolassoConfig, ClassData, SelectionRecord};
use signalcast::cart::{ensemble_predict, variable_importance, TreeEnsemble};
use signalcast::nowcast::{fit_learner, rmse, rows_for, EnsembleConfig, Fitted, Hybrid, Learner};
use signalcast::rng::sub_seed;
use signalcast::vsm::ScoreMatrix;

use crate::common::{default_out, default_true, fmt, load_matrix, read_truth, required, resolve, Outputs};
use crate::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Bolasso,
    Cart,
    Baseline,
}

pub fn parse_hybrid(s: &str) -> Result<Hybrid, String> {
    s.parse().map_err(|e: signalcast::Error| e.to_string())
}

/// Nested seeds are derived from the master seed.
pub fn build_learner(
    kind: LearnerKind,
    bolasso: &BolassoConfig,
    ensemble: &EnsembleConfig,
    baseline_k: usize,
    seed: u64,
) -> Learner {
    match kind {
        LearnerKind::Bolasso => Learner::Bolasso(BolassoConfig {
            seed: sub_seed(seed, 1),
            ..bolasso.clone()
        }),
        LearnerKind::Cart => Learner::CartEnsemble(EnsembleConfig {
            seed: sub_seed(seed, 2),
            ..ensemble.clone()
        }),
        LearnerKind::Baseline => Learner::Baseline { k: baseline_k },
    }
}

/// model.json: a linear selection or a bagged tree ensemble.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelFile {
    Ensemble(EnsembleModel),
    Linear(LinearModelFile),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LinearModelFile {
    pub learner: LearnerKind,
    pub hybrid: Hybrid,
    #[serde(flatten)]
    pub selection: SelectionRecord,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub learner: LearnerKind,
    /// Column order the trees were grown on.
    pub features: Vec<String>,
    pub tree_count: usize,
    pub validation_rmse: f64,
    pub ensemble: TreeEnsemble,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    /// 1-gram (or single-class) score matrix CSV.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// 2-gram score matrix CSV, for the hybrids.
    #[arg(long)]
    scores_b: Option<PathBuf>,
    /// Ground truth CSV (date, region, value).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum)]
    learner: Option<LearnerKind>,
    /// none, H, H_II or UB.
    #[arg(long, value_parser = parse_hybrid)]
    hybrid: Option<Hybrid>,
    /// Share of the latest intervals held out for validation.
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    baseline_k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub scores: Option<PathBuf>,
    pub scores_b: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub learner: LearnerKind,
    pub hybrid: Hybrid,
    pub validation_fraction: f64,
    pub baseline_k: usize,
    pub stemmed: bool,
    pub bolasso: BolassoConfig,
    pub ensemble: EnsembleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            out: default_out(),
            scores: None,
            scores_b: None,
            truth: None,
            learner: LearnerKind::Bolasso,
            hybrid: Hybrid::None,
            validation_fraction: 0.2,
            baseline_k: 300,
            stemmed: default_true(),
            bolasso: BolassoConfig::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

/// Training and validation interval indices: the latest share of the
/// intervals present is held out.
fn split_intervals(m: &ScoreMatrix, fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        bail!("validation_fraction must lie in (0, 1), got {fraction}");
    }
    let intervals: Vec<usize> = m.rows.iter().map(|r| r.interval).collect::<BTreeSet<_>>().into_iter().collect();
    if intervals.len() < 2 {
        bail!("need at least 2 intervals to train, found {}", intervals.len());
    }
    let n_val = ((fraction * intervals.len() as f64).ceil() as usize).clamp(1, intervals.len() - 1);
    let cut = intervals.len() - n_val;
    Ok((intervals[..cut].to_vec(), intervals[cut..].to_vec()))
}

pub fn run(common: &Common, args: TrainArgs) -> Result<()> {
    let cfg: TrainConfig = resolve(common, &args)?;
    let truth = read_truth(required(&cfg.truth, "truth")?)?;
    let u = load_matrix(required(&cfg.scores, "scores")?, Some(&truth), cfg.stemmed)?;
    let b = match &cfg.scores_b {
        Some(p) => Some(load_matrix(p, Some(&truth), cfg.stemmed)?),
        None => None,
    };
    if let Some(b) = &b {
        if b.rows != u.rows {
            bail!("1-gram and 2-gram score matrices have different rows");
        }
    }
    let (tr, va) = split_intervals(&u, cfg.validation_fraction)?;
    let part = |m: &ScoreMatrix| (m.select_rows(&rows_for(m, &tr)), m.select_rows(&rows_for(m, &va)));
    let (utr, uva) = part(&u);
    let bparts = b.as_ref().map(part);
    let bdata = bparts.as_ref().map(|(t, v)| ClassData { train: t, val: v });
    let learner = build_learner(cfg.learner, &cfg.bolasso, &cfg.ensemble, cfg.baseline_k, cfg.seed);
    let (fitted, diagnostics) = fit_learner(&ClassData { train: &utr, val: &uva }, bdata.as_ref(), &learner, cfg.hybrid)?;

    let mut out = Outputs::new(&cfg.out);
    match fitted {
        Fitted::Linear(sel) => {
            let record = sel.record();
            out.add_csv(
                "features.csv",
                &["feature", "weight"],
                record
                    .features
                    .iter()
                    .zip(&record.weights)
                    .map(|(f, w)| vec![f.clone(), fmt(*w)])
                    .collect(),
            )?;
            out.add_json(
                "model.json",
                &ModelFile::Linear(LinearModelFile {
                    learner: cfg.learner,
                    hybrid: cfg.hybrid,
                    selection: record,
                }),
            )?;
        }
        Fitted::Ensemble(mut ens, t) => {
            ens.active_count = t;
            let pred = (0..uva.n_rows())
                .map(|i| {
                    let row: Vec<f64> = uva.x.row(i).iter().copied().collect();
                    ensemble_predict(&ens, &row, Some(t))
                })
                .collect::<signalcast::Result<Vec<f64>>>()?;
            let actual: Vec<f64> = uva.targets()?.iter().copied().collect();
            let ids = u.feature_ids();
            let importance = variable_importance(&ens);
            let mut ranked: Vec<(usize, f64)> = importance.iter().copied().enumerate().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(ids[a.0].cmp(&ids[b.0])));
            out.add_csv(
                "importance.csv",
                &["feature", "importance"],
                ranked.iter().map(|(j, d)| vec![ids[*j].clone(), fmt(*d)]).collect(),
            )?;
            out.add_json(
                "model.json",
                &ModelFile::Ensemble(EnsembleModel {
                    learner: cfg.learner,
                    features: ids,
                    tree_count: t,
                    validation_rmse: rmse(&pred, &actual)?,
                    ensemble: ens,
                }),
            )?;
        }
    }
    if !diagnostics.is_empty() {
        out.add_csv(
            "diagnostics.csv",
            &["class", "ct", "n_features", "lambda", "used_cv", "validation_rmse"],
            diagnostics
                .iter()
                .map(|d| {
                    vec![
                        d.class.clone(),
                        fmt(d.ct),
                        d.n_features.to_string(),
                        fmt(d.lambda),
                        d.used_cv.to_string(),
                        fmt(d.validation_rmse),
                    ]
                })
                .collect(),
        )?;
    }
    out.commit("train", &cfg)
}
