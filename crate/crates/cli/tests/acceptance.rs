//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{NaiveDate, TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use signalcast::bolasso::{
    hybrid_h, soft_bolasso, BolassoConfig, ClassData, Ct,
};
use signalcast::cart::{
    ensemble_predict, fit_bagged_ensemble, fit_tree, prune_sequence, select_pruned, select_tree_count,
    variable_importance, TreeParams,
};
use signalcast::geonet::{edge_swap, similarity_score, stability_pvalue, Edge, SimilarityNetwork};
use signalcast::mood::{
    daily_patterns, mfms, periodicity_pvalue, stability_pvalue as mood_stability, standardized_mean, MoodLexicon,
};
use signalcast::nowcast::{
    interpolate_weekly, rmse, rows_for, run_cv, CvData, FoldPlan, GroundTruthSeries, Hybrid, Learner, TruthPoint,
};
use signalcast::regression::{lars_lasso_path, lasso_at, ols_fit, Standardization};
use signalcast::rng::{self, stream};
use signalcast::stats::mse;
use signalcast::synth::{benchmark_spec, gen_corpus, gen_target_series};
use signalcast::text::{porter_stem, FeatureClass, FeatureVocabulary, NGram, StopList, TextPipeline};
use signalcast::vsm::{
    build_score_matrix, marker_score, tf_idf, topic_score, weighted_topic_score, IntervalLength, Post, RowKey,
    ScoreMatrix, TimeBinnedCorpus,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normal(r: &mut rng::Rng) -> f64 {
    r.sample(StandardNormal)
}

// 1. LASSO path against coordinate descent.

fn objective(z: &DMatrix<f64>, yc: &DVector<f64>, w: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (yc - z * w).norm_squared() + lambda * w.lp_norm(1)
}

fn coordinate_descent(z: &DMatrix<f64>, yc: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let p = z.ncols();
    let mut w = DVector::<f64>::zeros(p);
    let mut r = yc.clone();
    let norms: Vec<f64> = (0..p).map(|j| z.column(j).norm_squared()).collect();
    for _ in 0..100_000 {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let rho = z.column(j).dot(&r) + norms[j] * w[j];
            let new = rho.signum() * (rho.abs() - lambda).max(0.0) / norms[j];
            let delta = new - w[j];
            if delta != 0.0 {
                r.axpy(-delta, &z.column(j), 1.0);
                w[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < 1e-13 {
            break;
        }
    }
    w
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut knots = 0;
    for seed in 0..50 {
        let mut r = stream(seed);
        let x = DMatrix::from_fn(20, 8, |_, _| normal(&mut r));
        let beta: Vec<f64> = (0..8).map(|j| if j % 3 == 0 { 0.0 } else { normal(&mut r) }).collect();
        let y = DVector::from_fn(20, |i, _| (0..8).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + 0.5 * normal(&mut r));
        let path = lars_lasso_path(&x, &y, 100, 1000).map_err(|e| e.to_string())?;
        let s = Standardization::fit(&x, &y);
        let z = s.apply(&x);
        let yc = y.add_scalar(-s.y_mean);
        for k in &path.knots {
            let cd = coordinate_descent(&z, &yc, k.lambda);
            let (a, b) = (objective(&z, &yc, &k.weights, k.lambda), objective(&z, &yc, &cd, k.lambda));
            worst = worst.max((a - b).abs() / b.abs().max(1e-12));
            knots += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-6 && secs < 5.0,
        format!("{knots} knots, worst relative gap {worst:.2e}, {secs:.2} s"),
    )
}

// 2. Orthonormal design.

fn criterion_2() -> Outcome {
    let n = 16;
    let had = |i: usize, j: usize| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
    let x = DMatrix::from_fn(n, 4, |i, j| had(i, [1, 2, 4, 8][j]));
    let y = DVector::from_fn(n, |i, _| {
        [3.0, -1.0, 0.5, 2.0].iter().enumerate().map(|(j, b)| b * x[(i, j)]).sum::<f64>() + (i % 3) as f64 * 0.1
    });
    let ols = ols_fit(&x, &y, true).map_err(|e| e.to_string())?;
    let path = lars_lasso_path(&x, &y, 10, 100).map_err(|e| e.to_string())?;
    let mut r = stream(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let lambda = r.random_range(0.0..path.knots[0].lambda * 1.1);
        let m = lasso_at(&path, lambda);
        for j in 0..4 {
            let w = ols.weights[j];
            let soft = w.signum() * (w.abs() - lambda / n as f64).max(0.0);
            worst = worst.max((m.weights[j] - soft).abs());
        }
    }
    ensure(worst < 1e-8, format!("20 lambdas, worst deviation {worst:.2e}"))
}

// 3 and 4. Planted-support benchmark.

struct BenchRun {
    recall: f64,
    outside: f64,
    bolasso_rmse: f64,
    baseline_rmse: f64,
    elapsed: Duration,
}

fn bench(seed: u64) -> Result<BenchRun, String> {
    let t0 = Instant::now();
    let e = |e: signalcast::Error| e.to_string();
    let spec = benchmark_spec(seed);
    let target = gen_target_series(spec.target_kind, spec.days, spec.start, &spec.region_names(), seed).map_err(e)?;
    let sc = gen_corpus(&spec, &target).map_err(e)?;
    let corpus = sc.corpus(&TextPipeline::new(StopList::english(), true)).map_err(e)?;
    let terms: BTreeSet<String> = sc.manifest.signal.iter().chain(&sc.manifest.noise).cloned().collect();
    let vocab = FeatureVocabulary::new(terms.into_iter().map(NGram::unigram).collect(), FeatureClass::U, true)
        .map_err(e)?;
    let m = build_score_matrix(&vocab, &corpus, None, true).map_err(e)?;
    let y = target.align(&m).map_err(e)?;
    let m = m.with_targets(y).map_err(e)?;

    // Latest fifth of the days validates, as `train` does.
    let n_val = spec.days / 5;
    let train_days: Vec<usize> = (0..spec.days - n_val).collect();
    let val_days: Vec<usize> = (spec.days - n_val..spec.days).collect();
    let tr = m.select_rows(&rows_for(&m, &train_days));
    let va = m.select_rows(&rows_for(&m, &val_days));
    let cfg = BolassoConfig {
        seed,
        ..Default::default()
    };
    let sel = soft_bolasso(&tr, &va, &cfg).map_err(e)?.result;
    let elapsed = t0.elapsed();
    let signal: HashSet<&String> = sc.manifest.signal.iter().collect();
    let hits = sel.features.iter().filter(|f| signal.contains(f)).count();
    let recall = hits as f64 / signal.len() as f64;
    let outside = if sel.features.is_empty() {
        0.0
    } else {
        (sel.features.len() - hits) as f64 / sel.features.len() as f64
    };

    let plan = FoldPlan::contiguous(spec.days, 5).map_err(e)?;
    let data = CvData { u: &m, b: None };
    let bol = run_cv(&data, &plan, &Learner::Bolasso(cfg), Hybrid::None).map_err(e)?;
    let base = run_cv(&data, &plan, &Learner::Baseline { k: 300 }, Hybrid::None).map_err(e)?;
    Ok(BenchRun {
        recall,
        outside,
        bolasso_rmse: bol.pooled_rmse,
        baseline_rmse: base.pooled_rmse,
        elapsed,
    })
}

fn criteria_3_4() -> (Outcome, Outcome) {
    let mut runs = Vec::new();
    for seed in 1..=10 {
        match bench(seed) {
            Ok(r) => runs.push(r),
            Err(err) => {
                let msg = format!("seed {seed}: {err}");
                return (Err(msg.clone()), Err(msg));
            }
        }
    }
    let slowest = runs.iter().map(|r| r.elapsed.as_secs_f64()).fold(0.0, f64::max);
    let recovered = runs.iter().filter(|r| r.recall >= 0.8 && r.outside <= 0.2).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.0}%/{:.0}%", 100.0 * r.recall, 100.0 * r.outside))
        .collect();
    let c3 = ensure(
        recovered >= 8 && slowest < 60.0,
        format!(
            "{recovered}/10 seeds recover; recall/outside per seed {}; slowest recovery run {slowest:.1} s",
            detail.join(" ")
        ),
    );
    let better = runs.iter().filter(|r| r.bolasso_rmse < r.baseline_rmse).count();
    let pairs: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.3}<{:.3}", r.bolasso_rmse, r.baseline_rmse))
        .collect();
    let c4 = ensure(
        better >= 8,
        format!("bolasso below baseline in {better}/10 seeds ({})", pairs.join(" ")),
    );
    (c3, c4)
}

// 5. Hybrid H against an exhaustive union refit.

fn planted_matrix(x: DMatrix<f64>, y: DVector<f64>, class: FeatureClass, prefix: &str) -> ScoreMatrix {
    let entries = (0..x.ncols())
        .map(|j| match class {
            FeatureClass::B => NGram::bigram(format!("{prefix}{j:02}"), "x"),
            _ => NGram::unigram(format!("{prefix}{j:02}")),
        })
        .collect();
    let vocab = FeatureVocabulary::new(entries, class, false).expect("valid vocabulary");
    let rows = (0..x.nrows())
        .map(|i| RowKey {
            interval: i,
            id: format!("r{i}"),
            location: None,
        })
        .collect();
    ScoreMatrix::new(x, vocab, rows, Some(y)).expect("consistent matrix")
}

fn criterion_5() -> Outcome {
    let e = |e: signalcast::Error| e.to_string();
    for seed in 0..5u64 {
        let mut r = stream(seed + 500);
        let (n, nt) = (70, 50);
        let y = DVector::from_fn(n, |_, _| normal(&mut r));
        let x = DMatrix::from_fn(n, 16, |i, j| {
            let noise = normal(&mut r);
            if j % 8 < 2 {
                y[i] + 0.7 * noise
            } else {
                noise
            }
        });
        let part = |c0: usize, rows: std::ops::Range<usize>, class, prefix| {
            planted_matrix(
                x.view((rows.start, c0), (rows.len(), 8)).into_owned(),
                y.rows(rows.start, rows.len()).into_owned(),
                class,
                prefix,
            )
        };
        let (ut, uv) = (part(0, 0..nt, FeatureClass::U, "u"), part(0, nt..n, FeatureClass::U, "u"));
        let (bt, bv) = (part(8, 0..nt, FeatureClass::B, "b"), part(8, nt..n, FeatureClass::B, "b"));
        let cfg = BolassoConfig {
            seed,
            bootstraps: Some(10),
            ..Default::default()
        };
        let ou = soft_bolasso(&ut, &uv, &cfg).map_err(e)?;
        let ob = soft_bolasso(&bt, &bv, &cfg).map_err(e)?;
        let h = hybrid_h(
            &ou.per_ct,
            &ob.per_ct,
            &ClassData { train: &ut, val: &uv },
            &ClassData { train: &bt, val: &bv },
        )
        .map_err(e)?;
        let mut best = (f64::INFINITY, 0.0);
        for (du, db) in ou.per_ct.iter().zip(&ob.per_ct) {
            let join = |a: &ScoreMatrix, b: &ScoreMatrix| {
                let l = a.x.select_columns(du.selected.iter());
                let rr = b.x.select_columns(db.selected.iter());
                let mut out = DMatrix::zeros(l.nrows(), l.ncols() + rr.ncols());
                out.columns_mut(0, l.ncols()).copy_from(&l);
                out.columns_mut(l.ncols(), rr.ncols()).copy_from(&rr);
                out
            };
            let model = ols_fit(&join(&ut, &bt), ut.targets().map_err(e)?, true).map_err(e)?;
            let pred = model.predict(&join(&uv, &bv)).map_err(e)?;
            let loss = mse(pred.as_slice(), uv.targets().map_err(e)?.as_slice()).map_err(e)?;
            if loss < best.0 {
                best = (loss, du.ct);
            }
        }
        if h.validation_loss != best.0 || h.ct != Some(Ct::Single(best.1)) {
            return Err(format!(
                "seed {seed}: H loss {} at {:?}, oracle {} at CT {}",
                h.validation_loss, h.ct, best.0, best.1
            ));
        }
    }
    Ok("5 seeds, H loss equals the oracle minimum exactly".into())
}

// 6 and 7. Trees.

fn noisy_benchmark(seed: u64, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut r = stream(seed);
    let x = DMatrix::from_fn(n, 5, |_, _| r.random::<f64>());
    let y = DVector::from_fn(n, |i, _| {
        10.0 * (std::f64::consts::PI * x[(i, 0)] * x[(i, 1)]).sin() + 5.0 * x[(i, 2)] + 2.0 * normal(&mut r)
    });
    (x, y)
}

fn criterion_6() -> Outcome {
    let e = |e: signalcast::Error| e.to_string();
    for seed in 0..20 {
        let mut r = stream(seed + 900);
        let x = DMatrix::from_fn(40, 4, |_, _| r.random::<f64>());
        let y = DVector::from_fn(40, |_, _| normal(&mut r));
        let t = fit_tree(&x, &y, &TreeParams { min_leaf: 1, max_depth: None }).map_err(e)?;
        let p = t.predict_matrix(&x).map_err(e)?;
        let sse: f64 = p.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        if sse != 0.0 {
            return Err(format!("instance {seed}: training SSE {sse}"));
        }
    }
    let mut wins = 0;
    for seed in 0..10 {
        let (x, y) = noisy_benchmark(seed, 600);
        let sl = |a: usize, n: usize| (x.rows(a, n).into_owned(), y.rows(a, n).into_owned());
        let ((xt, yt), (xv, yv), (xs, ys)) = (sl(0, 300), sl(300, 100), sl(400, 200));
        let tree = fit_tree(&xt, &yt, &TreeParams::default()).map_err(e)?;
        let pruned = select_pruned(&prune_sequence(&tree), &xv, &yv, 0.0).map_err(e)?;
        let single = rmse(&pruned.predict_matrix(&xs).map_err(e)?, ys.as_slice()).map_err(e)?;
        let mut ens = fit_bagged_ensemble(&xt, &yt, 100, &TreeParams::default(), seed).map_err(e)?;
        ens.active_count = select_tree_count(&ens, &xv, &yv).map_err(e)?;
        let bagged = (0..200)
            .map(|i| ensemble_predict(&ens, &xs.row(i).iter().copied().collect::<Vec<_>>(), None))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(e)?;
        if rmse(&bagged, ys.as_slice()).map_err(e)? <= single {
            wins += 1;
        }
    }
    ensure(
        wins >= 8,
        format!("20/20 memorized; bagging at or below the pruned tree in {wins}/10 seeds"),
    )
}

fn criterion_7() -> Outcome {
    let mut top_hits = 0;
    for seed in 0..10 {
        let mut r = stream(seed + 300);
        let x = DMatrix::from_fn(200, 6, |_, _| r.random::<f64>());
        let y = DVector::from_fn(200, |i, _| if x[(i, 3)] > 0.4 { 5.0 } else { 0.0 } + normal(&mut r));
        let ens = fit_bagged_ensemble(&x, &y, 30, &TreeParams::default(), seed).map_err(|e| e.to_string())?;
        let d = variable_importance(&ens);
        if (0..6).max_by(|&a, &b| d[a].total_cmp(&d[b])) == Some(3) {
            top_hits += 1;
        }
    }
    ensure(top_hits == 10, format!("step feature ranked first in {top_hits}/10 seeds"))
}

// 8. Text scores.

fn criterion_8() -> Outcome {
    let e = |e: signalcast::Error| e.to_string();
    let docs = vec![vec!["a".to_string(), "a".into(), "b".into()], vec!["a".to_string()]];
    let vocab = FeatureVocabulary::new(vec![NGram::unigram("a"), NGram::unigram("b")], FeatureClass::U, false)
        .map_err(e)?;
    let w = tf_idf(&docs, &vocab).map_err(e)?;
    let tfidf_gap = (w[(1, 0)] - 0.5 * 2f64.ln()).abs() + w[(0, 0)].abs() + w[(0, 1)].abs() + w[(1, 1)].abs();

    let pipe = TextPipeline::new(StopList::english(), false);
    let t = Utc.with_ymd_and_hms(2021, 3, 1, 12, 0, 0).unwrap();
    let posts: Vec<Post> = ["flu fever", "rain", "fever cough", "sore throat fever", "cold"]
        .iter()
        .enumerate()
        .map(|(i, s)| Post {
            id: i.to_string(),
            time: t,
            location: "x".into(),
            lat: 0.0,
            lon: 0.0,
            tokens: pipe.process(s),
        })
        .collect();
    let markers = vec![NGram::unigram("fever"), NGram::unigram("cough"), NGram::bigram("sore", "throat")];
    let ts = topic_score(&markers, &posts).map_err(e)?;
    let mean_marker = markers
        .iter()
        .map(|m| marker_score(m, &posts, true))
        .sum::<Result<f64, _>>()
        .map_err(e)?
        / 3.0;
    let (total, subs) = weighted_topic_score(&markers, &[0.5, 2.0, 1.0], &posts).map_err(e)?;
    let gaps = [
        tfidf_gap,
        (ts - 5.0 / 15.0).abs(),
        (ts - mean_marker).abs(),
        (total - subs.iter().sum::<f64>()).abs(),
        (subs[0] - 0.5 * 3.0 / 15.0).abs(),
        (subs[1] - 2.0 / 15.0).abs(),
    ];
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    ensure(worst <= 1e-12, format!("worst identity gap {worst:.1e}"))
}

// 9. Mood.

fn criterion_9() -> Outcome {
    let e = |e: signalcast::Error| e.to_string();
    let names: Vec<String> = (0..4).map(|i| format!("t{i}")).collect();
    let mut worst_scale = 0.0f64;
    for seed in 0..20 {
        let mut r = stream(seed);
        let f = DMatrix::from_fn(40, 4, |_, _| r.random::<f64>());
        let scales: Vec<f64> = (0..4).map(|_| 10f64.powf(r.random_range(-2.0..2.0))).collect();
        let g = DMatrix::from_fn(40, 4, |i, j| f[(i, j)] * scales[j]);
        let (a, b) = (standardized_mean(&f, &names).map_err(e)?, standardized_mean(&g, &names).map_err(e)?);
        for (x, y) in a.iter().zip(&b) {
            worst_scale = worst_scale.max((x - y).abs());
        }
    }

    let stems = ["happi", "joy", "love", "sad", "cry", "angri"];
    let start = Utc.with_ymd_and_hms(2022, 5, 2, 0, 0, 0).unwrap();
    let mut r = stream(77);
    let mut posts = Vec::new();
    for h in 0..48 {
        for k in 0..r.random_range(1..10) {
            let tokens = (0..r.random_range(1..5)).map(|_| stems[r.random_range(0..6)].to_string()).collect();
            posts.push(Post {
                id: format!("{h}-{k}"),
                time: start + chrono::Duration::minutes(60 * h + k),
                location: "x".into(),
                lat: 0.0,
                lon: 0.0,
                tokens,
            });
        }
    }
    let corpus = TimeBinnedCorpus::from_posts(posts, start, IntervalLength::HOUR, 48).map_err(e)?.0;
    let l1 = MoodLexicon::new("a", stems[..2].iter().copied()).map_err(e)?;
    let l2 = MoodLexicon::new("b", stems[2..].iter().copied()).map_err(e)?;
    let all = MoodLexicon::new("ab", stems.iter().copied()).map_err(e)?;
    let (m1, m2, m) = (mfms(&corpus, &l1).map_err(e)?, mfms(&corpus, &l2).map_err(e)?, mfms(&corpus, &all).map_err(e)?);
    let worst_linear = (0..48)
        .map(|t| (m.values[t] - (2.0 * m1.values[t] + 4.0 * m2.values[t]) / 6.0).abs())
        .fold(0.0, f64::max);

    let series = |seed: u64, amp: f64| -> Vec<f64> {
        let mut r = stream(seed + 4000);
        (0..14 * 24)
            .map(|t| amp * (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin() + normal(&mut r))
            .collect()
    };
    let stability = |s: &[f64], seed: u64| -> Result<f64, String> {
        let daily = daily_patterns(s, 24);
        let avg: Vec<f64> = (0..24).map(|h| daily.iter().map(|d| d[h]).sum::<f64>() / daily.len() as f64).collect();
        mood_stability(&avg, &daily, 1000, seed).map_err(e)
    };
    let (mut stable_null, mut period_null) = (0, 0);
    for seed in 0..50 {
        let s = series(seed, 0.0);
        if stability(&s, seed)? > 0.05 {
            stable_null += 1;
        }
        if periodicity_pvalue(&s, &[24], 1000, seed).map_err(e)?[0] > 0.05 {
            period_null += 1;
        }
    }
    let s = series(99, 3.0);
    let (ps, pp) = (stability(&s, 99)?, periodicity_pvalue(&s, &[24], 1000, 99).map_err(e)?[0]);
    ensure(
        worst_scale <= 1e-10 && worst_linear <= 1e-12 && stable_null >= 45 && period_null >= 45 && ps <= 0.001 && pp <= 0.001,
        format!(
            "rescale gap {worst_scale:.1e}, linearity gap {worst_linear:.1e}, null p>0.05 in {stable_null}/50 (stability) \
             and {period_null}/50 (periodicity), periodic signal p = {ps} / {pp}"
        ),
    )
}

// 10. Networks.

fn random_network(seed: u64, nodes: usize, edges: usize) -> SimilarityNetwork {
    let mut r = stream(seed);
    let names: Vec<String> = (0..nodes).map(|i| format!("n{i:02}")).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    while out.len() < edges {
        let (a, b) = (r.random_range(0..nodes), r.random_range(0..nodes));
        if a != b && seen.insert((a, b)) {
            out.push(Edge {
                src: names[a].clone(),
                dst: names[b].clone(),
                avg_similarity: r.random(),
            });
        }
    }
    SimilarityNetwork {
        nodes: names.into_iter().map(|n| (n, 0.0)).collect(),
        edges: out,
        alpha: edges,
    }
}

fn criterion_10() -> Outcome {
    for seed in 0..50 {
        let a = random_network(seed, 12, 20);
        let b = random_network(seed + 1000, 12, 20);
        let mut flipped = a.clone();
        flipped.edges.iter_mut().for_each(|e| std::mem::swap(&mut e.src, &mut e.dst));
        let ab = similarity_score(&a, &b);
        if similarity_score(&a, &a) != 1.0
            || ab != similarity_score(&b, &a)
            || !(0.0..=1.0).contains(&ab)
            || (a.edge_set().is_disjoint(&flipped.edge_set()) && similarity_score(&a, &flipped) != 0.0)
        {
            return Err(format!("similarity score property broken at seed {seed}"));
        }
    }
    let mut net = random_network(3, 20, 40);
    let before = net.degrees();
    let mut r = stream(3);
    let swaps = (0..10_000).filter(|_| edge_swap(&mut net, &mut r)).count();
    if net.degrees() != before {
        return Err("degrees changed under swaps".into());
    }
    let mut worst_p = 0.0f64;
    for seed in 0..10 {
        let n = random_network(seed + 50, 20, 40);
        worst_p = worst_p.max(stability_pvalue(&n, &n, 1000, seed).map_err(|e| e.to_string())?);
    }
    ensure(
        worst_p < 0.05,
        format!("SS properties on 50 pairs; degrees kept over {swaps} accepted swaps; worst self p = {worst_p}"),
    )
}

// 11. CLI determinism.

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default()
}

fn run_cli(args: &[&str], out: &Path, jobs: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let _ = std::fs::remove_dir_all(out);
    let status = Command::new(env!("CARGO_BIN_EXE_signalcast"))
        .args(args)
        .args(["--jobs", jobs, "--out"])
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    Ok(snapshot(out))
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = tmp.path();
    let p = |s: &str| t.join(s).to_string_lossy().into_owned();
    std::fs::write(t.join("joy.txt"), "sig03\nsig04\n").map_err(|e| e.to_string())?;
    std::fs::write(t.join("sadness.txt"), "sig00\nnoise010\n").map_err(|e| e.to_string())?;
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth".into(), "--seed".into(), "7".into(), "--days".into(), "28".into(), "--posts-per-bin".into(), "60".into()]),
        ("features", vec!["features".into(), "--posts".into(), p("synth/posts.jsonl")]),
        ("score-matrix", vec!["score-matrix".into(), "--posts".into(), p("synth/posts.jsonl"), "--vocabulary".into(), p("features/vocabulary.txt")]),
        ("train-bolasso", vec!["train".into(), "--seed".into(), "3".into(), "--scores".into(), p("score-matrix/scores.csv"), "--truth".into(), p("synth/truth.csv"), "--learner".into(), "bolasso".into()]),
        ("train-cart", vec!["train".into(), "--seed".into(), "3".into(), "--scores".into(), p("score-matrix/scores.csv"), "--truth".into(), p("synth/truth.csv"), "--learner".into(), "cart".into()]),
        ("infer", vec!["infer".into(), "--model".into(), p("train-cart/model.json"), "--scores".into(), p("score-matrix/scores.csv"), "--truth".into(), p("synth/truth.csv")]),
        ("evaluate", vec!["evaluate".into(), "--model".into(), p("train-bolasso/model.json"), "--scores".into(), p("score-matrix/scores.csv"), "--truth".into(), p("synth/truth.csv")]),
        ("evaluate-cv", vec!["evaluate".into(), "--seed".into(), "5".into(), "--scores".into(), p("score-matrix/scores.csv"), "--truth".into(), p("synth/truth.csv"), "--learner".into(), "cart".into(), "--permute".into(), "true".into()]),
        ("mood", vec!["mood".into(), "--seed".into(), "1".into(), "--posts".into(), p("synth/posts.jsonl"), "--lexicon".into(), p("joy.txt"), "--lexicon".into(), p("sadness.txt"), "--permutations".into(), "200".into()]),
        ("network", vec!["network".into(), "--seed".into(), "2".into(), "--posts".into(), p("synth/posts.jsonl"), "--window-days".into(), "7".into(), "--swaps".into(), "300".into()]),
        ("posting", vec!["posting".into(), "--seed".into(), "4".into(), "--posts".into(), p("synth/posts.jsonl"), "--permutations".into(), "200".into()]),
    ];
    let mut files = 0;
    for (name, args) in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = t.join(name);
        let one = run_cli(&args, &out, "1")?;
        let eight = run_cli(&args, &out, "8")?;
        if one.is_empty() {
            return Err(format!("{name}: no outputs"));
        }
        if one != eight {
            let differing: Vec<&String> = one.keys().filter(|k| one.get(*k) != eight.get(*k)).collect();
            return Err(format!("{name}: outputs differ between --jobs 1 and 8: {differing:?}"));
        }
        files += one.len();
    }
    Ok(format!("{} commands, {files} files byte-identical across --jobs 1 and 8", steps.len()))
}

// 12. Conformance micro-suite.

fn criterion_12() -> Outcome {
    for (w, s) in [
        ("researches", "research"),
        ("happiness", "happi"),
        ("happier", "happier"),
        ("singularity", "singular"),
    ] {
        let got = porter_stem(w);
        if got != s {
            return Err(format!("{w} stems to {got}, expected {s}"));
        }
    }
    let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    let weekly = GroundTruthSeries::new(
        [0.0, 7.0]
            .iter()
            .enumerate()
            .map(|(w, &value)| TruthPoint {
                date: start + chrono::Days::new(7 * w as u64),
                region: "r".into(),
                value,
            })
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let daily = interpolate_weekly(&weekly).map_err(|e| e.to_string())?.values();
    ensure(
        daily[..7] == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        format!("stemming table verbatim; weekly 0 -> 7 gives {:?}", &daily[..7]),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let names = [
        "LASSO path vs coordinate descent",
        "orthonormal soft-thresholding",
        "planted-support recovery",
        "bolasso vs correlation baseline",
        "hybrid H oracle",
        "CART memorization and bagging",
        "importance on a step function",
        "TF-IDF and topic scores",
        "mood invariances and calibration",
        "network properties",
        "CLI determinism",
        "conformance micro-suite",
    ];
    let mut results: Vec<Outcome> = Vec::new();
    results.push(guarded(criterion_1));
    results.push(guarded(criterion_2));
    let (c3, c4) = catch_unwind(criteria_3_4).unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
    results.push(c3);
    results.push(c4);
    results.push(guarded(criterion_5));
    results.push(guarded(criterion_6));
    results.push(guarded(criterion_7));
    results.push(guarded(criterion_8));
    results.push(guarded(criterion_9));
    results.push(guarded(criterion_10));
    results.push(guarded(criterion_11));
    results.push(guarded(criterion_12));

    let mut failed = 0;
    for (i, (name, r)) in names.iter().zip(&results).enumerate() {
        let (tag, detail) = match r {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail}", i + 1);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
