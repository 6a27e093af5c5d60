use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use signalcast::bolasso::{
    baseline_correlation_select, bootstrap_sample, correlation_ranking, hybrid_h, soft_bolasso, BolassoConfig,
    ClassData, Ct, NONZERO_TOL,
};
use signalcast::regression::{lars_lasso_path, lasso_weights_at, ols_fit};
use signalcast::rng;
use signalcast::stats::mse;
use signalcast::text::{FeatureClass, FeatureVocabulary, NGram};
use signalcast::vsm::{RowKey, ScoreMatrix};

fn matrix(x: DMatrix<f64>, y: DVector<f64>, class: FeatureClass, prefix: &str) -> ScoreMatrix {
    let entries = (0..x.ncols())
        .map(|j| match class {
            FeatureClass::B => NGram::bigram(format!("{prefix}{j:02}"), "x"),
            _ => NGram::unigram(format!("{prefix}{j:02}")),
        })
        .collect();
    let vocab = FeatureVocabulary::new(entries, class, false).unwrap();
    let rows = (0..x.nrows())
        .map(|i| RowKey {
            interval: i,
            id: format!("r{i}"),
            location: None,
        })
        .collect();
    ScoreMatrix::new(x, vocab, rows, Some(y)).unwrap()
}

/// Rows driven by a shared latent target; the first `k` columns carry it.
fn planted(seed: u64, n: usize, p: usize, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let y = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    let x = DMatrix::from_fn(n, p, |i, j| {
        let noise: f64 = r.sample(StandardNormal);
        if j < k {
            y[i] * (1.0 + j as f64 * 0.3) + 0.6 * noise
        } else {
            noise
        }
    });
    (x, y)
}

fn split(x: &DMatrix<f64>, y: &DVector<f64>, n_train: usize, class: FeatureClass, prefix: &str) -> (ScoreMatrix, ScoreMatrix) {
    let n = x.nrows();
    let tr = matrix(x.rows(0, n_train).into_owned(), y.rows(0, n_train).into_owned(), class, prefix);
    let va = matrix(
        x.rows(n_train, n - n_train).into_owned(),
        y.rows(n_train, n - n_train).into_owned(),
        class,
        prefix,
    );
    (tr, va)
}

fn small_cfg(seed: u64) -> BolassoConfig {
    BolassoConfig {
        bootstraps: Some(12),
        ct_grid: vec![0.5, 0.75, 1.0],
        seed,
        ..Default::default()
    }
}

/// Bootstrap nonzero counts recomputed from the documented seeding.
fn oracle_counts(train: &ScoreMatrix, cfg: &BolassoConfig, lambdas: &[f64], b: usize) -> Vec<Vec<u32>> {
    let y = train.targets().unwrap();
    let boot_seed = rng::sub_seed(cfg.seed, 1);
    let mut counts = vec![vec![0u32; train.n_features()]; lambdas.len()];
    for k in 0..b {
        let mut r = rng::sub_stream(boot_seed, k as u64);
        let (xs, ys) = bootstrap_sample(&train.x, y, &mut r);
        let path = lars_lasso_path(&xs, &ys, cfg.max_features, cfg.max_iters).unwrap();
        for (l, &lam) in lambdas.iter().enumerate() {
            let w = lasso_weights_at(&path, lam);
            for j in 0..train.n_features() {
                if w[j].abs() > NONZERO_TOL {
                    counts[l][j] += 1;
                }
            }
        }
    }
    counts
}

fn consensus(counts: &[u32], ct: f64, b: usize) -> Vec<usize> {
    (0..counts.len())
        .filter(|&j| counts[j] as f64 >= ct * b as f64 - 1e-9)
        .collect()
}

#[test]
fn consensus_sets_match_oracle_and_nest_in_ct() {
    for seed in 0..3 {
        let (x, y) = planted(seed, 60, 12, 3);
        let (tr, va) = split(&x, &y, 45, FeatureClass::U, "f");
        let cfg = small_cfg(seed);
        let out = soft_bolasso(&tr, &va, &cfg).unwrap();
        let counts = oracle_counts(&tr, &cfg, &out.lambdas, out.bootstraps);
        for (l, c) in counts.iter().enumerate() {
            let sets: Vec<Vec<usize>> = cfg.ct_grid.iter().map(|&ct| consensus(c, ct, out.bootstraps)).collect();
            for w in sets.windows(2) {
                assert!(w[1].iter().all(|j| w[0].contains(j)), "seed {seed} lambda #{l}");
            }
        }
        for d in &out.per_ct {
            let l = out.lambdas.iter().position(|&v| v == d.lambda).unwrap();
            assert_eq!(d.selected, consensus(&counts[l], d.ct, out.bootstraps));
            if d.ct == 1.0 {
                let strict: Vec<usize> = (0..tr.n_features())
                    .filter(|&j| counts[l][j] as usize == out.bootstraps)
                    .collect();
                assert_eq!(d.selected, strict);
            }
        }
    }
}

#[test]
fn bolasso_is_schedule_independent() {
    let (x, y) = planted(7, 50, 10, 3);
    let (tr, va) = split(&x, &y, 38, FeatureClass::U, "f");
    let cfg = small_cfg(7);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| soft_bolasso(&tr, &va, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a, b);
    assert_eq!(a, run(1));
}

#[test]
fn planted_columns_are_selected() {
    let (x, y) = planted(3, 80, 15, 3);
    let (tr, va) = split(&x, &y, 60, FeatureClass::U, "f");
    let out = soft_bolasso(&tr, &va, &small_cfg(3)).unwrap();
    for f in ["f00", "f01", "f02"] {
        assert!(out.result.features.iter().any(|s| s == f), "{f} missing: {:?}", out.result.features);
    }
}

#[test]
fn baseline_keeps_best_prefix() {
    for seed in 0..5 {
        let (x, y) = planted(seed, 50, 12, 4);
        let (tr, va) = split(&x, &y, 35, FeatureClass::U, "f");
        let sel = baseline_correlation_select(&tr, &va, 8).unwrap();
        let ranked = correlation_ranking(&tr).unwrap();
        for i in 1..=8 {
            let cols: Vec<usize> = ranked[..i].iter().map(|r| r.0).collect();
            let m = ols_fit(&tr.x.select_columns(cols.iter()), tr.targets().unwrap(), true).unwrap();
            let p = m.predict(&va.x.select_columns(cols.iter())).unwrap();
            let loss = mse(p.as_slice(), va.targets().unwrap().as_slice()).unwrap();
            assert!(sel.validation_loss <= loss, "seed {seed} prefix {i}");
        }
        assert_eq!(sel.ct, None);
        let ids = tr.feature_ids();
        let want: Vec<String> = ranked[..sel.features.len()].iter().map(|r| ids[r.0].clone()).collect();
        assert_eq!(sel.features, want);
    }
}

/// Least squares with an intercept via SVD, independent of `ols_fit`.
fn svd_loss(xt: &DMatrix<f64>, yt: &DVector<f64>, xv: &DMatrix<f64>, yv: &DVector<f64>) -> f64 {
    let aug = |x: &DMatrix<f64>| x.clone().insert_column(0, 1.0);
    let w = aug(xt).svd(true, true).solve(yt, 1e-12).unwrap();
    let r = aug(xv) * w - yv;
    r.norm_squared() / yv.len() as f64
}

#[test]
fn hybrid_h_is_the_best_union_refit() {
    for seed in 0..5 {
        let (x, y) = planted(100 + seed, 70, 16, 4);
        let (ut, uv) = split(&x.columns(0, 8).into_owned(), &y, 50, FeatureClass::U, "u");
        let (bt, bv) = split(&x.columns(8, 8).into_owned(), &y, 50, FeatureClass::B, "b");
        let cfg = small_cfg(seed);
        let ou = soft_bolasso(&ut, &uv, &cfg).unwrap();
        let ob = soft_bolasso(&bt, &bv, &cfg).unwrap();
        let u = ClassData { train: &ut, val: &uv };
        let b = ClassData { train: &bt, val: &bv };
        let h = hybrid_h(&ou.per_ct, &ob.per_ct, &u, &b).unwrap();
        let mut best = f64::INFINITY;
        let mut best_ct = None;
        for (du, db) in ou.per_ct.iter().zip(&ob.per_ct) {
            let join = |a: &ScoreMatrix, c: &ScoreMatrix| {
                let l = a.x.select_columns(du.selected.iter());
                let r = c.x.select_columns(db.selected.iter());
                let mut out = DMatrix::zeros(l.nrows(), l.ncols() + r.ncols());
                out.columns_mut(0, l.ncols()).copy_from(&l);
                out.columns_mut(l.ncols(), r.ncols()).copy_from(&r);
                out
            };
            let (xt, xv) = (join(&ut, &bt), join(&uv, &bv));
            let m = ols_fit(&xt, ut.targets().unwrap(), true).unwrap();
            let loss = mse(m.predict(&xv).unwrap().as_slice(), uv.targets().unwrap().as_slice()).unwrap();
            let indep = svd_loss(&xt, ut.targets().unwrap(), &xv, uv.targets().unwrap());
            assert!((loss - indep).abs() <= 1e-8 * (1.0 + indep), "seed {seed}: {loss} vs {indep}");
            if loss < best {
                best = loss;
                best_ct = Some(du.ct);
            }
        }
        assert_eq!(h.validation_loss, best, "seed {seed}");
        assert_eq!(h.ct, best_ct.map(Ct::Single));
    }
}
