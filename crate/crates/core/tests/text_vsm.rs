use std::collections::HashMap;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use signalcast::text::{
    build_candidate_vocabulary, extract_ngrams, porter_stem, tokenize, FeatureClass, FeatureVocabulary, NGram,
    StopList, TextPipeline,
};
use signalcast::vsm::{
    build_score_matrix, marker_score, tf_idf, topic_score, weighted_topic_score, IntervalLength, Post,
    TimeBinnedCorpus,
};

const WORDS: &[&str] = &[
    "flu", "fever", "rain", "umbrella", "cough", "sore", "throat", "wet", "cold", "sunny", "the", "and",
];

fn post(id: usize, loc: &str, hour: i64, text: &str, pipe: &TextPipeline) -> Post {
    Post {
        id: format!("p{id}"),
        time: Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap() + chrono::Duration::hours(hour),
        location: loc.into(),
        lat: 0.0,
        lon: 0.0,
        tokens: pipe.process(text),
    }
}

fn plain() -> TextPipeline {
    TextPipeline::new(StopList::english(), false)
}

fn corpus_from(texts: &[(usize, &str, i64, String)], pipe: &TextPipeline) -> TimeBinnedCorpus {
    let posts = texts
        .iter()
        .map(|(i, l, h, t)| post(*i, l, *h, t, pipe))
        .collect();
    let start = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
    TimeBinnedCorpus::from_posts(posts, start, IntervalLength::HOUR, 6).unwrap().0
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 0..8).prop_map(|w| w.join(" "))
}

#[test]
fn stemming_table_verbatim() {
    for (w, s) in [
        ("researches", "research"),
        ("happiness", "happi"),
        ("happier", "happier"),
        ("singularity", "singular"),
    ] {
        assert_eq!(porter_stem(w), s, "{w}");
    }
}

#[test]
fn stemming_is_idempotent_on_most_words() {
    for w in ["researches", "flu", "happiness", "fever", "raining", "sneezing", "umbrellas"] {
        let once = porter_stem(w);
        assert_eq!(porter_stem(&once), once, "{w}");
    }
    assert_eq!(porter_stem("cause"), "caus");
    assert_eq!(porter_stem("caus"), "cau");
}

#[test]
fn tf_idf_two_documents() {
    let docs = vec![
        vec!["a".to_string(), "a".into(), "b".into()],
        vec!["a".to_string()],
    ];
    let vocab = FeatureVocabulary::new(vec![NGram::unigram("a"), NGram::unigram("b")], FeatureClass::U, false).unwrap();
    let w = tf_idf(&docs, &vocab).unwrap();
    assert!((w[(1, 0)] - 0.5 * 2f64.ln()).abs() < 1e-12);
    assert_eq!(w[(0, 0)], 0.0);
    assert_eq!(w[(0, 1)], 0.0);
    assert_eq!(w[(1, 1)], 0.0);
}

#[test]
fn weighted_subscores_sum_to_topic_score() {
    let pipe = plain();
    let posts: Vec<Post> = ["flu fever", "rain", "fever cough", "sore throat fever", "cold"]
        .iter()
        .enumerate()
        .map(|(i, t)| post(i, "x", 0, t, &pipe))
        .collect();
    let markers = vec![NGram::unigram("fever"), NGram::unigram("cough"), NGram::bigram("sore", "throat")];
    let ts = topic_score(&markers, &posts).unwrap();
    // 3 + 1 + 1 presences over 3 markers and 5 posts.
    assert!((ts - 5.0 / 15.0).abs() < 1e-12);
    let per_marker: f64 = markers
        .iter()
        .map(|m| marker_score(m, &posts, true).unwrap())
        .sum::<f64>()
        / markers.len() as f64;
    assert!((ts - per_marker).abs() < 1e-12);
    let weights = [0.5, 2.0, 1.0];
    let (total, subs) = weighted_topic_score(&markers, &weights, &posts).unwrap();
    assert!((total - subs.iter().sum::<f64>()).abs() < 1e-12);
    assert!((subs[0] - 0.5 * 3.0 / 15.0).abs() < 1e-12);
    let (unit, _) = weighted_topic_score(&markers, &[1.0; 3], &posts).unwrap();
    assert!((unit - ts).abs() < 1e-12);
}

/// Independent full-scan count: tokens joined back to strings.
fn brute_counts(texts: &[String], pipe: &TextPipeline, n: usize) -> HashMap<String, usize> {
    let mut out = HashMap::new();
    for t in texts {
        let toks = pipe.process(t);
        if toks.len() < n {
            continue;
        }
        for i in 0..=toks.len() - n {
            *out.entry(toks[i..i + n].join(" ")).or_default() += 1;
        }
    }
    out
}

proptest! {
    // The 1980 rules are not idempotent ("cause" -> "caus" -> "cau"), but
    // restemming only ever shortens, so a fixed point comes quickly.
    #[test]
    fn restemming_shrinks_to_a_fixed_point(w in "[a-z]{1,14}") {
        let mut cur = porter_stem(&w);
        prop_assert!(cur.len() <= w.len());
        for _ in 0..=w.len() {
            let next = porter_stem(&cur);
            prop_assert!(next.len() <= cur.len());
            if next == cur {
                return Ok(());
            }
            cur = next;
        }
        prop_assert!(false, "no fixed point for {}", w);
    }

    #[test]
    fn unigrams_are_the_tokens(s in "[A-Za-z' ,.!]{0,60}") {
        let toks = tokenize(&s);
        let grams: Vec<Vec<String>> = extract_ngrams(&toks, 1).unwrap().iter().map(|g| g.tokens().to_vec()).collect();
        let expected: Vec<Vec<String>> = toks.iter().map(|t| vec![t.clone()]).collect();
        prop_assert_eq!(grams, expected);
    }

    #[test]
    fn vocabulary_matches_brute_force_and_ignores_order(
        texts in prop::collection::vec(sentence(), 1..25),
        refs in prop::collection::vec(sentence(), 1..5),
        n in 1usize..=2,
        min_count in 0usize..4,
    ) {
        let pipe = plain();
        let rows: Vec<(usize, &str, i64, String)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (i, if i % 2 == 0 { "a" } else { "b" }, (i % 6) as i64, t.clone()))
            .collect();
        let corpus = corpus_from(&rows, &pipe);
        let counts = brute_counts(&texts, &pipe, n);
        let got = build_candidate_vocabulary(&refs, &pipe, &corpus, n, min_count);
        let mut expected: Vec<String> = refs
            .iter()
            .flat_map(|r| {
                let toks = pipe.process(r);
                (0..toks.len().saturating_sub(n - 1)).map(move |i| toks[i..i + n].join(" ")).collect::<Vec<_>>()
            })
            .filter(|g| counts.get(g).copied().unwrap_or(0) > min_count)
            .collect();
        expected.sort();
        expected.dedup();
        match got {
            Ok(v) => {
                let ids = v.feature_ids();
                let mut sorted = ids.clone();
                sorted.sort();
                prop_assert_eq!(&sorted, &expected);

                let mut rev_refs = refs.clone();
                rev_refs.reverse();
                let mut rev_rows = rows.clone();
                rev_rows.reverse();
                let rev_rows: Vec<_> = rev_rows.into_iter().map(|(i, l, _, t)| (i, l, 5 - (i % 6) as i64, t)).collect();
                let other = build_candidate_vocabulary(&rev_refs, &pipe, &corpus_from(&rev_rows, &pipe), n, min_count).unwrap();
                prop_assert_eq!(other.feature_ids(), ids.clone());

                if min_count > 0 {
                    let looser = build_candidate_vocabulary(&refs, &pipe, &corpus, n, min_count - 1).unwrap();
                    let looser = looser.feature_ids();
                    prop_assert!(ids.iter().all(|g| looser.contains(g)));
                }
            }
            Err(_) => prop_assert!(expected.is_empty()),
        }
    }

    #[test]
    fn boolean_score_in_unit_interval_and_duplication_invariant(texts in prop::collection::vec(sentence(), 1..20)) {
        let pipe = plain();
        let posts: Vec<Post> = texts.iter().enumerate().map(|(i, t)| post(i, "x", 0, t, &pipe)).collect();
        let doubled: Vec<Post> = posts.iter().chain(posts.iter()).cloned().collect();
        for w in ["flu", "rain", "cough"] {
            let g = NGram::unigram(w);
            let s = marker_score(&g, &posts, true).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((marker_score(&g, &doubled, true).unwrap() - s).abs() < 1e-15);
        }
    }

    #[test]
    fn topic_score_ignores_order(texts in prop::collection::vec(sentence(), 1..20), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let pipe = plain();
        let posts: Vec<Post> = texts.iter().enumerate().map(|(i, t)| post(i, "x", 0, t, &pipe)).collect();
        let markers = vec![NGram::unigram("flu"), NGram::unigram("rain"), NGram::bigram("sore", "throat")];
        let a = topic_score(&markers, &posts).unwrap();
        let mut r = signalcast::rng::stream(seed);
        let mut p2 = posts.clone();
        p2.shuffle(&mut r);
        let mut m2 = markers.clone();
        m2.shuffle(&mut r);
        prop_assert!((topic_score(&m2, &p2).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn tf_idf_nonnegative_and_tf_scale_free(
        docs in prop::collection::vec(prop::collection::vec(prop::sample::select(&WORDS[..10]), 1..10), 2..6),
        k in 2usize..4,
    ) {
        let docs: Vec<Vec<String>> = docs.into_iter().map(|d| d.into_iter().map(String::from).collect()).collect();
        let vocab = FeatureVocabulary::new(
            WORDS[..10].iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().map(NGram::unigram).collect(),
            FeatureClass::U,
            false,
        ).unwrap();
        let w = tf_idf(&docs, &vocab).unwrap();
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        let mut scaled = docs.clone();
        scaled[0] = docs[0].iter().flat_map(|t| std::iter::repeat_n(t.clone(), k)).collect();
        let w2 = tf_idf(&scaled, &vocab).unwrap();
        for i in 0..vocab.len() {
            prop_assert!((w[(i, 0)] - w2[(i, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn score_matrix_matches_cellwise_scores(texts in prop::collection::vec(sentence(), 1..30), boolean in any::<bool>()) {
        let pipe = plain();
        let rows: Vec<(usize, &str, i64, String)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (i, if i % 3 == 0 { "a" } else { "b" }, (i % 6) as i64, t.clone()))
            .collect();
        let corpus = corpus_from(&rows, &pipe);
        let vocab = FeatureVocabulary::new(
            vec![NGram::bigram("flu", "fever"), NGram::unigram("cough"), NGram::unigram("rain")],
            FeatureClass::U,
            false,
        );
        // Mixed arities are not a valid U vocabulary.
        prop_assert!(vocab.is_err());
        let vocab = FeatureVocabulary::new(
            vec![NGram::unigram("cough"), NGram::unigram("fever"), NGram::unigram("rain")],
            FeatureClass::U,
            false,
        ).unwrap();
        let m = build_score_matrix(&vocab, &corpus, None, boolean).unwrap();
        prop_assert_eq!(m.n_rows(), corpus.locations().len() * corpus.n_intervals());
        for (r, key) in m.rows.iter().enumerate() {
            let l = corpus.location_index(key.location.as_deref().unwrap()).unwrap();
            let bin = corpus.bin(l, key.interval);
            for (j, g) in vocab.entries().iter().enumerate() {
                let expected = if bin.is_empty() { 0.0 } else { marker_score(g, bin, boolean).unwrap() };
                prop_assert_eq!(m.x[(r, j)], expected);
                prop_assert!(m.x[(r, j)] >= 0.0);
            }
        }
    }
}
