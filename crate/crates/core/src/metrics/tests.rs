use proptest::prelude::*;

use super::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[test]
fn bleu_examples() {
    let r = vec![toks("a b c d e")];
    assert!((bleu4(&toks("a b c d"), &r).unwrap() - 0.778801).abs() < 1e-6);
    assert!((bleu4(&toks("a b c d"), &r).unwrap() - (-0.25f64).exp()).abs() < 1e-15);
    assert_eq!(bleu4(&toks("the car stops now"), &[toks("the car stops now")]).unwrap(), 1.0);
    assert_eq!(bleu4(&toks("a b c x d e f"), &[toks("a b c d e f")]).unwrap(), 0.0);
    assert!(bleu(&toks("a b c x d e f"), &[toks("a b c d e f")], 4, Smoothing::Epsilon).unwrap() > 0.0);
    assert_eq!(bleu4(&[] as &[String], &r).unwrap(), 0.0);
    assert!(bleu4(&toks("a"), &[]).is_err());
    // closest reference length, shorter on ties
    let multi = vec![toks("a b c d e f"), toks("a b c d x y z q")];
    let got = bleu4(&toks("a b c d e f x"), &multi).unwrap();
    assert!(got > 0.0 && got <= 1.0);
}

#[test]
fn rouge_examples() {
    assert_eq!(rouge_l(&toks("a b c d"), &toks("a c b d"), 1.2), 0.75);
    assert_eq!(rouge_l(&toks("x y"), &toks("x y"), 1.2), 1.0);
    assert_eq!(rouge_l(&[] as &[String], &toks("x y"), 1.2), 0.0);
    assert_eq!(lcs_len(&toks("a b c d"), &toks("a c b d")), 3);
    // R = 1, P = 1/2: F = 2.44 * 0.5 / (1 + 1.44 * 0.5)
    let f = rouge_l(&toks("a b"), &toks("a"), 1.2);
    assert!((f - 2.44 * 0.5 / 1.72).abs() < 1e-15);
}

#[test]
fn meteor_examples() {
    let s = toks("the man walks");
    assert_eq!(meteor(&s, &s, 0.9, MeteorMode::Damped), 0.5);
    assert_eq!(meteor(&s, &s, 0.3, MeteorMode::Damped), 0.5);
    assert_eq!(meteor(&s, &s, 0.9, MeteorMode::Fmean), 1.0);
    assert_eq!(meteor(&s, &toks("a dog"), 0.9, MeteorMode::Damped), 0.0);
    assert_eq!(meteor(&s, &toks("a dog"), 0.9, MeteorMode::Fmean), 0.0);
    assert_eq!(unigram_matches(&toks("a a b"), &toks("a b b")), 2);
}

#[test]
fn cider_examples() {
    let refs = vec![vec![toks("the car turns left now")], vec![toks("a man walks on road")]];
    let cands = vec![toks("the car turns left now"), toks("x y z")];
    let (items, mean) = cider(&cands, &refs, 4, 10.0).unwrap();
    assert!((items[0] - 10.0).abs() < 1e-9);
    assert_eq!(items[1], 0.0);
    assert!((mean - 5.0).abs() < 1e-9);

    // every n-gram occurs in every document: idf = 0, score defined as 0
    let same = vec![vec![toks("a b")], vec![toks("a b")]];
    let (items, _) = cider(&[toks("a b"), toks("a b")], &same, 4, 10.0).unwrap();
    assert_eq!(items, vec![0.0, 0.0]);
    assert!(cider(&[], &[], 4, 10.0).is_err());
    assert!(cider(&[toks("a")], &[], 4, 10.0).is_err());
}

#[test]
fn corpus_report_means_and_aggregate() {
    let cfg = MetricConfig::default();
    let ids: Vec<String> = vec!["v1".into(), "v2".into(), "v3".into()];
    let cands: Vec<String> = vec!["the car stops at the light.".into(), "a man walks".into(), "x".into()];
    let refs: Vec<Vec<String>> = vec![
        vec!["the car stops at the light.".into()],
        vec!["a man walks slowly".into(), "the man walks".into()],
        vec!["the cyclist waits".into()],
    ];
    let r = score_corpus(&ids, &cands, &refs, &cfg).unwrap();
    assert_eq!(r.count, 3);
    let avg = |f: fn(&PairScores) -> f64| r.pairs.iter().map(f).sum::<f64>() / 3.0;
    assert_eq!(r.bleu4, avg(|p| p.bleu4));
    assert_eq!(r.meteor, avg(|p| p.meteor));
    assert_eq!(r.rouge_l, avg(|p| p.rouge_l));
    assert_eq!(r.cider, avg(|p| p.cider));
    assert_eq!(r.aggregate, 100.0 * (r.bleu4 + r.meteor + r.rouge_l + r.cider) / 4.0);
    assert_eq!(r.pairs[0].bleu4, 1.0);
    assert_eq!(r.pairs[0].rouge_l, 1.0);
    assert_eq!(r.pairs[0].meteor, 0.5);
    assert!(r.aggregate_label.contains("not the challenge S2"));
    let table = r.to_table();
    assert!(table.contains("BLEU-4") && table.contains("v2") && table.contains("not the challenge S2"));
    let back: ScoreReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);

    let one = score_corpus(&ids[..1], &cands[..1], &refs[..1], &cfg).unwrap();
    assert_eq!(one.bleu4, one.pairs[0].bleu4);
    assert_eq!(one.cider, one.pairs[0].cider);

    assert!(score_corpus(&ids, &cands[..2], &refs, &cfg).is_err());
    assert!(score_corpus(&[], &[], &[], &cfg).is_err());
}

#[test]
fn eval_files_reject_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pairs.json");
    std::fs::write(&p, r#"[{"id": "a", "candidate": "x y", "references": ["x y"]}]"#).unwrap();
    let pairs = load_eval_pairs(&p).unwrap();
    let r = score_pairs(&pairs, &MetricConfig::default()).unwrap();
    assert_eq!(r.bleu4, 0.0); // two tokens have no 4-gram
    std::fs::write(&p, r#"[{"id": "a", "candidate": "x", "references": [], "score": 1}]"#).unwrap();
    assert!(load_eval_pairs(&p).is_err());
    assert!(load_eval_pairs(dir.path().join("missing.json")).unwrap_err().is_io());
}

#[test]
fn config_validation() {
    MetricConfig::default().validate().unwrap();
    assert!(MetricConfig { bleu_n: 0, ..Default::default() }.validate().is_err());
    assert!(MetricConfig { meteor_alpha: 1.5, ..Default::default() }.validate().is_err());
    let c: MetricConfig = serde_json::from_str(r#"{"meteor_mode": "fmean", "smoothing": "epsilon"}"#).unwrap();
    assert_eq!((c.meteor_mode, c.smoothing), (MeteorMode::Fmean, Smoothing::Epsilon));
}

/// Longest common subsequence by enumerating every subsequence of `a`.
fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
    let is_sub = |s: &[u8]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << a.len())
        .map(|mask| a.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &x)| x).collect::<Vec<_>>())
        .filter(|s| is_sub(s))
        .map(|s| s.len())
        .max()
        .unwrap_or(0)
}

#[test]
fn lcs_matches_brute_force_exhaustively_for_short_lists() {
    let all: Vec<Vec<u8>> = (0..=4)
        .flat_map(|len| (0..3usize.pow(len)).map(move |code| (0..len).map(|i| (code / 3usize.pow(i) % 3) as u8).collect()))
        .collect();
    for a in &all {
        for b in &all {
            assert_eq!(lcs_len(a, b), lcs_brute(a, b), "{a:?} {b:?}");
        }
    }
}

fn sentence(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..max)
        .prop_map(|v| v.into_iter().map(str::to_string).collect())
}

proptest! {
    #[test]
    fn lcs_matches_brute_force(a in prop::collection::vec(0u8..3, 0..=10), b in prop::collection::vec(0u8..3, 0..=10)) {
        prop_assert_eq!(lcs_len(&a, &b), lcs_brute(&a, &b));
    }

    #[test]
    fn metric_ranges(c in sentence(9), r in sentence(9)) {
        prop_assume!(!r.is_empty());
        let b = bleu4(&c, std::slice::from_ref(&r)).unwrap();
        let rl = rouge_l(&c, &r, 1.2);
        let mp = meteor(&c, &r, 0.9, MeteorMode::Damped);
        let mf = meteor(&c, &r, 0.9, MeteorMode::Fmean);
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((0.0..=1.0).contains(&rl));
        prop_assert!((0.0..=1.0).contains(&mp) && (0.0..=1.0).contains(&mf));
        if !c.is_empty() {
            let m = unigram_matches(&c, &r) as f64;
            prop_assert!(mp <= (m / c.len() as f64).max(m / r.len() as f64) + 1e-12);
        }
    }

    #[test]
    fn metrics_ignore_token_relabeling(c in sentence(9), r in sentence(9), shift in 1u8..5) {
        prop_assume!(!r.is_empty());
        let relabel = |v: &[String]| -> Vec<String> {
            v.iter().map(|t| (((t.as_bytes()[0] - b'a' + shift) % 5 + b'p') as char).to_string()).collect()
        };
        let (c2, r2) = (relabel(&c), relabel(&r));
        prop_assert_eq!(bleu4(&c, std::slice::from_ref(&r)).unwrap(), bleu4(&c2, std::slice::from_ref(&r2)).unwrap());
        prop_assert_eq!(rouge_l(&c, &r, 1.2), rouge_l(&c2, &r2, 1.2));
        prop_assert_eq!(meteor(&c, &r, 0.9, MeteorMode::Damped), meteor(&c2, &r2, 0.9, MeteorMode::Damped));
    }

    #[test]
    fn self_bleu_is_one(c in sentence(12)) {
        prop_assume!(c.len() >= 4);
        prop_assert_eq!(bleu4(&c, std::slice::from_ref(&c)).unwrap(), 1.0);
    }

    #[test]
    fn cider_ignores_reference_order(items in prop::collection::vec((sentence(8), prop::collection::vec(sentence(8), 1..4)), 1..5)) {
        let cands: Vec<Vec<String>> = items.iter().map(|(c, _)| c.clone()).collect();
        let refs: Vec<Vec<Vec<String>>> = items.iter().map(|(_, r)| r.clone()).collect();
        let rev: Vec<Vec<Vec<String>>> = refs.iter().map(|r| r.iter().rev().cloned().collect()).collect();
        let (a, _) = cider(&cands, &refs, 4, 10.0).unwrap();
        let (b, _) = cider(&cands, &rev, 4, 10.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!(*x >= 0.0);
        }
    }
}
