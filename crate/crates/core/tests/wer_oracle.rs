//! Dynamic-programming WER against exhaustive search and counter identities.

mod common;

use common::EditOracle;
use proptest::prelude::*;
use qtfm::eval::{wer, CorpusWer, Edit};

#[test]
fn dp_distance_equals_exhaustive_search() {
    let oracle = EditOracle::new(&[0, 1, 2], 6);
    assert_eq!(oracle.strings().len(), 1093);
    for r in oracle.strings() {
        let dist = oracle.distances_from(r);
        for (h, d) in oracle.strings().iter().zip(&dist) {
            assert_eq!(wer(r, h).errors(), *d, "{r:?} -> {h:?}");
        }
    }
}

#[test]
fn hand_examples() {
    let a = wer(&["a", "b", "c", "d"], &["a", "c", "d"]);
    assert_eq!((a.hits, a.substitutions, a.insertions, a.deletions), (3, 0, 0, 1));
    assert!((a.wer - 0.25).abs() < 1e-12);
    let e = wer::<u32>(&[], &[]);
    assert_eq!(e.errors(), 0);
    let i = wer::<u32>(&[], &[1, 2]);
    assert_eq!(i.insertions, 2);
    assert!((i.wer - 2.0).abs() < 1e-12);
}

fn tokens() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..5, 0..12)
}

proptest! {
    #[test]
    fn counters_are_consistent(r in tokens(), h in tokens()) {
        let a = wer(&r, &h);
        prop_assert_eq!(a.hits + a.substitutions + a.deletions, r.len());
        prop_assert_eq!(a.hits + a.substitutions + a.insertions, h.len());
        prop_assert!((a.wer - a.errors() as f64 / r.len().max(1) as f64).abs() < 1e-12);
        let mut rr = Vec::new();
        let mut hh = Vec::new();
        for e in &a.alignment {
            match e {
                Edit::Hit(x) => { rr.push(*x); hh.push(*x); }
                Edit::Sub { reference, hypothesis } => { rr.push(*reference); hh.push(*hypothesis); }
                Edit::Ins(y) => hh.push(*y),
                Edit::Del(x) => rr.push(*x),
            }
        }
        prop_assert_eq!(rr, r);
        prop_assert_eq!(hh, h);
    }

    #[test]
    fn distance_is_a_metric(a in tokens(), b in tokens(), c in tokens()) {
        let d = |x: &[u32], y: &[u32]| wer(x, y).errors();
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert_eq!(d(&a, &a), 0);
    }

    #[test]
    fn corpus_totals_add_up(pairs in prop::collection::vec((tokens(), tokens()), 1..8)) {
        let mut c = CorpusWer::default();
        let mut errors = 0;
        let mut words = 0;
        for (r, h) in &pairs {
            let a = wer(r, h);
            errors += a.errors();
            words += r.len();
            c.add(&a);
        }
        prop_assert_eq!(c.utterances, pairs.len());
        prop_assert_eq!(c.substitutions + c.insertions + c.deletions, errors);
        prop_assert_eq!(c.ref_words, words);
    }
}
