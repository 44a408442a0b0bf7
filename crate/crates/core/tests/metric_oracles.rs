use proptest::prelude::*;
use unids::corpus::tod::{generate_tod_corpus, synthetic_database};
use unids::eval::{bleu, gold_traces, tod_scores, ScoredDialogue};
use unids::harness::switch_rate;
use unids::schema::{BucketTable, DbResult};

fn s(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

/// Reference value from NLTK `corpus_bleu` with default weights.
#[test]
fn bleu_matches_reference_implementation() {
    let cands = s(&["the cat sat on the mat", "there is a hotel in the north"]);
    let refs = s(&["the cat is on the mat", "there is a cheap hotel in the north"]);
    let got = bleu(&cands, &refs).unwrap();
    assert!((got - 42.0732820275054).abs() < 1e-9, "{got}");
}

/// Unigrams 4/6, bigrams 1/4, trigrams 0/2 -> 1/3, 4-grams 0/1 -> 1/2,
/// equal lengths: 100 * (1/36)^(1/4).
#[test]
fn zero_match_orders_are_smoothed() {
    let got = bleu(&s(&["a b c d", "e f"]), &s(&["a b x d", "e g"])).unwrap();
    assert!((got - 100.0 / 6f64.sqrt()).abs() < 1e-9, "{got}");
}

fn gold_scored(count: usize, seed: u64) -> Vec<ScoredDialogue> {
    let db = synthetic_database(0);
    generate_tod_corpus(&db, count, seed)
        .unwrap()
        .iter()
        .map(|d| ScoredDialogue {
            goal: d.goal.clone(),
            traces: gold_traces(d, &db, &BucketTable::default()),
            references: d.turns.iter().map(|t| Some(t.response.clone())).collect(),
        })
        .collect()
}

#[test]
fn gold_dialogues_score_perfectly() {
    for (count, seed) in [(100, 7), (1, 7), (30, 123)] {
        let scores = tod_scores(&gold_scored(count, seed)).unwrap();
        assert_eq!((scores.inform, scores.success), (100.0, 100.0), "seed {seed}");
        assert!((scores.bleu - 100.0).abs() < 1e-9);
    }
}

/// Three of ten dialogues offer an entity that breaks one goal constraint.
#[test]
fn corrupted_offers_lose_inform() {
    let db = synthetic_database(0);
    let mut scored = gold_scored(10, 7);
    for d in scored.iter_mut().take(3) {
        let goal = d.goal.clone().unwrap();
        let g = &goal.domains[0];
        let (slot, value) = g.constraints.iter().next().unwrap();
        let wrong = db.tables[&g.domain]
            .iter()
            .find(|e| e.get(slot).is_some_and(|v| !v.eq_ignore_ascii_case(value)))
            .unwrap()
            .clone();
        for t in d.traces.iter_mut().filter(|t| t.db_domain == Some(g.domain)) {
            t.matches = vec![wrong.clone()];
        }
    }
    let scores = tod_scores(&scored).unwrap();
    assert_eq!(scores.inform, 70.0);
    assert!(scores.success <= 70.0);
}

proptest! {
    #[test]
    fn switch_rate_is_monotone_and_decomposes(firsts in prop::collection::vec(prop::option::of(1usize..8), 1..200)) {
        let mut last = 0.0;
        for n in 1..10 {
            let r = switch_rate(&firsts, n);
            prop_assert!(r >= last);
            let exactly = 100.0 * firsts.iter().filter(|f| **f == Some(n)).count() as f64 / firsts.len() as f64;
            if n > 1 {
                prop_assert!((r - last - exactly).abs() < 1e-9);
            }
            last = r;
        }
    }

    #[test]
    fn buckets_are_monotone(a in 0usize..100_000, b in 0usize..100_000) {
        let t = BucketTable::default();
        let rank = |d: DbResult| [DbResult::Zero, DbResult::One, DbResult::Two, DbResult::Three].iter().position(|x| *x == d);
        let (ra, rb) = (rank(t.bucket(a)).unwrap(), rank(t.bucket(b)).unwrap());
        prop_assert!(a > b || ra <= rb);
    }
}
