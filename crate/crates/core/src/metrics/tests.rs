use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Tensor;

/// Counts n-gram occurrences by direct scanning, without hashing.
fn occurrences(tokens: &[u32], gram: &[u32]) -> usize {
    if tokens.len() < gram.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len()).filter(|&i| &tokens[i..i + gram.len()] == gram).count()
}

fn brute_matches(hyp: &[u32], reference: &[u32], n: usize) -> usize {
    if hyp.len() < n {
        return 0;
    }
    let mut seen: Vec<&[u32]> = Vec::new();
    let mut total = 0;
    for i in 0..=hyp.len() - n {
        let g = &hyp[i..i + n];
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        total += occurrences(hyp, g).min(occurrences(reference, g));
    }
    total
}

fn brute_gleu(hyp: &[u32], reference: &[u32]) -> f64 {
    let m: usize = (1..=4).map(|n| brute_matches(hyp, reference, n)).sum();
    if m == 0 {
        return 0.0;
    }
    let ngrams = |len: usize| (1..=4usize).filter(|&n| len >= n).map(|n| len - n + 1).sum::<usize>();
    (m as f64 / ngrams(hyp.len()) as f64).min(m as f64 / ngrams(reference.len()) as f64)
}

#[test]
fn gleu_examples() {
    assert_eq!(gleu(&[1, 2, 3], &[1, 2, 3]), 1.0);
    assert_eq!(gleu(&[1, 2, 3], &[4, 5]), 0.0);
    assert_eq!(gleu(&["a", "b", "c"], &["a", "b", "d"]), 0.5);
    assert_eq!(gleu::<u32>(&[], &[1, 2]), 0.0);
    assert_eq!(gleu::<u32>(&[], &[]), 0.0);
}

#[test]
fn gleu_matches_scan_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let a: Vec<u32> = (0..rng.gen_range(1..=12)).map(|_| rng.gen_range(0..6)).collect();
        let b: Vec<u32> = (0..rng.gen_range(1..=12)).map(|_| rng.gen_range(0..6)).collect();
        assert_eq!(gleu(&a, &b), brute_gleu(&a, &b), "{a:?} {b:?}");
    }
}

#[test]
fn ngram_totals() {
    for len in 0..8 {
        let t: Vec<u32> = (0..len).collect();
        let c = NGramCounts::new(&t);
        for n in 1..=4 {
            assert_eq!(c.total(n), (len as usize + 1).saturating_sub(n));
        }
    }
}

#[test]
fn corpus_bleu_examples() {
    let refs = vec![vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9]];
    assert!((corpus_bleu(&refs, &refs).unwrap() - 100.0).abs() < 1e-12);
    let empty: Vec<Vec<u32>> = vec![vec![], vec![]];
    assert_eq!(corpus_bleu(&empty, &refs).unwrap(), 0.0);
    assert!(corpus_bleu(&refs[..1], &refs).is_err());
}

#[test]
fn bleu_hand_computed() {
    // hyp "a b c d e f", ref "a b c d e g"
    // p1 = 5/6, p2 = 4/5, p3 = 3/4, p4 = 2/3, no brevity penalty
    let hyp = vec![vec!["a", "b", "c", "d", "e", "f"]];
    let refs = vec![vec!["a", "b", "c", "d", "e", "g"]];
    let want = 100.0 * ((5.0 / 6.0) * (4.0 / 5.0) * (3.0 / 4.0) * (2.0 / 3.0f64)).powf(0.25);
    assert!((corpus_bleu(&hyp, &refs).unwrap() - want).abs() < 1e-9);
    // shorter hypothesis: "a b c d" against the same reference
    let hyp = vec![vec!["a", "b", "c", "d"]];
    let want = 100.0 * (1.0 - 6.0 / 4.0f64).exp();
    assert!((corpus_bleu(&hyp, &refs).unwrap() - want).abs() < 1e-9);
}

#[test]
fn bootstrap_brackets_point_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let refs: Vec<Vec<u32>> = (0..50).map(|_| (0..10).map(|_| rng.gen_range(0..5)).collect()).collect();
    let hyps: Vec<Vec<u32>> = refs
        .iter()
        .map(|r| r.iter().map(|&t| if rng.gen_bool(0.2) { 9 } else { t }).collect())
        .collect();
    let rep = bootstrap_bleu(&hyps, &refs, 200, 1).unwrap();
    assert!(rep.lower <= rep.bleu && rep.bleu <= rep.upper, "{rep:?}");
    assert_eq!(rep, bootstrap_bleu(&hyps, &refs, 200, 1).unwrap());
}

#[test]
fn histogram_examples() {
    let counts = vec![5u64, 100, 3, 7, 1, 1, 9, 2, 8, 4];
    let h = percentile_histogram(vec![1; 20], &counts);
    assert_eq!(h.fractions[0], 1.0);
    let h = percentile_histogram(0..10, &counts);
    assert!(h.fractions.iter().all(|f| (f - 0.1).abs() < 1e-12));
    // ties broken by id: ids 4 and 5 share count 1, 4 ranks first
    let h = percentile_histogram([5], &counts);
    assert_eq!(h.fractions[9], 1.0);
    assert_eq!(PercentileHistogram::label(0), 10);
    assert_eq!(PercentileHistogram::label(9), 100);
    assert_eq!(h.to_csv().lines().count(), 11);
}

#[test]
fn histogram_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let v = 57;
    let counts: Vec<u64> = (0..v).map(|_| rng.gen_range(0..20)).collect();
    let outputs: Vec<usize> = (0..500).map(|_| rng.gen_range(0..v)).collect();
    let h = percentile_histogram(outputs.iter().copied(), &counts);
    for (bin, frac) in h.fractions.iter().enumerate() {
        let mut n = 0;
        for &o in &outputs {
            // rank = number of ids strictly ahead of o
            let rank = (0..v)
                .filter(|&j| counts[j] > counts[o] || (counts[j] == counts[o] && j < o))
                .count();
            if rank * 10 / v == bin {
                n += 1;
            }
        }
        assert!((frac - n as f64 / 500.0).abs() < 1e-12);
    }
    assert!((h.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn scopes_track_time_and_memory() {
    let outer = timing_scope("outer");
    let inner = timing_scope("inner");
    let t = Tensor::<f64>::zeros(&[1000, 1000]);
    std::thread::sleep(std::time::Duration::from_millis(2));
    let r_inner = inner.finish();
    drop(t);
    let r_outer = outer.finish();
    assert!(r_inner.peak_bytes >= 8_000_000);
    assert!(r_outer.peak_bytes >= 8_000_000);
    assert!(r_outer.elapsed >= r_inner.elapsed);
    assert_eq!(r_inner.label, "inner");
}

fn tokens() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..8, 0..15)
}

proptest! {
    #[test]
    fn gleu_symmetric(a in tokens(), b in tokens()) {
        prop_assert_eq!(gleu(&a, &b), gleu(&b, &a));
    }

    #[test]
    fn gleu_in_unit_interval(a in tokens(), b in tokens()) {
        let g = gleu(&a, &b);
        prop_assert!((0.0..=1.0).contains(&g));
    }

    #[test]
    fn metrics_invariant_under_renaming(a in tokens(), b in tokens(), shift in 1u32..100) {
        let rename = |s: &[u32]| s.iter().map(|t| (t * 7 + shift) % 1000 + 1000).collect::<Vec<_>>();
        prop_assert_eq!(gleu(&a, &b), gleu(&rename(&a), &rename(&b)));
        let (ra, rb) = (rename(&a), rename(&b));
        prop_assert_eq!(
            corpus_bleu(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap(),
            corpus_bleu(&[ra], &[rb]).unwrap()
        );
    }

    #[test]
    fn bleu_invariant_under_duplication(pairs in prop::collection::vec((tokens(), tokens()), 1..6)) {
        let hyps: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
        let refs: Vec<_> = pairs.iter().map(|p| p.1.clone()).collect();
        let once = corpus_bleu(&hyps, &refs).unwrap();
        let hyps2: Vec<_> = hyps.iter().chain(&hyps).cloned().collect();
        let refs2: Vec<_> = refs.iter().chain(&refs).cloned().collect();
        let twice = corpus_bleu(&hyps2, &refs2).unwrap();
        prop_assert!((once - twice).abs() < 1e-9);
    }
}
