mod oracles;

use mcst_core::eval::{bleu, corpus_bleu, levenshtein, overlap_report, wer};
use mcst_core::speechsim::{gen_corpus, simulate_nbest, ConfusionModel, CorpusParams};
use mcst_core::TokenId;
use proptest::prelude::*;

fn noisy(corpus_groups: Vec<Vec<TokenId>>, p: f64) -> ConfusionModel {
    ConfusionModel {
        homophone_groups: corpus_groups,
        p_confuse: p,
        p_elide: 0.05,
        score_temperature: 1.0,
        p_top1_correct: None,
    }
}

/// Textbook full-matrix edit distance.
fn dp_distance(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

proptest! {
    #[test]
    fn levenshtein_matches_full_table(a in prop::collection::vec((4u32..8).prop_map(TokenId), 0..12),
                                      b in prop::collection::vec((4u32..8).prop_map(TokenId), 0..12)) {
        prop_assert_eq!(levenshtein(&a, &b), dp_distance(&a, &b));
        if !b.is_empty() {
            prop_assert_eq!(wer(&a, &b).unwrap(), dp_distance(&a, &b) as f64 / b.len() as f64);
        }
    }

    #[test]
    fn bleu_is_bounded(a in prop::collection::vec((4u32..8).prop_map(TokenId), 0..12),
                       b in prop::collection::vec((4u32..8).prop_map(TokenId), 1..12)) {
        let s = bleu(&a, &b);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&s));
        prop_assert!((bleu(&b, &b) - 100.0).abs() < 1e-9);
    }
}

#[test]
fn corpus_bleu_aggregates_counts() {
    let a: Vec<TokenId> = [4, 5, 6, 7].map(TokenId).to_vec();
    let b: Vec<TokenId> = [4, 5, 6, 8].map(TokenId).to_vec();
    // p1 = 6/8, p2 = 4/6, p3 = 2/4, p4 = 0/2 unsmoothed -> 0.
    assert_eq!(corpus_bleu([(b.as_slice(), a.as_slice()), (a.as_slice(), b.as_slice())]), 0.0);
    let s = corpus_bleu([(a.as_slice(), a.as_slice()), (b.as_slice(), a.as_slice())]);
    let want = 100.0 * ((7.0f64 / 8.0) * (5.0 / 6.0) * (3.0 / 4.0) * (1.0 / 2.0)).powf(0.25);
    assert!((s - want).abs() < 1e-9, "{s} vs {want}");
}

#[test]
fn more_candidates_never_reduce_coverage() {
    let corpus = gen_corpus(&CorpusParams {
        n_sentences: 60,
        ..CorpusParams::default()
    })
    .unwrap();
    let cm = noisy(corpus.homophone_groups.clone(), 0.3);
    let sets: Vec<_> = corpus
        .pairs
        .iter()
        .enumerate()
        .map(|(i, (s, t))| simulate_nbest(&format!("u{i}"), s, t, &cm, 20, i as u64).unwrap().set)
        .collect();
    for set in &sets {
        set.validate(false).unwrap();
        assert!(set.candidates.contains(&set.transcript));
    }
    let ns: Vec<usize> = (1..=20).collect();
    let rep = overlap_report(&sets, &ns).unwrap();
    for w in rep.rows.windows(2) {
        assert!(w[1].cumulative_overlap >= w[0].cumulative_overlap);
    }
    let last = rep.rows.last().unwrap();
    assert!(last.cumulative_overlap > last.average_overlap);
    assert_eq!(rep.rows[0].average_overlap, rep.rows[0].cumulative_overlap);
}

#[test]
fn forced_top1_rate_is_respected() {
    let corpus = gen_corpus(&CorpusParams::default()).unwrap();
    let mut cm = noisy(corpus.homophone_groups.clone(), 0.4);
    cm.p_top1_correct = Some(0.5);
    let mut hits = 0;
    let mut multi = 0;
    for (i, (s, t)) in corpus.pairs.iter().enumerate() {
        let sim = simulate_nbest("u", s, t, &cm, 5, i as u64).unwrap();
        if sim.set.len() > 1 {
            multi += 1;
            hits += usize::from(sim.set.candidates[0] == *s);
        }
    }
    let rate = hits as f64 / multi as f64;
    assert!(multi > 100 && (rate - 0.5).abs() < 0.1, "{rate} over {multi}");
}
