//! Lexical overlap, BLEU, WER and the best-candidate analysis.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::text::{CandidateSet, TokenId};

/// Word-level Levenshtein distance.
pub fn levenshtein(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word error rate: edit distance over reference length.
pub fn wer(hypothesis: &[TokenId], reference: &[TokenId]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(levenshtein(hypothesis, reference) as f64 / reference.len() as f64)
}

/// Clipped n-gram matches and hypothesis n-gram totals for orders 1..=4.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new(hypothesis: &[TokenId], reference: &[TokenId]) -> Self {
        let mut s = BleuStats {
            hyp_len: hypothesis.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=4 {
            let hyp = ngram_counts(hypothesis, n);
            let rf = ngram_counts(reference, n);
            s.totals[n - 1] = hypothesis.len().saturating_sub(n - 1);
            s.matches[n - 1] = hyp
                .iter()
                .map(|(g, &c)| c.min(rf.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn add(&mut self, o: &BleuStats) {
        for i in 0..4 {
            self.matches[i] += o.matches[i];
            self.totals[i] += o.totals[i];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            libm::exp(1.0 - self.ref_len as f64 / self.hyp_len as f64)
        }
    }

    /// BLEU-4 in `[0, 100]`. With `smooth`, an order >= 2 with no matches uses
    /// `(0 + 1) / (total + 1)` instead of zero.
    pub fn score(&self, smooth: bool) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for i in 0..4 {
            let (m, t) = (self.matches[i], self.totals[i]);
            let p = if m > 0 {
                m as f64 / t as f64
            } else if smooth && i > 0 {
                1.0 / (t as f64 + 1.0)
            } else {
                return 0.0;
            };
            log_sum += libm::log(p);
        }
        100.0 * self.brevity_penalty() * libm::exp(log_sum / 4.0)
    }
}

fn ngram_counts(seq: &[TokenId], n: usize) -> BTreeMap<&[TokenId], usize> {
    let mut m = BTreeMap::new();
    if seq.len() >= n {
        for g in seq.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence-level smoothed BLEU-4.
pub fn bleu(hypothesis: &[TokenId], reference: &[TokenId]) -> f64 {
    BleuStats::new(hypothesis, reference).score(true)
}

/// Corpus-level BLEU-4 from aggregated counts (unsmoothed).
pub fn corpus_bleu<'a, I>(pairs: I) -> f64
where
    I: IntoIterator<Item = (&'a [TokenId], &'a [TokenId])>,
{
    let mut total = BleuStats::default();
    for (h, r) in pairs {
        total.add(&BleuStats::new(h, r));
    }
    total.score(false)
}

fn word_types(seq: &[TokenId]) -> BTreeSet<TokenId> {
    seq.iter().copied().collect()
}

/// Average and cumulative lexical overlap of the top `n` candidates with the transcript.
pub fn lexical_overlap(cands: &CandidateSet, n: usize) -> Result<(f64, f64)> {
    if n == 0 || n > cands.candidates.len() {
        return Err(Error::CandidateCountOutOfRange {
            requested: n,
            available: cands.candidates.len(),
        });
    }
    let gt = word_types(&cands.transcript);
    if gt.is_empty() {
        return Err(Error::EmptyReference);
    }
    let denom = gt.len() as f64;
    let mut union = BTreeSet::new();
    let mut avg = 0.0;
    for c in &cands.candidates[..n] {
        let w = word_types(c);
        avg += w.intersection(&gt).count() as f64 / denom;
        union.extend(w);
    }
    let cumulative = union.intersection(&gt).count() as f64 / denom;
    Ok((avg / n as f64, cumulative))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRow {
    pub n: usize,
    pub average_overlap: f64,
    pub cumulative_overlap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    pub rows: Vec<OverlapRow>,
}

/// Corpus means of [`lexical_overlap`] at each `n`. Utterances with fewer
/// candidates contribute all they have.
pub fn overlap_report(corpus: &[CandidateSet], ns: &[usize]) -> Result<OverlapReport> {
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let (mut a, mut c, mut count) = (0.0, 0.0, 0usize);
        for set in corpus {
            if set.transcript.is_empty() {
                continue;
            }
            let (x, y) = lexical_overlap(set, n.min(set.len()))?;
            a += x;
            c += y;
            count += 1;
        }
        let k = count.max(1) as f64;
        rows.push(OverlapRow {
            n,
            average_overlap: a / k,
            cumulative_overlap: c / k,
        });
    }
    Ok(OverlapReport { rows })
}

/// Distribution of the best-BLEU candidate index plus first vs oracle mean BLEU.
#[derive(Debug, Clone, PartialEq)]
pub struct BestIndexReport {
    pub n: usize,
    /// Utterance counts per 1-based candidate index.
    pub counts: Vec<usize>,
    pub percentages: Vec<f64>,
    pub first_candidate_bleu: f64,
    pub oracle_candidate_bleu: f64,
    pub utterances: usize,
}

/// Translate each of the top `n` candidates and find the index whose translation
/// scores the highest sentence BLEU against the reference (ties: lowest index).
pub fn best_index_analysis<F>(corpus: &[CandidateSet], mut translator: F, n: usize) -> Result<BestIndexReport>
where
    F: FnMut(&[TokenId]) -> Result<Vec<TokenId>>,
{
    if n == 0 {
        return Err(Error::CandidateCountOutOfRange {
            requested: 0,
            available: 0,
        });
    }
    let mut counts = vec![0usize; n];
    let (mut first, mut oracle, mut utterances) = (0.0, 0.0, 0usize);
    for set in corpus {
        if set.reference.is_empty() {
            return Err(Error::EmptyReference);
        }
        let mut best = (0usize, f64::NEG_INFINITY);
        for (k, c) in set.candidates.iter().take(n).enumerate() {
            let b = bleu(&translator(c)?, &set.reference);
            if k == 0 {
                first += b;
            }
            if b > best.1 {
                best = (k, b);
            }
        }
        counts[best.0] += 1;
        oracle += best.1;
        utterances += 1;
    }
    let u = utterances.max(1) as f64;
    Ok(BestIndexReport {
        n,
        percentages: counts.iter().map(|&c| 100.0 * c as f64 / u).collect(),
        counts,
        first_candidate_bleu: first / u,
        oracle_candidate_bleu: oracle / u,
        utterances,
    })
}
