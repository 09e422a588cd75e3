//! Iterative n-best alignment by longest common subsequence.
//!
//! Row 1 is the running anchor. Each later candidate is aligned against the
//! current anchor, and whenever the anchor grows, `unk` is inserted into all
//! previously aligned rows at the same columns.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::text::{CandidateSet, TokenId};

/// Matched index pairs, strictly increasing in both coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LcsTrace {
    pub pairs: Vec<(usize, usize)>,
}

impl LcsTrace {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Token-level longest common subsequence.
///
/// Ties prefer a match, then advancing in `a`, which yields the leftmost match
/// in `a` and then in `b`.
pub fn lcs(a: &[TokenId], b: &[TokenId]) -> LcsTrace {
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    // suffix[i * width + j] = LCS length of a[i..] and b[j..]
    let mut suffix = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            suffix[i * width + j] = if a[i] == b[j] {
                suffix[(i + 1) * width + j + 1] + 1
            } else {
                suffix[(i + 1) * width + j].max(suffix[i * width + j + 1])
            };
        }
    }
    let mut pairs = Vec::with_capacity(suffix[0] as usize);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if suffix[(i + 1) * width + j] == suffix[i * width + j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    LcsTrace { pairs }
}

/// One padded row: tokens plus a mask of inserted `unk` positions.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PaddedRow {
    tokens: Vec<TokenId>,
    pad: Vec<bool>,
}

impl PaddedRow {
    fn from_tokens(tokens: &[TokenId]) -> Self {
        PaddedRow {
            tokens: tokens.to_vec(),
            pad: vec![false; tokens.len()],
        }
    }

    fn push(&mut self, token: TokenId, pad: bool) {
        self.tokens.push(token);
        self.pad.push(pad);
    }
}

/// Pad both rows so that matched tokens share column indexes.
///
/// Inside every gap each side keeps its own tokens left-aligned and fills the
/// remainder with `unk` up to the longer of the two gaps.
///
/// Also returns, per output column of `a`, whether that column was inserted.
fn pad_rows(a: &PaddedRow, b: &PaddedRow, trace: &LcsTrace) -> (PaddedRow, PaddedRow, Vec<bool>) {
    let mut inserted_a = Vec::new();
    let mut out_a = PaddedRow::from_tokens(&[]);
    let mut out_b = PaddedRow::from_tokens(&[]);
    let (mut ia, mut ib) = (0, 0);
    let ends = trace
        .pairs
        .iter()
        .map(|&(x, y)| (x, y, true))
        .chain(core::iter::once((a.tokens.len(), b.tokens.len(), false)));
    for (end_a, end_b, matched) in ends {
        let gap_a = end_a - ia;
        let gap_b = end_b - ib;
        let width = gap_a.max(gap_b);
        for k in 0..width {
            if k < gap_a {
                out_a.push(a.tokens[ia + k], a.pad[ia + k]);
            } else {
                out_a.push(TokenId::UNK, true);
            }
            inserted_a.push(k >= gap_a);
            if k < gap_b {
                out_b.push(b.tokens[ib + k], b.pad[ib + k]);
            } else {
                out_b.push(TokenId::UNK, true);
            }
        }
        if matched {
            out_a.push(a.tokens[end_a], a.pad[end_a]);
            inserted_a.push(false);
            out_b.push(b.tokens[end_b], b.pad[end_b]);
            ia = end_a + 1;
            ib = end_b + 1;
        }
    }
    (out_a, out_b, inserted_a)
}

/// Pad a pair of sequences along an LCS trace of them.
pub fn pairwise_pad(
    a: &[TokenId],
    b: &[TokenId],
    trace: &LcsTrace,
) -> (Vec<TokenId>, Vec<TokenId>) {
    let (pa, pb, _) = pad_rows(&PaddedRow::from_tokens(a), &PaddedRow::from_tokens(b), trace);
    (pa.tokens, pb.tokens)
}

/// Candidates padded to one common length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedCandidateSet {
    pub utterance_id: String,
    pub rows: Vec<Vec<TokenId>>,
    /// `pad_mask[k][col]` is true where row `k` holds an inserted `unk`.
    pub pad_mask: Vec<Vec<bool>>,
    /// Original (0-based) candidate index of each row.
    pub provenance: Vec<usize>,
}

impl AlignedCandidateSet {
    /// Common row length.
    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Row `k` with inserted padding removed.
    pub fn unpadded(&self, k: usize) -> Vec<TokenId> {
        self.rows[k]
            .iter()
            .zip(&self.pad_mask[k])
            .filter(|(_, &p)| !p)
            .map(|(&t, _)| t)
            .collect()
    }

    /// Unaligned rows built directly from the first `n` candidates (no padding).
    pub fn unaligned(cands: &CandidateSet, n: usize) -> Result<Self> {
        check_n(cands, n)?;
        Ok(AlignedCandidateSet {
            utterance_id: cands.utterance_id.clone(),
            rows: cands.candidates[..n].to_vec(),
            pad_mask: cands.candidates[..n].iter().map(|c| vec![false; c.len()]).collect(),
            provenance: (0..n).collect(),
        })
    }
}

fn check_n(cands: &CandidateSet, n: usize) -> Result<()> {
    if n == 0 || n > cands.candidates.len() {
        return Err(Error::CandidateCountOutOfRange {
            requested: n,
            available: cands.candidates.len(),
        });
    }
    Ok(())
}

/// Align the top `n` candidates with `n - 1` anchor passes.
pub fn align_candidates(cands: &CandidateSet, n: usize) -> Result<AlignedCandidateSet> {
    check_n(cands, n)?;
    let mut rows: Vec<PaddedRow> = vec![PaddedRow::from_tokens(&cands.candidates[0])];
    for next in &cands.candidates[1..n] {
        let anchor = &rows[0];
        let incoming = PaddedRow::from_tokens(next);
        let trace = lcs(&anchor.tokens, &incoming.tokens);
        let (new_anchor, new_row, inserted) = pad_rows(anchor, &incoming, &trace);

        for row in rows.iter_mut().skip(1) {
            let mut grown = PaddedRow::from_tokens(&[]);
            let mut src = 0;
            for &ins in &inserted {
                if ins {
                    grown.push(TokenId::UNK, true);
                } else {
                    grown.push(row.tokens[src], row.pad[src]);
                    src += 1;
                }
            }
            *row = grown;
        }
        rows[0] = new_anchor;
        rows.push(new_row);
    }

    Ok(AlignedCandidateSet {
        utterance_id: cands.utterance_id.clone(),
        provenance: (0..n).collect(),
        pad_mask: rows.iter().map(|r| r.pad.clone()).collect(),
        rows: rows.into_iter().map(|r| r.tokens).collect(),
    })
}
