//! Candidate-pooled beam search.
//!
//! For every live beam, all candidate streams decode the same prefix, their
//! pre-norm states are averaged once per generated token, and a single pooled
//! distribution scores the beam's extensions. Selection over the pooled
//! extensions is ordinary beam search.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::log_softmax;
use crate::model::{decode_averaged_padded, Forward, SeqModel, SourceRows};
use crate::tensor::Mat;
use crate::text::TokenId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    /// Beam width `m`.
    pub beam: usize,
    /// Maximum number of generated tokens, `eos` included.
    pub max_len: usize,
    /// Length-normalization exponent.
    pub alpha: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam: 3,
            max_len: 16,
            alpha: 1.0,
        }
    }
}

/// A (partial) translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens after `bos`; ends with `eos` once finished.
    pub tokens: Vec<TokenId>,
    /// Sum of chosen-token log-probabilities under the pooled distributions.
    pub score: f64,
    /// Pre-norm state of each candidate stream at the last decoded position.
    pub per_candidate_states: Vec<Vec<f64>>,
    /// False once `eos` has been emitted.
    pub alive: bool,
}

impl Hypothesis {
    /// Tokens without a trailing `eos`.
    pub fn output(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&TokenId::EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// `score / len^alpha`, `len` counting every generated token.
pub fn length_normalized_score(h: &Hypothesis, alpha: f64) -> f64 {
    normalize(h.score, h.tokens.len(), alpha)
}

pub fn normalize(score: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return score;
    }
    score / libm::pow(len as f64, alpha)
}

/// Tokens a decoder may emit: everything except `pad` and `bos`.
pub fn emittable(tgt_vocab: usize) -> impl Iterator<Item = usize> {
    (0..tgt_vocab).filter(|&v| v != TokenId::PAD.index() && v != TokenId::BOS.index())
}

/// Encoded source side of one utterance.
#[derive(Debug, Clone)]
pub struct Memories {
    pub text: Vec<Mat>,
    /// Padding flags of each text memory's columns.
    pub pads: Vec<Vec<bool>>,
    pub units: Option<Mat>,
}

impl Memories {
    pub fn encode(model: &SeqModel, src: &SourceRows, units: Option<&[u32]>) -> Result<Self> {
        if src.is_empty() || src.rows.iter().all(|r| r.is_empty()) {
            return Err(Error::EmptySequence);
        }
        let mut f = Forward::new(model);
        let (mems, umem) = f.encode_all(src, units)?;
        Ok(Memories {
            text: mems.iter().map(|&m| f.graph.value(m).clone()).collect(),
            pads: src.pad_mask.clone(),
            units: umem.map(|m| f.graph.value(m).clone()),
        })
    }
}

/// Pooled next-token log-probabilities after `generated` plus the per-stream last states.
pub fn next_token_logprobs(
    model: &SeqModel,
    mem: &Memories,
    generated: &[TokenId],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut prefix = Vec::with_capacity(generated.len() + 1);
    prefix.push(TokenId::BOS);
    prefix.extend_from_slice(generated);
    let out = decode_averaged_padded(model, &mem.text, &mem.pads, mem.units.as_ref(), &prefix)?;
    let last = prefix.len() - 1;
    let states = out.per_candidate.iter().map(|s| s.row(last).to_vec()).collect();
    Ok((log_softmax(out.logits.row(last)), states))
}

/// Candidate-pooled beam search. Returns at most `beam` hypotheses, best first.
pub fn beam_search(
    model: &SeqModel,
    src: &SourceRows,
    units: Option<&[u32]>,
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    if cfg.beam == 0 || cfg.max_len == 0 {
        return Err(Error::InvalidConfig("beam and max_len must be at least 1".into()));
    }
    let mem = Memories::encode(model, src, units)?;
    search(model, &mem, cfg)
}

/// Beam search over precomputed memories.
pub fn search(model: &SeqModel, mem: &Memories, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    let vocab = model.config().tgt_vocab;
    let mut live = alloc::vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        per_candidate_states: Vec::new(),
        alive: true,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..cfg.max_len {
        // (cumulative score, token, beam index)
        let mut ext: Vec<(f64, usize, usize)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (b, h) in live.iter().enumerate() {
            let (lp, st) = next_token_logprobs(model, mem, &h.tokens)?;
            for v in emittable(vocab) {
                ext.push((h.score + lp[v], v, b));
            }
            states.push(st);
        }
        ext.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2))
        });
        let mut next = Vec::with_capacity(cfg.beam);
        for &(score, v, b) in ext.iter().take(cfg.beam) {
            let mut tokens = live[b].tokens.clone();
            tokens.push(TokenId(v as u32));
            let h = Hypothesis {
                tokens,
                score,
                per_candidate_states: states[b].clone(),
                alive: v != TokenId::EOS.index(),
            };
            if h.alive {
                next.push(h);
            } else {
                finished.push(h);
            }
        }
        live = next;
        if live.is_empty() || step + 1 == cfg.max_len {
            break;
        }
        if finished.len() >= cfg.beam {
            let kth = kth_best(&finished, cfg.beam, cfg.alpha);
            let bound = live
                .iter()
                .map(|h| normalize(h.score, cfg.max_len, cfg.alpha))
                .fold(f64::NEG_INFINITY, f64::max);
            if cfg.alpha >= 0.0 && bound < kth {
                live.clear();
                break;
            }
        }
    }
    finished.extend(live);
    Ok(rank(finished, cfg.beam, cfg.alpha))
}

fn kth_best(pool: &[Hypothesis], k: usize, alpha: f64) -> f64 {
    let mut s: Vec<f64> = pool.iter().map(|h| length_normalized_score(h, alpha)).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    s[k - 1]
}

/// Stable sort by normalized score, keep the best `k`.
pub fn rank(mut pool: Vec<Hypothesis>, k: usize, alpha: f64) -> Vec<Hypothesis> {
    pool.sort_by(|a, b| {
        length_normalized_score(b, alpha)
            .partial_cmp(&length_normalized_score(a, alpha))
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    pool.truncate(k);
    pool
}

/// Greedy decoding (beam 1) returning the output tokens only.
pub fn greedy(model: &SeqModel, src: &SourceRows, units: Option<&[u32]>, max_len: usize) -> Result<Vec<TokenId>> {
    let cfg = BeamConfig {
        beam: 1,
        max_len,
        alpha: 1.0,
    };
    let best = beam_search(model, src, units, &cfg)?;
    Ok(best.first().map(|h| h.output().to_vec()).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use alloc::vec;

    fn hyp(score: f64, len: usize) -> Hypothesis {
        Hypothesis {
            tokens: vec![TokenId(4); len],
            score,
            per_candidate_states: Vec::new(),
            alive: true,
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(length_normalized_score(&hyp(-2.0, 2), 0.0), -2.0);
        assert_eq!(length_normalized_score(&hyp(-2.0, 2), 1.0), -1.0);
    }

    #[test]
    fn rejects_degenerate_config() {
        let cfg = ModelConfig {
            d_model: 4,
            n_heads: 1,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ffn_mult: 1,
            ..ModelConfig::toy(6, 6)
        };
        let model = SeqModel::new(cfg, 1).unwrap();
        let src = SourceRows::single(&[TokenId(4)]);
        let bad = BeamConfig {
            beam: 0,
            ..BeamConfig::default()
        };
        assert!(beam_search(&model, &src, None, &bad).is_err());
        let empty = SourceRows::new(vec![], vec![]);
        assert!(beam_search(&model, &empty, None, &BeamConfig::default()).is_err());
    }

    #[test]
    fn scores_are_monotone_and_prefixes_shared() {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ffn_mult: 2,
            ..ModelConfig::toy(8, 7)
        };
        let model = SeqModel::new(cfg, 5).unwrap();
        let src = SourceRows::new(
            vec![vec![TokenId(4), TokenId(5)], vec![TokenId(6), TokenId(5)]],
            vec![vec![false; 2]; 2],
        );
        let mem = Memories::encode(&model, &src, None).unwrap();
        let out = search(&model, &mem, &BeamConfig { beam: 3, max_len: 4, alpha: 1.0 }).unwrap();
        assert!(!out.is_empty());
        for h in &out {
            assert!(h.score <= 0.0);
            assert_eq!(h.per_candidate_states.len(), 2);
            // Re-score every prefix and check the running sum never increases.
            let mut running = 0.0;
            for t in 0..h.tokens.len() {
                let (lp, _) = next_token_logprobs(&model, &mem, &h.tokens[..t]).unwrap();
                let next = running + lp[h.tokens[t].index()];
                assert!(next <= running);
                running = next;
            }
            assert!((running - h.score).abs() < 1e-12);
            if !h.alive {
                assert_eq!(h.tokens.last(), Some(&TokenId::EOS));
                assert_eq!(h.tokens.iter().filter(|&&t| t == TokenId::EOS).count(), 1);
            }
        }
    }
}
