//! Synthetic parallel corpus and noisy-channel n-best simulation.
//!
//! Source words are pseudo-words produced by a seeded Markov grammar; every
//! source word has a fixed target word. Some source words are grouped as
//! homophones: they sound alike (share a pronunciation anchor) but translate
//! differently. The ASR simulator substitutes group-mates and drops words.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::eval::levenshtein;
use crate::rng::SeededRng;
use crate::text::{CandidateSet, TokenId, VocabKind, Vocabulary, RESERVED};

/// Parameters of the toy grammar.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusParams {
    /// Number of generated source words.
    pub grammar_size: usize,
    pub n_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of generated words placed in homophone groups.
    pub homophone_fraction: f64,
    /// Largest homophone group size (at least 2).
    pub max_group: usize,
    /// Allowed successors per word in the Markov grammar.
    pub successors: usize,
    /// Additional user-supplied homophone groups (words are added to the vocabulary).
    pub extra_groups: Vec<Vec<String>>,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            grammar_size: 40,
            n_sentences: 400,
            min_len: 4,
            max_len: 8,
            homophone_fraction: 0.5,
            max_group: 3,
            successors: 6,
            extra_groups: Vec::new(),
            seed: 1,
        }
    }
}

/// Word-for-word toy translation corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyParallelCorpus {
    pub source: Vocabulary,
    pub target: Vocabulary,
    /// Target id of each source id (reserved ids map to themselves).
    pub translation: Vec<TokenId>,
    /// Groups of mutually confusable source words.
    pub homophone_groups: Vec<Vec<TokenId>>,
    /// Successor lists of the Markov grammar, indexed by source id.
    pub successors: Vec<Vec<TokenId>>,
    pub pairs: Vec<(Vec<TokenId>, Vec<TokenId>)>,
    pub seed: u64,
}

impl ToyParallelCorpus {
    pub fn translate(&self, src: &[TokenId]) -> Vec<TokenId> {
        src.iter().map(|t| self.translation[t.index()]).collect()
    }

    /// Pronunciation class per source id: homophones share a class.
    pub fn pronunciation_classes(&self) -> Vec<Option<usize>> {
        let mut class = alloc::vec![None; self.source.len()];
        let mut next = 0;
        for g in &self.homophone_groups {
            for t in g {
                class[t.index()] = Some(next);
            }
            next += 1;
        }
        for c in class.iter_mut().skip(RESERVED.len()) {
            if c.is_none() {
                *c = Some(next);
                next += 1;
            }
        }
        class
    }
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const TARGET_ONSETS: [&str; 8] = ["zh", "x", "q", "ch", "sh", "j", "h", "w"];
const TARGET_VOWELS: [&str; 6] = ["ao", "ei", "ou", "ia", "ue", "an"];

fn pseudo_word(rng: &mut SeededRng, onsets: &[&str], vowels: &[&str], syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(onsets[rng.below(onsets.len())]);
        w.push_str(vowels[rng.below(vowels.len())]);
    }
    w
}

fn unique_words(
    rng: &mut SeededRng,
    n: usize,
    onsets: &[&str],
    vowels: &[&str],
    taken: &mut BTreeSet<String>,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    let mut syllables = 2;
    let mut misses = 0;
    while out.len() < n {
        let w = pseudo_word(rng, onsets, vowels, syllables);
        if RESERVED.contains(&w.as_str()) || !taken.insert(w.clone()) {
            misses += 1;
            if misses > 64 {
                syllables += 1;
                misses = 0;
            }
            continue;
        }
        out.push(w);
    }
    out
}

/// Generate a seeded toy parallel corpus.
pub fn gen_corpus(p: &CorpusParams) -> Result<ToyParallelCorpus> {
    if p.grammar_size == 0 || p.n_sentences == 0 || p.min_len == 0 || p.max_len < p.min_len {
        return Err(Error::InvalidConfig("corpus sizes must be at least 1 and min_len <= max_len".into()));
    }
    if !(0.0..=1.0).contains(&p.homophone_fraction) || p.max_group < 2 {
        return Err(Error::InvalidConfig("homophone_fraction in [0,1] and max_group >= 2".into()));
    }
    let mut rng = SeededRng::new(p.seed);
    let mut taken = BTreeSet::new();
    let mut words = unique_words(&mut rng, p.grammar_size, &ONSETS, &VOWELS, &mut taken);

    // Homophone groups over a shuffled prefix of the generated words.
    let mut order: Vec<usize> = (0..words.len()).collect();
    rng.shuffle(&mut order);
    let grouped = ((p.grammar_size as f64) * p.homophone_fraction) as usize;
    let mut groups_idx: Vec<Vec<usize>> = Vec::new();
    let mut i = 0;
    while grouped - i.min(grouped) >= 2 {
        let room = grouped - i;
        let size = (2 + rng.below(p.max_group - 1)).min(room);
        groups_idx.push(order[i..i + size].to_vec());
        i += size;
    }
    for g in &p.extra_groups {
        let mut idx = Vec::new();
        for w in g {
            let w = w.to_lowercase();
            let pos = match words.iter().position(|x| *x == w) {
                Some(pos) => pos,
                None => {
                    if RESERVED.contains(&w.as_str()) {
                        return Err(Error::InvalidConfig(format!("`{w}` is reserved")));
                    }
                    taken.insert(w.clone());
                    words.push(w);
                    words.len() - 1
                }
            };
            if groups_idx.iter().flatten().any(|&j| j == pos) || idx.contains(&pos) {
                return Err(Error::InvalidConfig(format!("word `{}` is in two homophone groups", words[pos])));
            }
            idx.push(pos);
        }
        if idx.len() >= 2 {
            groups_idx.push(idx);
        }
    }

    let source = Vocabulary::new(VocabKind::SourceText, words.clone())?;
    let target_words = unique_words(&mut rng, words.len(), &TARGET_ONSETS, &TARGET_VOWELS, &mut BTreeSet::new());
    let target = Vocabulary::new(VocabKind::TargetText, target_words)?;
    let off = RESERVED.len() as u32;
    let mut translation: Vec<TokenId> = (0..off).map(TokenId).collect();
    translation.extend((0..words.len() as u32).map(|i| TokenId(i + off)));
    let homophone_groups = groups_idx
        .iter()
        .map(|g| g.iter().map(|&i| TokenId(i as u32 + off)).collect())
        .collect();

    let n_words = words.len();
    let mut successors: Vec<Vec<TokenId>> = alloc::vec![Vec::new(); RESERVED.len()];
    for _ in 0..n_words {
        let mut next: Vec<usize> = (0..n_words).collect();
        rng.shuffle(&mut next);
        next.truncate(p.successors.clamp(1, n_words));
        next.sort_unstable();
        successors.push(next.into_iter().map(|i| TokenId(i as u32 + off)).collect());
    }

    let mut pairs = Vec::with_capacity(p.n_sentences);
    for _ in 0..p.n_sentences {
        let len = p.min_len + rng.below(p.max_len - p.min_len + 1);
        let mut s = Vec::with_capacity(len);
        let mut w = TokenId(rng.below(n_words) as u32 + off);
        s.push(w);
        while s.len() < len {
            let succ = &successors[w.index()];
            w = succ[rng.below(succ.len())];
            s.push(w);
        }
        let t = s.iter().map(|x| translation[x.index()]).collect();
        pairs.push((s, t));
    }

    Ok(ToyParallelCorpus {
        source,
        target,
        translation,
        homophone_groups,
        successors,
        pairs,
        seed: p.seed,
    })
}

/// ASR error model.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionModel {
    pub homophone_groups: Vec<Vec<TokenId>>,
    /// Probability a grouped word is replaced by a group-mate.
    pub p_confuse: f64,
    /// Probability a word is dropped.
    pub p_elide: f64,
    /// Scale of the Gumbel noise added to candidate scores.
    pub score_temperature: f64,
    /// If set, probability that the transcript is ranked first when present.
    pub p_top1_correct: Option<f64>,
}

impl ConfusionModel {
    pub fn validate(&self) -> Result<()> {
        let probs = [Some(self.p_confuse), Some(self.p_elide), self.p_top1_correct];
        if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if !(self.score_temperature >= 0.0) {
            return Err(Error::InvalidConfig("score_temperature must be non-negative".into()));
        }
        let mut seen = BTreeSet::new();
        for t in self.homophone_groups.iter().flatten() {
            if !seen.insert(*t) {
                return Err(Error::InvalidConfig("homophone groups must be disjoint".into()));
            }
        }
        Ok(())
    }

    fn group_of(&self, t: TokenId) -> Option<&[TokenId]> {
        self.homophone_groups
            .iter()
            .find(|g| g.contains(&t))
            .map(Vec::as_slice)
    }

    fn perturb(&self, gt: &[TokenId], rng: &mut SeededRng) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(gt.len());
        for &w in gt {
            if rng.bernoulli(self.p_elide) {
                continue;
            }
            match self.group_of(w) {
                Some(g) if g.len() > 1 && rng.bernoulli(self.p_confuse) => {
                    let mates: Vec<TokenId> = g.iter().copied().filter(|&x| x != w).collect();
                    out.push(mates[rng.below(mates.len())]);
                }
                _ => out.push(w),
            }
        }
        out
    }
}

/// A simulated n-best list; `shortfall` counts candidates that could not be produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedNbest {
    pub set: CandidateSet,
    pub shortfall: usize,
}

/// Attempts per requested candidate before giving up on distinctness.
const ATTEMPTS_PER_CANDIDATE: usize = 50;

/// Sample up to `n` distinct candidates for `transcript` and rank them by synthetic score.
///
/// The score is minus the word edit distance to the transcript plus Gumbel
/// noise scaled by the temperature.
pub fn simulate_nbest(
    utterance_id: &str,
    transcript: &[TokenId],
    reference: &[TokenId],
    cm: &ConfusionModel,
    n: usize,
    seed: u64,
) -> Result<SimulatedNbest> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    cm.validate()?;
    let mut rng = SeededRng::new(seed);
    let mut pool: Vec<Vec<TokenId>> = alloc::vec![transcript.to_vec()];
    let mut attempts = 0;
    while pool.len() < n && attempts < n * ATTEMPTS_PER_CANDIDATE {
        attempts += 1;
        let c = cm.perturb(transcript, &mut rng);
        if !pool.contains(&c) {
            pool.push(c);
        }
    }
    let mut scores: Vec<f64> = pool
        .iter()
        .map(|c| -(levenshtein(c, transcript) as f64) + cm.score_temperature * rng.gumbel())
        .collect();

    if let Some(p) = cm.p_top1_correct {
        if pool.len() > 1 {
            let argmax = |s: &[f64]| {
                (0..s.len()).fold(0, |best, i| if s[i] > s[best] { i } else { best })
            };
            let top = argmax(&scores);
            if rng.bernoulli(p) {
                scores.swap(0, top);
            } else if top == 0 {
                let second = (1..scores.len()).fold(1, |best, i| if scores[i] > scores[best] { i } else { best });
                scores.swap(0, second);
            }
        }
    }

    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let set = CandidateSet {
        utterance_id: utterance_id.into(),
        candidates: order.iter().map(|&i| pool[i].clone()).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
        transcript: transcript.to_vec(),
        reference: reference.to_vec(),
        units: None,
    };
    Ok(SimulatedNbest {
        shortfall: n - set.candidates.len(),
        set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn race() -> (Vocabulary, ConfusionModel) {
        let v = Vocabulary::new(VocabKind::SourceText, ["the", "race", "rays"]).unwrap();
        let cm = ConfusionModel {
            homophone_groups: vec![vec![v.lookup("race").unwrap(), v.lookup("rays").unwrap()]],
            p_confuse: 1.0,
            p_elide: 0.0,
            score_temperature: 1.0,
            p_top1_correct: None,
        };
        (v, cm)
    }

    #[test]
    fn homophone_pair_appears() {
        let (v, cm) = race();
        let gt = crate::text::tokenize("the race", &v).unwrap();
        let sim = simulate_nbest("u", &gt, &gt, &cm, 2, 3).unwrap();
        assert_eq!(sim.shortfall, 0);
        let rays = crate::text::tokenize("the rays", &v).unwrap();
        assert!(sim.set.candidates.contains(&gt));
        assert!(sim.set.candidates.contains(&rays));
    }

    #[test]
    fn noiseless_collapses_to_one() {
        let (v, mut cm) = race();
        cm.p_confuse = 0.0;
        let gt = crate::text::tokenize("the race", &v).unwrap();
        let sim = simulate_nbest("u", &gt, &gt, &cm, 5, 3).unwrap();
        assert_eq!(sim.set.candidates, vec![gt]);
        assert_eq!(sim.shortfall, 4);
    }

    #[test]
    fn forced_top1_rate() {
        let (v, mut cm) = race();
        cm.p_confuse = 0.5;
        cm.p_top1_correct = Some(0.0);
        let gt = crate::text::tokenize("the race the rays", &v).unwrap();
        for seed in 0..20 {
            let sim = simulate_nbest("u", &gt, &gt, &cm, 3, seed).unwrap();
            if sim.set.len() > 1 {
                assert_ne!(sim.set.candidates[0], gt);
            }
        }
        cm.p_top1_correct = Some(1.0);
        for seed in 0..20 {
            let sim = simulate_nbest("u", &gt, &gt, &cm, 3, seed).unwrap();
            assert_eq!(sim.set.candidates[0], gt);
        }
    }

    #[test]
    fn groups_must_be_disjoint() {
        let (_, mut cm) = race();
        cm.homophone_groups.push(cm.homophone_groups[0].clone());
        assert!(cm.validate().is_err());
    }

    #[test]
    fn corpus_is_word_for_word_and_seeded() {
        let p = CorpusParams {
            n_sentences: 20,
            ..CorpusParams::default()
        };
        let c = gen_corpus(&p).unwrap();
        assert_eq!(c, gen_corpus(&p).unwrap());
        for (s, t) in &c.pairs {
            assert_eq!(s.len(), t.len());
            assert_eq!(&c.translate(s), t);
        }
        let other = gen_corpus(&CorpusParams { seed: 2, ..p.clone() }).unwrap();
        assert_ne!(c.pairs, other.pairs);
        let classes = c.pronunciation_classes();
        for g in &c.homophone_groups {
            assert!(g.len() >= 2);
            assert!(g.iter().all(|t| classes[t.index()] == classes[g[0].index()]));
            let targets: BTreeSet<_> = g.iter().map(|t| c.translation[t.index()]).collect();
            assert_eq!(targets.len(), g.len());
        }
    }

    #[test]
    fn extra_groups_join_vocabulary() {
        let p = CorpusParams {
            n_sentences: 5,
            extra_groups: vec![vec!["race".into(), "rays".into(), "raise".into()]],
            ..CorpusParams::default()
        };
        let c = gen_corpus(&p).unwrap();
        let race = c.source.lookup("race").unwrap();
        assert!(c.homophone_groups.iter().any(|g| g.contains(&race) && g.len() == 3));
    }
}
