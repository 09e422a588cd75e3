//! Tokens, vocabularies and n-best candidate sets.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::units::UnitSequence;

/// Index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const PAD: TokenId = TokenId(0);
    pub const UNK: TokenId = TokenId(1);
    pub const BOS: TokenId = TokenId(2);
    pub const EOS: TokenId = TokenId(3);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_reserved(self) -> bool {
        self.0 < RESERVED.len() as u32
    }
}

/// Surfaces of the reserved ids 0..3.
pub const RESERVED: [&str; 4] = ["<pad>", "unk", "<s>", "</s>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabKind {
    SourceText,
    TargetText,
    SpeechUnit,
}

impl VocabKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VocabKind::SourceText => "source-text",
            VocabKind::TargetText => "target-text",
            VocabKind::SpeechUnit => "speech-unit",
        }
    }
}

/// Bijection between token surfaces and ids. Ids 0..3 are always the reserved tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    kind: VocabKind,
    surfaces: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    /// Build a text vocabulary from word surfaces. Reserved surfaces and repeats are rejected.
    pub fn new<I, S>(kind: VocabKind, words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            kind,
            surfaces: Vec::new(),
            index: BTreeMap::new(),
        };
        for r in RESERVED {
            vocab.push(r.to_string())?;
        }
        for w in words {
            vocab.push(w.into())?;
        }
        Ok(vocab)
    }

    /// Speech-unit vocabulary with `k` unit symbols `u0..u{k-1}` after the reserved block.
    pub fn speech_units(k: usize) -> Self {
        Vocabulary::new(VocabKind::SpeechUnit, (0..k).map(|i| format!("u{i}")))
            .expect("unit symbols are unique")
    }

    fn push(&mut self, surface: String) -> Result<()> {
        if self.index.contains_key(&surface) {
            return Err(Error::DuplicateSurface(surface));
        }
        let id = TokenId(self.surfaces.len() as u32);
        self.index.insert(surface.clone(), id);
        self.surfaces.push(surface);
        Ok(())
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn lookup(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Result<&str> {
        self.surfaces
            .get(id.index())
            .map(String::as_str)
            .ok_or(Error::InvalidTokenId {
                id: id.0,
                size: self.len(),
            })
    }

    /// Non-reserved surfaces in id order.
    pub fn words(&self) -> &[String] {
        &self.surfaces[RESERVED.len()..]
    }

    /// Number of unit symbols for a speech-unit vocabulary.
    pub fn unit_count(&self) -> usize {
        self.len() - RESERVED.len()
    }

    pub fn check(&self, tokens: &[TokenId]) -> Result<()> {
        for &t in tokens {
            if t.index() >= self.len() {
                return Err(Error::InvalidTokenId {
                    id: t.0,
                    size: self.len(),
                });
            }
        }
        Ok(())
    }
}

/// Whitespace split + lowercase; unknown words become `unk`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    if vocab.kind == VocabKind::SpeechUnit {
        return Err(Error::WrongVocabularyKind);
    }
    Ok(text
        .split_whitespace()
        .map(|w| vocab.lookup(&w.to_lowercase()).unwrap_or(TokenId::UNK))
        .collect())
}

/// Join surfaces with single spaces, dropping every reserved token except `unk`.
pub fn detokenize(tokens: &[TokenId], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for &t in tokens {
        let s = vocab.surface(t)?;
        if t.is_reserved() && t != TokenId::UNK {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(s);
    }
    Ok(out)
}

/// One utterance's n-best ASR output together with its references.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub utterance_id: String,
    pub candidates: Vec<Vec<TokenId>>,
    /// Cumulative log-probabilities, non-increasing.
    pub scores: Vec<f64>,
    pub transcript: Vec<TokenId>,
    pub reference: Vec<TokenId>,
    pub units: Option<UnitSequence>,
}

impl CandidateSet {
    /// Check the structural invariants. `allow_unk` admits tokenizer-produced unk in candidates.
    pub fn validate(&self, allow_unk: bool) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidCandidateSet("no candidates".into()));
        }
        if self.scores.len() != self.candidates.len() {
            return Err(Error::InvalidCandidateSet(format!(
                "{} scores for {} candidates",
                self.scores.len(),
                self.candidates.len()
            )));
        }
        if self.scores.windows(2).any(|w| !(w[0] >= w[1])) {
            return Err(Error::InvalidCandidateSet("scores are not non-increasing".into()));
        }
        for (k, c) in self.candidates.iter().enumerate() {
            if c.iter().any(|&t| t.is_reserved() && !(allow_unk && t == TokenId::UNK)) {
                return Err(Error::InvalidCandidateSet(format!(
                    "candidate {} contains a reserved token",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// True when any candidate carries a tokenizer-produced `unk`.
    pub fn has_unk(&self) -> bool {
        self.candidates.iter().flatten().any(|&t| t == TokenId::UNK)
    }
}
