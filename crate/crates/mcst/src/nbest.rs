//! N-best corpus files: JSON Lines, one utterance per line.
//!
//! ```text
//! {"id":"utt00001","candidates":["the rays","the race"],"scores":[-0.4,-1.2],
//!  "transcript":"the race","reference":"la carrera","units":[3,17,5]}
//! ```
//!
//! `candidates` are score-descending; `units` is optional. Blank lines are skipped.

use std::collections::BTreeSet;
use std::path::Path;

use mcst_core::text::{detokenize, tokenize};
use mcst_core::units::UnitSequence;
use mcst_core::{CandidateSet, TokenId, VocabKind, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_message, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NbestRecord {
    pub id: String,
    pub candidates: Vec<String>,
    pub scores: Vec<f64>,
    pub transcript: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<u32>>,
}

/// Parsed records plus non-fatal findings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ingested {
    pub records: Vec<NbestRecord>,
    pub warnings: Vec<String>,
}

fn check_record(r: &NbestRecord) -> std::result::Result<(), String> {
    if r.candidates.is_empty() {
        return Err("`candidates` is empty".into());
    }
    if r.scores.len() != r.candidates.len() {
        return Err(format!(
            "{} scores for {} candidates",
            r.scores.len(),
            r.candidates.len()
        ));
    }
    if r.scores.iter().any(|s| !s.is_finite()) {
        return Err("non-finite score".into());
    }
    if r.scores.windows(2).any(|w| w[0] < w[1]) {
        return Err("`scores` are not in descending order".into());
    }
    if r.reference.split_whitespace().next().is_none() {
        return Err("`reference` is empty".into());
    }
    Ok(())
}

/// Parse and validate JSON Lines text. `path` is only used in messages.
pub fn parse_nbest(text: &str, path: &Path) -> Result<Ingested> {
    let mut out = Ingested::default();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: NbestRecord = serde_json::from_str(line).map_err(|e| parse(json_message(&e)))?;
        check_record(&rec).map_err(parse)?;
        if !ids.insert(rec.id.clone()) {
            return Err(parse(format!("duplicate id {:?}", rec.id)));
        }
        out.records.push(rec);
    }
    if out.records.is_empty() {
        out.warnings.push(format!("{}: no records", path.display()));
    }
    Ok(out)
}

pub fn read_nbest(path: &Path) -> Result<Ingested> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_nbest(&text, path)
}

pub fn to_jsonl(records: &[NbestRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_nbest(path: &Path, records: &[NbestRecord]) -> Result<()> {
    std::fs::write(path, to_jsonl(records)).map_err(io_err(path))
}

/// Tokenize a record. Out-of-vocabulary words become `unk` and are reported.
pub fn record_to_set(rec: &NbestRecord, source: &Vocabulary, target: &Vocabulary) -> Result<(CandidateSet, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut tok = |text: &str, vocab: &Vocabulary, what: &str| -> Result<Vec<TokenId>> {
        let t = tokenize(text, vocab)?;
        let oov = text
            .split_whitespace()
            .filter(|w| vocab.lookup(&w.to_lowercase()).is_none())
            .count();
        if oov > 0 {
            warnings.push(format!("{}: {oov} unknown word(s) in {what} mapped to unk", rec.id));
        }
        Ok(t)
    };
    let candidates = rec
        .candidates
        .iter()
        .enumerate()
        .map(|(k, c)| tok(c, source, &format!("candidate {}", k + 1)))
        .collect::<Result<Vec<_>>>()?;
    let transcript = tok(&rec.transcript, source, "transcript")?;
    let reference = tok(&rec.reference, target, "reference")?;
    let units = rec.units.as_ref().map(|ids| UnitSequence {
        deduplicated: ids.windows(2).all(|w| w[0] != w[1]),
        ids: ids.clone(),
    });
    let set = CandidateSet {
        utterance_id: rec.id.clone(),
        candidates,
        scores: rec.scores.clone(),
        transcript,
        reference,
        units,
    };
    set.validate(true)?;
    Ok((set, warnings))
}

pub fn set_to_record(set: &CandidateSet, source: &Vocabulary, target: &Vocabulary) -> Result<NbestRecord> {
    Ok(NbestRecord {
        id: set.utterance_id.clone(),
        candidates: set
            .candidates
            .iter()
            .map(|c| detokenize(c, source))
            .collect::<mcst_core::Result<_>>()?,
        scores: set.scores.clone(),
        transcript: detokenize(&set.transcript, source)?,
        reference: detokenize(&set.reference, target)?,
        units: set.units.as_ref().map(|u| u.ids.clone()),
    })
}

/// Vocabularies built from the word types of a set of records, in sorted order.
pub fn vocabularies_from(records: &[NbestRecord]) -> Result<(Vocabulary, Vocabulary)> {
    let mut src = BTreeSet::new();
    let mut tgt = BTreeSet::new();
    for r in records {
        for text in r.candidates.iter().chain([&r.transcript]) {
            src.extend(text.split_whitespace().map(str::to_lowercase));
        }
        tgt.extend(r.reference.split_whitespace().map(str::to_lowercase));
    }
    let reserved = |w: &String| mcst_core::text::RESERVED.contains(&w.as_str());
    Ok((
        Vocabulary::new(VocabKind::SourceText, src.into_iter().filter(|w| !reserved(w)))?,
        Vocabulary::new(VocabKind::TargetText, tgt.into_iter().filter(|w| !reserved(w)))?,
    ))
}
