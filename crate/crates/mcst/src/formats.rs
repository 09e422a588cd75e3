//! Small file formats: quantizer centroids, toy corpora and homophone groups.

use std::path::Path;

use mcst_core::speechsim::ToyParallelCorpus;
use mcst_core::units::Quantizer;
use mcst_core::{TokenId, VocabKind, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Quantizer text form: a `K d` header, then K lines of d coordinates.
/// `#` starts a comment line.
pub fn quantizer_to_string(q: &Quantizer) -> String {
    let mut s = format!("{} {}\n", q.k(), q.dim);
    for c in &q.centroids {
        let row: Vec<String> = c.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_quantizer(text: &str, path: &Path) -> Result<Quantizer> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hl, header) = lines.next().ok_or_else(|| err(1, "missing `K d` header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(hl, format!("bad header: {e}")))?;
    let [k, dim] = dims[..] else {
        return Err(err(hl, "header must be `K d`".into()));
    };
    if k == 0 || dim == 0 {
        return Err(err(hl, "K and d must be positive".into()));
    }
    let mut centroids = Vec::with_capacity(k);
    for (ln, l) in lines {
        let row: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(ln, format!("bad coordinate: {e}")))?;
        if row.len() != dim {
            return Err(err(ln, format!("expected {dim} coordinates, found {}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(err(ln, "non-finite coordinate".into()));
        }
        if centroids.len() == k {
            return Err(err(ln, format!("more than {k} centroids")));
        }
        centroids.push(row);
    }
    if centroids.len() != k {
        return Err(err(hl, format!("expected {k} centroids, found {}", centroids.len())));
    }
    Ok(Quantizer { centroids, dim })
}

pub fn save_quantizer(path: &Path, q: &Quantizer) -> Result<()> {
    write(path, &quantizer_to_string(q))
}

pub fn load_quantizer(path: &Path) -> Result<Quantizer> {
    parse_quantizer(&read(path)?, path)
}

/// Homophone groups: one group per line, words separated by whitespace,
/// `#` comments. Groups need at least two distinct words and must be disjoint.
pub fn parse_groups(text: &str, path: &Path) -> Result<Vec<Vec<String>>> {
    let mut groups: Vec<Vec<String>> = Vec::new();
    let mut seen = std::collections::BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let words: Vec<String> = line.split_whitespace().map(str::to_lowercase).collect();
        if words.len() < 2 {
            return Err(err("a group needs at least two words".into()));
        }
        for w in &words {
            if mcst_core::text::RESERVED.contains(&w.as_str()) {
                return Err(err(format!("{w:?} is a reserved token")));
            }
            if let Some(prev) = seen.insert(w.clone(), i + 1) {
                return Err(err(format!("{w:?} already appears on line {prev}")));
            }
        }
        groups.push(words);
    }
    Ok(groups)
}

pub fn load_groups(path: &Path) -> Result<Vec<Vec<String>>> {
    parse_groups(&read(path)?, path)
}

/// Toy corpus as JSON: vocabularies, the word translation table, groups,
/// successor lists and sentence pairs, all by surface form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusDoc {
    format: String,
    seed: u64,
    source_vocab: Vec<String>,
    target_vocab: Vec<String>,
    /// Target word of each source word, aligned with `source_vocab`.
    translation: Vec<String>,
    homophone_groups: Vec<Vec<String>>,
    /// Allowed next words of each source word, aligned with `source_vocab`.
    successors: Vec<Vec<String>>,
    pairs: Vec<[String; 2]>,
}

const CORPUS_FORMAT: &str = "mcst-corpus-v1";

pub fn corpus_to_json(c: &ToyParallelCorpus) -> Result<String> {
    let s = |id: TokenId, v: &Vocabulary| v.surface(id).map(str::to_string);
    let words = |ids: &[TokenId], v: &Vocabulary| mcst_core::text::detokenize(ids, v);
    let n_reserved = mcst_core::text::RESERVED.len();
    let doc = CorpusDoc {
        format: CORPUS_FORMAT.into(),
        seed: c.seed,
        source_vocab: c.source.words().to_vec(),
        target_vocab: c.target.words().to_vec(),
        translation: c.translation[n_reserved..]
            .iter()
            .map(|&t| s(t, &c.target))
            .collect::<mcst_core::Result<_>>()?,
        homophone_groups: c
            .homophone_groups
            .iter()
            .map(|g| g.iter().map(|&t| s(t, &c.source)).collect())
            .collect::<mcst_core::Result<_>>()?,
        successors: c.successors[n_reserved..]
            .iter()
            .map(|g| g.iter().map(|&t| s(t, &c.source)).collect())
            .collect::<mcst_core::Result<_>>()?,
        pairs: c
            .pairs
            .iter()
            .map(|(a, b)| Ok([words(a, &c.source)?, words(b, &c.target)?]))
            .collect::<mcst_core::Result<_>>()?,
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("corpus serializes");
    out.push('\n');
    Ok(out)
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<ToyParallelCorpus> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let doc: CorpusDoc = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    if doc.format != CORPUS_FORMAT {
        return Err(bad(format!("expected format {CORPUS_FORMAT}, found {}", doc.format)));
    }
    let source = Vocabulary::new(VocabKind::SourceText, doc.source_vocab)?;
    let target = Vocabulary::new(VocabKind::TargetText, doc.target_vocab)?;
    let n = source.words().len();
    if doc.translation.len() != n || doc.successors.len() != n {
        return Err(bad("`translation` and `successors` must have one entry per source word".into()));
    }
    let id = |w: &str, v: &Vocabulary| v.lookup(w).ok_or_else(|| bad(format!("unknown word {w:?}")));
    let ids = |text: &str, v: &Vocabulary| text.split_whitespace().map(|w| id(w, v)).collect::<Result<Vec<_>>>();
    let reserved = (0..mcst_core::text::RESERVED.len() as u32).map(TokenId);
    let translation = reserved
        .clone()
        .map(Ok)
        .chain(doc.translation.iter().map(|w| id(w, &target)))
        .collect::<Result<Vec<_>>>()?;
    let successors = reserved
        .map(|_| Ok(Vec::new()))
        .chain(doc.successors.iter().map(|g| g.iter().map(|w| id(w, &source)).collect()))
        .collect::<Result<Vec<_>>>()?;
    let homophone_groups = doc
        .homophone_groups
        .iter()
        .map(|g| g.iter().map(|w| id(w, &source)).collect())
        .collect::<Result<Vec<_>>>()?;
    let pairs = doc
        .pairs
        .iter()
        .map(|[a, b]| Ok((ids(a, &source)?, ids(b, &target)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyParallelCorpus {
        source,
        target,
        translation,
        homophone_groups,
        successors,
        pairs,
        seed: doc.seed,
    })
}

pub fn save_corpus(path: &Path, c: &ToyParallelCorpus) -> Result<()> {
    write(path, &corpus_to_json(c)?)
}

pub fn load_corpus(path: &Path) -> Result<ToyParallelCorpus> {
    parse_corpus(&read(path)?, path)
}
