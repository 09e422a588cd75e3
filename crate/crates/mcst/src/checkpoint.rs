//! Model checkpoints: one JSON document.
//!
//! ```text
//! {
//!   "format": "mcst-checkpoint", "version": 1,
//!   "model":  { d_model, n_heads, ..., src_vocab, tgt_vocab, unit_vocab },
//!   "input":  { use_mc, use_alignment, use_units, n_candidates },
//!   "source_vocab": [...], "target_vocab": [...],     // ids 4.. in order
//!   "tensors": [ { "name", "rows", "cols", "data": [row-major] }, ... ]
//! }
//! ```
//!
//! Tensors appear in the model's registration order (`SeqModel::tensor_names`).
//! Floats are written in shortest round-trip form, so load + save reproduces
//! the file byte for byte.

use std::path::Path;

use mcst_core::model::{ModelConfig, SeqModel};
use mcst_core::{Mat, VocabKind, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::config::Setting;
use crate::error::{io_err, Error, Result};

pub const FORMAT: &str = "mcst-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDims {
    d_model: usize,
    n_heads: usize,
    n_enc_layers: usize,
    n_dec_layers: usize,
    ffn_mult: usize,
    src_vocab: usize,
    tgt_vocab: usize,
    unit_vocab: Option<usize>,
    use_positions: bool,
    mask_pad: bool,
    zero_init_unit_attention: bool,
}

/// How the model expects its input to be prepared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub use_mc: bool,
    pub use_alignment: bool,
    pub use_units: bool,
    pub n_candidates: usize,
}

impl InputSpec {
    pub fn setting(&self) -> Setting {
        Setting::new("ckpt", self.use_mc, self.use_alignment, self.use_units)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    version: u32,
    model: ModelDims,
    input: InputSpec,
    source_vocab: Vec<String>,
    target_vocab: Vec<String>,
    tensors: Vec<TensorRecord>,
}

/// A trained model with its vocabularies and input convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SeqModel,
    pub input: InputSpec,
    pub source: Vocabulary,
    pub target: Vocabulary,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let c = self.model.config();
        let doc = Document {
            format: FORMAT.into(),
            version: VERSION,
            model: ModelDims {
                d_model: c.d_model,
                n_heads: c.n_heads,
                n_enc_layers: c.n_enc_layers,
                n_dec_layers: c.n_dec_layers,
                ffn_mult: c.ffn_mult,
                src_vocab: c.src_vocab,
                tgt_vocab: c.tgt_vocab,
                unit_vocab: c.unit_vocab,
                use_positions: c.use_positions,
                mask_pad: c.mask_pad,
                zero_init_unit_attention: c.zero_init_unit_attention,
            },
            input: self.input.clone(),
            source_vocab: self.source.words().to_vec(),
            target_vocab: self.target.words().to_vec(),
            tensors: self
                .model
                .tensor_names()
                .iter()
                .zip(self.model.tensors())
                .map(|(name, m)| TensorRecord {
                    name: name.clone(),
                    rows: m.rows,
                    cols: m.cols,
                    data: m.data.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string(&doc).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let doc: Document = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(bad(format!(
                "expected {FORMAT} version {VERSION}, found {} version {}",
                doc.format, doc.version
            )));
        }
        let m = doc.model;
        let config = ModelConfig {
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_enc_layers: m.n_enc_layers,
            n_dec_layers: m.n_dec_layers,
            ffn_mult: m.ffn_mult,
            src_vocab: m.src_vocab,
            tgt_vocab: m.tgt_vocab,
            unit_vocab: m.unit_vocab,
            use_positions: m.use_positions,
            mask_pad: m.mask_pad,
            zero_init_unit_attention: m.zero_init_unit_attention,
        };
        let source = Vocabulary::new(VocabKind::SourceText, doc.source_vocab)?;
        let target = Vocabulary::new(VocabKind::TargetText, doc.target_vocab)?;
        if source.len() != config.src_vocab || target.len() != config.tgt_vocab {
            return Err(bad("vocabulary sizes disagree with the model dimensions".into()));
        }
        let mut tensors = Vec::with_capacity(doc.tensors.len());
        for t in doc.tensors {
            if t.data.len() != t.rows * t.cols {
                return Err(bad(format!("tensor {} has {} values for {}x{}", t.name, t.data.len(), t.rows, t.cols)));
            }
            tensors.push((t.name, Mat::from_vec(t.rows, t.cols, t.data)));
        }
        let model = SeqModel::from_tensors(config, tensors).map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint {
            model,
            input: doc.input,
            source,
            target,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text, path)
    }
}
