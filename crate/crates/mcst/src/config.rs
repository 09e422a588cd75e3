//! Experiment configuration (TOML) and the Table 3 presets.

use std::path::Path;

use mcst_core::decode::BeamConfig;
use mcst_core::model::ModelConfig;
use mcst_core::speechsim::{ConfusionModel, CorpusParams};
use mcst_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Built-in presets: `(name, TOML source)`.
pub const PRESETS: [(&str, &str); 5] = [
    ("table3", include_str!("../presets/table3.toml")),
    ("setting4", include_str!("../presets/setting4.toml")),
    ("setting5", include_str!("../presets/setting5.toml")),
    ("setting6", include_str!("../presets/setting6.toml")),
    ("setting7", include_str!("../presets/setting7.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    /// Candidates fed to multi-candidate settings.
    pub n_candidates: usize,
    /// Fraction of utterances held out for evaluation.
    pub test_fraction: f64,
    pub corpus: CorpusSection,
    pub asr: AsrSection,
    pub units: UnitSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub analysis: AnalysisSection,
    pub settings: Vec<Setting>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub grammar_size: usize,
    pub n_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub homophone_fraction: f64,
    pub max_group: usize,
    pub successors: usize,
    pub extra_groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsrSection {
    pub p_confuse: f64,
    pub p_elide: f64,
    pub score_temperature: f64,
    /// Probability that the transcript is ranked first; omit for score order only.
    pub p_top1_correct: Option<f64>,
    /// Size of the simulated n-best list.
    pub n_best: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitSection {
    /// Codebook size K.
    pub k: usize,
    pub feature_dim: usize,
    pub anchor_spread: f64,
    pub frame_noise: f64,
    pub frames_per_word: usize,
    pub kmeans_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub ffn_mult: usize,
    pub use_positions: bool,
    pub mask_pad: bool,
    pub zero_init_unit_attention: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam: usize,
    pub max_len: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Candidate counts reported in the overlap table.
    pub overlap_ns: Vec<usize>,
    /// Candidates translated for the best-index table.
    pub best_index_n: usize,
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setting {
    pub label: String,
    #[serde(default)]
    pub use_mc: bool,
    #[serde(default)]
    pub use_alignment: bool,
    #[serde(default)]
    pub use_units: bool,
}

impl Setting {
    pub fn new(label: &str, use_mc: bool, use_alignment: bool, use_units: bool) -> Self {
        Setting {
            label: label.to_string(),
            use_mc,
            use_alignment,
            use_units,
        }
    }

    /// Human-readable description, e.g. `+MC +Alignment`.
    pub fn describe(&self) -> String {
        let mut s = String::from("baseline");
        if self.use_mc {
            s = "+MC".into();
        }
        if self.use_alignment {
            s.push_str(" +Alignment");
        }
        if self.use_units {
            s.push_str(" +Units");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_alignment && !self.use_mc {
            return Err(Error::Config(format!(
                "setting {}: use_alignment requires use_mc",
                self.label
            )));
        }
        Ok(())
    }
}

impl Default for CorpusSection {
    fn default() -> Self {
        let p = CorpusParams::default();
        CorpusSection {
            grammar_size: p.grammar_size,
            n_sentences: p.n_sentences,
            min_len: p.min_len,
            max_len: p.max_len,
            homophone_fraction: p.homophone_fraction,
            max_group: p.max_group,
            successors: p.successors,
            extra_groups: Vec::new(),
        }
    }
}

impl Default for AsrSection {
    fn default() -> Self {
        AsrSection {
            p_confuse: 0.3,
            p_elide: 0.05,
            score_temperature: 1.0,
            p_top1_correct: Some(0.5),
            n_best: 20,
        }
    }
}

impl Default for UnitSection {
    fn default() -> Self {
        UnitSection {
            k: 32,
            feature_dim: 8,
            anchor_spread: 1.0,
            frame_noise: 0.3,
            frames_per_word: 3,
            kmeans_iters: 30,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::toy(5, 5);
        ModelSection {
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_enc_layers: m.n_enc_layers,
            n_dec_layers: m.n_dec_layers,
            ffn_mult: m.ffn_mult,
            use_positions: m.use_positions,
            mask_pad: m.mask_pad,
            zero_init_unit_attention: m.zero_init_unit_attention,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            epochs: t.epochs,
            batch: t.batch,
            clip_norm: t.clip_norm,
        }
    }
}

impl Default for DecodeSection {
    fn default() -> Self {
        let b = BeamConfig::default();
        DecodeSection {
            beam: b.beam,
            max_len: b.max_len,
            alpha: b.alpha,
        }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            overlap_ns: vec![1, 5, 10, 20],
            best_index_n: 5,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seed: 0,
            n_candidates: 5,
            test_fraction: 0.2,
            corpus: CorpusSection::default(),
            asr: AsrSection::default(),
            units: UnitSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            decode: DecodeSection::default(),
            analysis: AnalysisSection::default(),
            settings: table3_settings(),
        }
    }
}

/// Settings (4)–(7): baseline, +MC, +MC +Alignment, +MC +Alignment +Units.
pub fn table3_settings() -> Vec<Setting> {
    vec![
        Setting::new("4", false, false, false),
        Setting::new("5", true, false, false),
        Setting::new("6", true, true, false),
        Setting::new("7", true, true, true),
    ]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        Self::from_toml(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.settings.is_empty() {
            return Err(Error::Config("no settings to run".into()));
        }
        let mut labels = std::collections::BTreeSet::new();
        for s in &self.settings {
            s.validate()?;
            if !labels.insert(&s.label) {
                return Err(Error::Config(format!("duplicate setting label {:?}", s.label)));
            }
        }
        if self.n_candidates == 0 || self.n_candidates > self.asr.n_best {
            return Err(Error::Config(format!(
                "n_candidates must be in 1..={} (asr.n_best)",
                self.asr.n_best
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie strictly between 0 and 1".into()));
        }
        if self.uses_units() && (self.units.k == 0 || self.units.feature_dim == 0 || self.units.frames_per_word == 0) {
            return Err(Error::Config(
                "use_units needs a quantizer: units.k, feature_dim and frames_per_word must be positive".into(),
            ));
        }
        if self.analysis.best_index_n == 0 || self.analysis.best_index_n > self.asr.n_best {
            return Err(Error::Config("analysis.best_index_n must be in 1..=asr.n_best".into()));
        }
        if self.analysis.overlap_ns.iter().any(|&n| n == 0 || n > self.asr.n_best) {
            return Err(Error::Config("analysis.overlap_ns entries must be in 1..=asr.n_best".into()));
        }
        let core = |e: mcst_core::Error| Error::Config(e.to_string());
        self.confusion(Vec::new()).validate().map_err(core)?;
        self.model_config(5, 5, None).validate().map_err(core)?;
        if self.decode.beam == 0 || self.decode.max_len == 0 {
            return Err(Error::Config("decode.beam and decode.max_len must be positive".into()));
        }
        if self.train.batch == 0 {
            return Err(Error::Config("train.batch must be positive".into()));
        }
        Ok(())
    }

    pub fn uses_units(&self) -> bool {
        self.settings.iter().any(|s| s.use_units)
    }

    pub fn corpus_params(&self, seed: u64) -> CorpusParams {
        let c = &self.corpus;
        CorpusParams {
            grammar_size: c.grammar_size,
            n_sentences: c.n_sentences,
            min_len: c.min_len,
            max_len: c.max_len,
            homophone_fraction: c.homophone_fraction,
            max_group: c.max_group,
            successors: c.successors,
            extra_groups: c.extra_groups.clone(),
            seed,
        }
    }

    pub fn confusion(&self, groups: Vec<Vec<mcst_core::TokenId>>) -> ConfusionModel {
        ConfusionModel {
            homophone_groups: groups,
            p_confuse: self.asr.p_confuse,
            p_elide: self.asr.p_elide,
            score_temperature: self.asr.score_temperature,
            p_top1_correct: self.asr.p_top1_correct,
        }
    }

    pub fn model_config(&self, src_vocab: usize, tgt_vocab: usize, unit_count: Option<usize>) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            d_model: m.d_model,
            n_heads: m.n_heads,
            n_enc_layers: m.n_enc_layers,
            n_dec_layers: m.n_dec_layers,
            ffn_mult: m.ffn_mult,
            src_vocab,
            tgt_vocab,
            unit_vocab: unit_count.map(|k| k + mcst_core::text::RESERVED.len()),
            use_positions: m.use_positions,
            mask_pad: m.mask_pad,
            zero_init_unit_attention: m.zero_init_unit_attention,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            epochs: self.train.epochs,
            batch: self.train.batch,
            seed,
            clip_norm: self.train.clip_norm,
        }
    }

    pub fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            beam: self.decode.beam,
            max_len: self.decode.max_len,
            alpha: self.decode.alpha,
        }
    }
}
