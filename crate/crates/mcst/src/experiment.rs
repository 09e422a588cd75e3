//! End-to-end runs: corpus → simulated ASR → units → per-setting training,
//! decoding and scoring.

use std::collections::BTreeMap;
use std::path::Path;

use mcst_core::align::{align_candidates, AlignedCandidateSet};
use mcst_core::decode::{beam_search, BeamConfig, Hypothesis};
use mcst_core::eval::{best_index_analysis, corpus_bleu, overlap_report, wer};
use mcst_core::model::{framed, Example, SeqModel, SourceRows};
use mcst_core::speechsim::{gen_corpus, simulate_nbest, ToyParallelCorpus};
use mcst_core::train::train_with;
use mcst_core::units::{dedup, kmeans_fit, quantize, synth_features, AnchorBook, Quantizer};
use mcst_core::{CandidateSet, SeededRng, TokenId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Setting};
use crate::error::{io_err, Result};
use crate::parallel::ParallelGradients;
use crate::report;

/// Package version plus the `git describe` of the build.
pub const VERSION_LONG: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("MCST_GIT_DESCRIBE"), ")");

/// `git describe`-style identifier of this build.
pub fn version() -> String {
    format!("mcst {VERSION_LONG}")
}

/// SplitMix64 step: decorrelated sub-seeds from a base seed and an index.
pub fn sub_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Every seed a run uses, derived from the master seed in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub corpus: u64,
    pub split: u64,
    pub asr: u64,
    pub anchors: u64,
    pub features: u64,
    pub kmeans: u64,
    pub init: u64,
    pub train: u64,
}

impl Seeds {
    pub fn derive(master: u64) -> Self {
        let s = |i| sub_seed(master, i);
        Seeds {
            master,
            corpus: s(0),
            split: s(1),
            asr: s(2),
            anchors: s(3),
            features: s(4),
            kmeans: s(5),
            init: s(6),
            train: s(7),
        }
    }
}

/// Shared data of one run: every setting sees exactly this.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: ToyParallelCorpus,
    /// One simulated n-best list per corpus pair, units attached when configured.
    pub sets: Vec<CandidateSet>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub quantizer: Option<Quantizer>,
    /// Utterances whose n-best list came out shorter than requested.
    pub shortfalls: usize,
}

pub fn prepare(cfg: &ExperimentConfig, seeds: &Seeds) -> Result<Prepared> {
    let corpus = gen_corpus(&cfg.corpus_params(seeds.corpus))?;
    let (mut sets, shortfalls) = simulate_sets(cfg, &corpus, seeds)?;
    let (train, test) = split(sets.len(), cfg.test_fraction, seeds.split);
    let quantizer = if cfg.uses_units() {
        Some(attach_units(cfg, &corpus, &mut sets, &train, seeds)?)
    } else {
        None
    };
    Ok(Prepared {
        corpus,
        sets,
        train,
        test,
        quantizer,
        shortfalls,
    })
}

/// One simulated n-best list per corpus pair, plus the number of short lists.
pub fn simulate_sets(cfg: &ExperimentConfig, corpus: &ToyParallelCorpus, seeds: &Seeds) -> Result<(Vec<CandidateSet>, usize)> {
    let cm = cfg.confusion(corpus.homophone_groups.clone());
    let sims = corpus
        .pairs
        .par_iter()
        .enumerate()
        .map(|(i, (src, tgt))| simulate_nbest(&format!("utt{i:05}"), src, tgt, &cm, cfg.asr.n_best, sub_seed(seeds.asr, i as u64)))
        .collect::<mcst_core::Result<Vec<_>>>()?;
    let shortfalls = sims.iter().filter(|s| s.shortfall > 0).count();
    Ok((sims.into_iter().map(|s| s.set).collect(), shortfalls))
}

/// Seeded train/test partition of `0..n`; both halves sorted, test non-empty.
pub fn split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1)).min(n);
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Synthesize frames from each transcript, fit k-means on the `fit_on`
/// utterances and attach deduplicated units to every set.
pub fn attach_units(
    cfg: &ExperimentConfig,
    corpus: &ToyParallelCorpus,
    sets: &mut [CandidateSet],
    fit_on: &[usize],
    seeds: &Seeds,
) -> Result<Quantizer> {
    let u = &cfg.units;
    let book = AnchorBook::new(corpus.pronunciation_classes(), u.feature_dim, u.anchor_spread, seeds.anchors);
    let feats = sets
        .par_iter()
        .enumerate()
        .map(|(i, s)| synth_features(&book, &s.transcript, u.frames_per_word, u.frame_noise, sub_seed(seeds.features, i as u64)))
        .collect::<mcst_core::Result<Vec<_>>>()?;
    let pool: Vec<Vec<f64>> = fit_on.iter().flat_map(|&i| feats[i].iter().cloned()).collect();
    let q = kmeans_fit(&pool, u.k, seeds.kmeans, u.kmeans_iters)?.quantizer;
    for (set, f) in sets.iter_mut().zip(&feats) {
        set.units = Some(dedup(&quantize(&q, f)?));
    }
    Ok(q)
}

/// Encoder input of one utterance under `setting`, with the candidate count actually used.
pub fn source_for(set: &CandidateSet, setting: &Setting, n: usize) -> Result<(SourceRows, usize)> {
    let n = if setting.use_mc { n.min(set.len()) } else { 1 };
    let rows = if setting.use_alignment {
        align_candidates(set, n)?
    } else {
        AlignedCandidateSet::unaligned(set, n)?
    };
    Ok((SourceRows::from_aligned(&rows), n))
}

fn unit_ids(set: &CandidateSet, setting: &Setting) -> Option<Vec<u32>> {
    if setting.use_units {
        set.units.as_ref().map(|u| u.ids.clone())
    } else {
        None
    }
}

/// Training example for one utterance under `setting`.
pub fn example_for(set: &CandidateSet, setting: &Setting, n: usize) -> Result<Example> {
    Ok(Example {
        source: source_for(set, setting, n)?.0,
        units: unit_ids(set, setting),
        target: framed(&set.reference),
    })
}

pub fn examples(prep: &Prepared, idx: &[usize], setting: &Setting, n: usize) -> Result<Vec<Example>> {
    idx.iter().map(|&i| example_for(&prep.sets[i], setting, n)).collect()
}

/// Best hypothesis for one utterance (empty output if the search returns nothing).
pub fn translate_set(model: &SeqModel, set: &CandidateSet, setting: &Setting, n: usize, beam: &BeamConfig) -> Result<(Hypothesis, usize)> {
    let (src, used) = source_for(set, setting, n)?;
    let units = unit_ids(set, setting);
    let mut hyps = beam_search(model, &src, units.as_deref(), beam)?;
    let best = if hyps.is_empty() {
        Hypothesis {
            tokens: Vec::new(),
            score: f64::NEG_INFINITY,
            per_candidate_states: Vec::new(),
            alive: false,
        }
    } else {
        hyps.swap_remove(0)
    };
    Ok((best, used))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub label: String,
    pub description: String,
    pub use_mc: bool,
    pub use_alignment: bool,
    pub use_units: bool,
    pub n_candidates: usize,
    pub corpus_bleu: f64,
    pub epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub n: usize,
    pub average: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestIndex {
    /// Setting whose model served as the translator.
    pub translator: String,
    pub n: usize,
    pub counts: Vec<usize>,
    pub percentages: Vec<f64>,
    pub first_candidate_bleu: f64,
    pub oracle_candidate_bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub utterances: usize,
    pub train: usize,
    pub test: usize,
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub homophone_groups: usize,
    pub unit_k: Option<usize>,
    pub n_best_shortfalls: usize,
    /// Mean WER of the top-ranked candidate on the test split.
    pub top1_wer: f64,
    /// Share of test utterances whose top candidate is the transcript.
    pub top1_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub version: String,
    pub seeds: Seeds,
    pub data: DataSummary,
    pub overlap: Vec<OverlapRow>,
    pub best_index: Option<BestIndex>,
    /// Translator BLEU on ground-truth transcripts (cascade upper bound).
    pub transcript_bleu: Option<f64>,
    pub settings: Vec<SettingResult>,
}

impl ExperimentReport {
    pub fn bleu(&self, label: &str) -> Option<f64> {
        self.settings.iter().find(|s| s.label == label).map(|s| s.corpus_bleu)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn decode_bleu(model: &SeqModel, prep: &Prepared, idx: &[usize], setting: &Setting, n: usize, beam: &BeamConfig) -> Result<f64> {
    let outs = idx
        .par_iter()
        .map(|&i| translate_set(model, &prep.sets[i], setting, n, beam).map(|(h, _)| h.output().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(corpus_bleu(
        outs.iter().zip(idx).map(|(h, &i)| (h.as_slice(), prep.sets[i].reference.as_slice())),
    ))
}

/// Run every configured setting on one shared corpus.
///
/// `progress` receives human-readable status lines; nothing timing-dependent
/// enters the report.
pub fn run_experiment(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<ExperimentReport> {
    cfg.validate()?;
    let seeds = Seeds::derive(cfg.seed);
    let prep = prepare(cfg, &seeds)?;
    let beam = cfg.beam_config();
    let test_sets: Vec<CandidateSet> = prep.test.iter().map(|&i| prep.sets[i].clone()).collect();
    progress(&format!(
        "corpus: {} utterances ({} train / {} test), {} homophone groups",
        prep.sets.len(),
        prep.train.len(),
        prep.test.len(),
        prep.corpus.homophone_groups.len()
    ));

    let overlap = overlap_report(&prep.sets, &cfg.analysis.overlap_ns)?
        .rows
        .into_iter()
        .map(|r| OverlapRow {
            n: r.n,
            average: r.average_overlap,
            cumulative: r.cumulative_overlap,
        })
        .collect();

    let mut settings = Vec::new();
    let mut baseline: Option<(String, SeqModel)> = None;
    for setting in &cfg.settings {
        let unit_k = if setting.use_units { prep.quantizer.as_ref().map(Quantizer::k) } else { None };
        let mc = cfg.model_config(prep.corpus.source.len(), prep.corpus.target.len(), unit_k);
        let mut model = SeqModel::new(mc, seeds.init)?;
        let data = examples(&prep, &prep.train, setting, cfg.n_candidates)?;
        let label = setting.label.clone();
        let tc = cfg.train_config(seeds.train);
        let rep = train_with(&mut model, &data, &tc, &ParallelGradients, |e, l| {
            if (e + 1) % 10 == 0 || e + 1 == tc.epochs {
                progress(&format!("setting ({label}): epoch {} loss {l:.4}", e + 1));
            }
        })?;
        let bleu = decode_bleu(&model, &prep, &prep.test, setting, cfg.n_candidates, &beam)?;
        progress(&format!("setting ({}) {}: BLEU {bleu:.2}", setting.label, setting.describe()));
        settings.push(SettingResult {
            label: setting.label.clone(),
            description: setting.describe(),
            use_mc: setting.use_mc,
            use_alignment: setting.use_alignment,
            use_units: setting.use_units,
            n_candidates: if setting.use_mc { cfg.n_candidates } else { 1 },
            corpus_bleu: bleu,
            epoch_loss: rep.epoch_loss,
        });
        if baseline.is_none() && !setting.use_mc && !setting.use_units {
            baseline = Some((setting.label.clone(), model));
        }
    }

    let (best_index, transcript_bleu) = match &baseline {
        Some((label, model)) => {
            let mut uniq: Vec<Vec<TokenId>> = test_sets
                .iter()
                .flat_map(|s| s.candidates.iter().take(cfg.analysis.best_index_n).cloned())
                .chain(test_sets.iter().map(|s| s.transcript.clone()))
                .collect();
            uniq.sort();
            uniq.dedup();
            let outs = uniq
                .par_iter()
                .map(|c| translate_tokens(model, c, &beam))
                .collect::<Result<Vec<_>>>()?;
            let table: BTreeMap<&[TokenId], &[TokenId]> =
                uniq.iter().map(Vec::as_slice).zip(outs.iter().map(Vec::as_slice)).collect();
            let r = best_index_analysis(&test_sets, |c| Ok(table[c].to_vec()), cfg.analysis.best_index_n)?;
            let tb = corpus_bleu(test_sets.iter().map(|s| (table[s.transcript.as_slice()], s.reference.as_slice())));
            (
                Some(BestIndex {
                    translator: format!("setting ({label})"),
                    n: r.n,
                    counts: r.counts,
                    percentages: r.percentages,
                    first_candidate_bleu: r.first_candidate_bleu,
                    oracle_candidate_bleu: r.oracle_candidate_bleu,
                }),
                Some(tb),
            )
        }
        None => (None, None),
    };

    let top1_wer = test_sets
        .iter()
        .map(|s| wer(&s.candidates[0], &s.transcript))
        .collect::<mcst_core::Result<Vec<f64>>>()?
        .iter()
        .sum::<f64>()
        / test_sets.len() as f64;
    let top1_exact = test_sets.iter().filter(|s| s.candidates[0] == s.transcript).count() as f64 / test_sets.len() as f64;

    Ok(ExperimentReport {
        name: cfg.name.clone(),
        version: version(),
        data: DataSummary {
            utterances: prep.sets.len(),
            train: prep.train.len(),
            test: prep.test.len(),
            source_vocab: prep.corpus.source.len(),
            target_vocab: prep.corpus.target.len(),
            homophone_groups: prep.corpus.homophone_groups.len(),
            unit_k: prep.quantizer.as_ref().map(Quantizer::k),
            n_best_shortfalls: prep.shortfalls,
            top1_wer,
            top1_exact,
        },
        seeds,
        overlap,
        best_index,
        transcript_bleu,
        settings,
    })
}

/// Translate one token sequence as a single-candidate input.
pub fn translate_tokens(model: &SeqModel, tokens: &[TokenId], beam: &BeamConfig) -> Result<Vec<TokenId>> {
    let hyps = beam_search(model, &SourceRows::single(tokens), None, beam)?;
    Ok(hyps.first().map(|h| h.output().to_vec()).unwrap_or_default())
}

/// Run and write `config.toml`, `version.txt`, `report.json` and `report.txt` into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path, progress: &mut dyn FnMut(&str)) -> Result<ExperimentReport> {
    let report = run_experiment(cfg, progress)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(io_err(&p))
    };
    write("config.toml", &cfg.to_toml())?;
    write("version.txt", &format!("{}\n", report.version))?;
    write("report.json", &report.to_json())?;
    write("report.txt", &report::render_experiment(&report))?;
    Ok(report)
}
