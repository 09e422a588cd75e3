//! Command-line interface. `main` only parses arguments and reports errors.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mcst_core::align::align_candidates;
use mcst_core::eval::{best_index_analysis, corpus_bleu, overlap_report, wer};
use mcst_core::model::SeqModel;
use mcst_core::speechsim::gen_corpus;
use mcst_core::text::{detokenize, tokenize};
use mcst_core::train::train_with;
use mcst_core::{CandidateSet, TokenId, Vocabulary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, InputSpec};
use crate::config::{table3_settings, ExperimentConfig, Setting, PRESETS};
use crate::error::{io_err, json_message, Error, Result};
use crate::experiment::{self, Seeds};
use crate::formats;
use crate::nbest::{self, NbestRecord};
use crate::parallel::ParallelGradients;
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "mcst", version = crate::experiment::VERSION_LONG, about = "Multi-candidate cascaded speech translation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded toy parallel corpus (JSON).
    GenCorpus(GenCorpus),
    /// Simulate n-best ASR output for a corpus (JSON Lines).
    SimulateAsr(SimulateAsr),
    /// Align the top-n candidates of each utterance (JSON Lines).
    Align(Align),
    /// Train a translation model on an n-best file and write a checkpoint.
    Train(Train),
    /// Translate an n-best file with a checkpoint (JSON Lines).
    Translate(Translate),
    /// Overlap and best-candidate analysis, optionally scoring hypotheses.
    Report(Report),
    /// Run a full comparison of settings (4)-(7) into a run directory.
    Experiment(Experiment),
}

/// Where the experiment configuration comes from.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in preset: table3, setting4, setting5, setting6 or setting7.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::preset("table3")?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenCorpus {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Output corpus file.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of sentence pairs (overrides the configuration).
    #[arg(long)]
    pub sentences: Option<usize>,
    /// Extra homophone groups: one group per line, `#` comments.
    #[arg(long)]
    pub homophones: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateAsr {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Corpus file written by `gen-corpus`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output n-best file. Receives the training part when --test-out is given.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the held-out part (config `test_fraction`) here.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Candidates per utterance (overrides `asr.n_best`).
    #[arg(long)]
    pub n: Option<usize>,
    /// Homophone substitution probability (overrides `asr.p_confuse`).
    #[arg(long)]
    pub p_confuse: Option<f64>,
    /// Attach speech units and write the fitted quantizer here.
    #[arg(long)]
    pub quantizer_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Align {
    /// Input n-best file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Candidates to align per utterance.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct Train {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Training n-best file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Input setting: 4 (top-1), 5 (+MC), 6 (+MC +Alignment), 7 (+Units).
    #[arg(long, default_value = "6")]
    pub setting: String,
    /// Candidates per utterance for multi-candidate settings (overrides `n_candidates`).
    #[arg(long)]
    pub n: Option<usize>,
    /// Quantizer used to produce the units; required by setting 7.
    #[arg(long)]
    pub quantizer: Option<PathBuf>,
    /// Epochs (overrides `train.epochs`).
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BeamArgs {
    /// Beam width.
    #[arg(long)]
    pub beam: Option<usize>,
    /// Maximum output length.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Length-normalization exponent.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Translate {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input n-best file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Candidates per utterance (defaults to the checkpoint's).
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Debug, Args)]
pub struct Report {
    /// Input n-best file.
    #[arg(long)]
    pub input: PathBuf,
    /// Candidate counts for the overlap table.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
    pub ns: Vec<usize>,
    /// Translate the top candidates with this checkpoint for the best-index table.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Candidates considered by the best-index table.
    #[arg(long, default_value_t = 5)]
    pub best_n: usize,
    /// Hypotheses written by `translate`, scored against the references.
    #[arg(long)]
    pub hypotheses: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Debug, Args)]
pub struct Experiment {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Run directory for config.toml, version.txt, report.json and report.txt.
    #[arg(long, required_unless_present = "list_presets")]
    pub out: Option<PathBuf>,
    /// List the built-in presets and exit.
    #[arg(long)]
    pub list_presets: bool,
}

/// One line of `align` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedRecord {
    pub id: String,
    pub rows: Vec<Vec<String>>,
    pub pad_mask: Vec<Vec<bool>>,
    /// Original candidate index of each row.
    pub provenance: Vec<usize>,
}

/// One line of `translate` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub id: String,
    pub hypothesis: String,
    pub score: f64,
    pub n_candidates_used: usize,
    pub beam: usize,
}

fn warn(msg: &str) {
    eprintln!("mcst: warning: {msg}");
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(io_err(p)),
        // A closed pipe (`mcst align … | head`) is not an error.
        None => match std::io::stdout().write_all(text.as_bytes()) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => r.map_err(io_err(Path::new("<stdout>"))),
        },
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

fn read_records(path: &Path) -> Result<Vec<NbestRecord>> {
    let ing = nbest::read_nbest(path)?;
    ing.warnings.iter().for_each(|w| warn(w));
    Ok(ing.records)
}

/// Tokenize records against fixed vocabularies, reporting unknown words once per record.
fn to_sets(records: &[NbestRecord], source: &Vocabulary, target: &Vocabulary) -> Result<Vec<CandidateSet>> {
    records
        .iter()
        .map(|r| {
            let (set, w) = nbest::record_to_set(r, source, target)?;
            w.iter().for_each(|m| warn(m));
            Ok(set)
        })
        .collect()
}

pub fn setting_by_label(label: &str) -> Result<Setting> {
    table3_settings()
        .into_iter()
        .find(|s| s.label == label)
        .ok_or_else(|| Error::Config(format!("unknown setting {label:?}; expected 4, 5, 6 or 7")))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus(a) => gen_corpus_cmd(a),
        Command::SimulateAsr(a) => simulate_asr_cmd(a),
        Command::Align(a) => align_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Translate(a) => translate_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
    }
}

fn gen_corpus_cmd(a: GenCorpus) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(n) = a.sentences {
        cfg.corpus.n_sentences = n;
    }
    if let Some(p) = &a.homophones {
        cfg.corpus.extra_groups.extend(formats::load_groups(p)?);
    }
    let corpus = gen_corpus(&cfg.corpus_params(Seeds::derive(cfg.seed).corpus))?;
    formats::save_corpus(&a.out, &corpus)?;
    eprintln!(
        "wrote {} pairs, {} source words, {} homophone groups to {}",
        corpus.pairs.len(),
        corpus.source.words().len(),
        corpus.homophone_groups.len(),
        a.out.display()
    );
    Ok(())
}

fn simulate_asr_cmd(a: SimulateAsr) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(n) = a.n {
        cfg.asr.n_best = n;
    }
    if let Some(p) = a.p_confuse {
        cfg.asr.p_confuse = p;
    }
    cfg.confusion(Vec::new()).validate()?;
    let seeds = Seeds::derive(cfg.seed);
    let corpus = formats::load_corpus(&a.corpus)?;
    let (mut sets, shortfalls) = experiment::simulate_sets(&cfg, &corpus, &seeds)?;
    if shortfalls > 0 {
        warn(&format!("{shortfalls} utterance(s) have fewer than {} distinct candidates", cfg.asr.n_best));
    }
    let (train, test) = match a.test_out {
        Some(_) => experiment::split(sets.len(), cfg.test_fraction, seeds.split),
        None => ((0..sets.len()).collect(), Vec::new()),
    };
    if let Some(q_path) = &a.quantizer_out {
        let q = experiment::attach_units(&cfg, &corpus, &mut sets, &train, &seeds)?;
        formats::save_quantizer(q_path, &q)?;
    }
    let records = |idx: &[usize]| {
        idx.iter()
            .map(|&i| nbest::set_to_record(&sets[i], &corpus.source, &corpus.target))
            .collect::<Result<Vec<_>>>()
    };
    nbest::write_nbest(&a.out, &records(&train)?)?;
    if let Some(p) = &a.test_out {
        nbest::write_nbest(p, &records(&test)?)?;
    }
    eprintln!("wrote {} + {} utterances", train.len(), test.len());
    Ok(())
}

fn align_cmd(a: Align) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let records = read_records(&a.input)?;
    let (source, target) = nbest::vocabularies_from(&records)?;
    let sets = to_sets(&records, &source, &target)?;
    let out = sets
        .iter()
        .map(|s| {
            let al = align_candidates(s, a.n.min(s.len()))?;
            let rows = al
                .rows
                .iter()
                .map(|r| r.iter().map(|&t| source.surface(t).map(str::to_string)).collect())
                .collect::<mcst_core::Result<_>>()?;
            Ok(AlignedRecord {
                id: al.utterance_id,
                rows,
                pad_mask: al.pad_mask,
                provenance: al.provenance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(a.out.as_deref(), &jsonl(&out))
}

fn train_cmd(a: Train) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(n) = a.n {
        cfg.n_candidates = n;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let setting = setting_by_label(&a.setting)?;
    let records = read_records(&a.data)?;
    if records.is_empty() {
        return Err(Error::Config(format!("{}: nothing to train on", a.data.display())));
    }
    let unit_k = if setting.use_units {
        let q_path = a
            .quantizer
            .as_ref()
            .ok_or_else(|| Error::Config("setting 7 needs --quantizer (written by simulate-asr --quantizer-out)".into()))?;
        let k = formats::load_quantizer(q_path)?.k();
        if let Some(r) = records.iter().find(|r| r.units.is_none()) {
            return Err(Error::Config(format!("{}: record {} has no units", a.data.display(), r.id)));
        }
        if let Some(r) = records.iter().find(|r| r.units.iter().flatten().any(|&u| u as usize >= k)) {
            return Err(Error::Config(format!("record {} has unit ids outside the {k}-unit quantizer", r.id)));
        }
        Some(k)
    } else {
        None
    };
    let (source, target) = nbest::vocabularies_from(&records)?;
    let sets = to_sets(&records, &source, &target)?;
    let data = sets
        .iter()
        .map(|s| experiment::example_for(s, &setting, cfg.n_candidates))
        .collect::<Result<Vec<_>>>()?;
    let seeds = Seeds::derive(cfg.seed);
    let mut model = SeqModel::new(cfg.model_config(source.len(), target.len(), unit_k), seeds.init)?;
    let tc = cfg.train_config(seeds.train);
    train_with(&mut model, &data, &tc, &ParallelGradients, |e, l| {
        eprintln!("epoch {}/{}: loss {l:.4}", e + 1, tc.epochs)
    })?;
    let ckpt = Checkpoint {
        model,
        input: InputSpec {
            use_mc: setting.use_mc,
            use_alignment: setting.use_alignment,
            use_units: setting.use_units,
            n_candidates: if setting.use_mc { cfg.n_candidates } else { 1 },
        },
        source,
        target,
    };
    ckpt.save(&a.out)
}

fn beam_from(ckpt_default: mcst_core::decode::BeamConfig, a: &BeamArgs) -> mcst_core::decode::BeamConfig {
    let mut b = ckpt_default;
    if let Some(v) = a.beam {
        b.beam = v;
    }
    if let Some(v) = a.max_len {
        b.max_len = v;
    }
    if let Some(v) = a.alpha {
        b.alpha = v;
    }
    b
}

fn translate_cmd(a: Translate) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let beam = beam_from(ExperimentConfig::default().beam_config(), &a.beam);
    let setting = ckpt.input.setting();
    let n = a.n.unwrap_or(ckpt.input.n_candidates);
    let records = read_records(&a.input)?;
    let sets = to_sets(&records, &ckpt.source, &ckpt.target)?;
    if setting.use_units {
        if let Some(s) = sets.iter().find(|s| s.units.is_none()) {
            return Err(Error::Config(format!("checkpoint expects units but {} has none", s.utterance_id)));
        }
    }
    let out = sets
        .par_iter()
        .map(|s| {
            let (h, used) = experiment::translate_set(&ckpt.model, s, &setting, n, &beam)?;
            Ok(TranslationRecord {
                id: s.utterance_id.clone(),
                hypothesis: detokenize(h.output(), &ckpt.target)?,
                score: h.score,
                n_candidates_used: used,
                beam: beam.beam,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(a.out.as_deref(), &jsonl(&out))
}

/// Machine-readable output of `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub utterances: usize,
    pub overlap: Vec<experiment::OverlapRow>,
    pub best_index: Option<experiment::BestIndex>,
    pub hypotheses: Option<HypothesisScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisScores {
    pub scored: usize,
    pub corpus_bleu: f64,
    pub mean_wer: f64,
}

fn report_cmd(a: Report) -> Result<()> {
    let records = read_records(&a.input)?;
    let ckpt = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let (source, target) = match &ckpt {
        Some(c) => (c.source.clone(), c.target.clone()),
        None => nbest::vocabularies_from(&records)?,
    };
    let sets = to_sets(&records, &source, &target)?;
    if sets.is_empty() {
        return Err(Error::Config(format!("{}: no utterances to analyse", a.input.display())));
    }
    let overlap: Vec<_> = overlap_report(&sets, &a.ns)?
        .rows
        .into_iter()
        .map(|r| experiment::OverlapRow {
            n: r.n,
            average: r.average_overlap,
            cumulative: r.cumulative_overlap,
        })
        .collect();
    let mut text = report::render_overlap(&overlap);

    let best_index = match (&ckpt, &a.checkpoint) {
        (Some(ckpt), Some(p)) => {
            let beam = beam_from(ExperimentConfig::default().beam_config(), &a.beam);
            let r = best_index_analysis(
                &sets,
                |c| experiment::translate_tokens(&ckpt.model, c, &beam).map_err(|e| match e {
                    Error::Core(e) => e,
                    e => mcst_core::Error::InvalidConfig(e.to_string()),
                }),
                a.best_n,
            )?;
            let b = experiment::BestIndex {
                translator: p.display().to_string(),
                n: r.n,
                counts: r.counts,
                percentages: r.percentages,
                first_candidate_bleu: r.first_candidate_bleu,
                oracle_candidate_bleu: r.oracle_candidate_bleu,
            };
            text.push('\n');
            text.push_str(&report::render_best_index(&b));
            Some(b)
        }
        _ => None,
    };

    let hypotheses = match &a.hypotheses {
        Some(p) => {
            let scored = score_hypotheses(p, &sets, &target)?;
            text.push_str(&format!(
                "\nHypotheses: {} scored, corpus BLEU {:.2}, mean WER {:.3}\n",
                scored.scored, scored.corpus_bleu, scored.mean_wer
            ));
            Some(scored)
        }
        None => None,
    };

    let rep = AnalysisReport {
        utterances: sets.len(),
        overlap,
        best_index,
        hypotheses,
    };
    if let Some(p) = &a.json {
        let json = serde_json::to_string_pretty(&rep).expect("report serializes") + "\n";
        std::fs::write(p, json).map_err(io_err(p))?;
    }
    emit(None, &text)
}

fn score_hypotheses(path: &Path, sets: &[CandidateSet], target: &Vocabulary) -> Result<HypothesisScores> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let by_id: std::collections::BTreeMap<&str, &CandidateSet> =
        sets.iter().map(|s| (s.utterance_id.as_str(), s)).collect();
    let mut pairs: Vec<(Vec<TokenId>, Vec<TokenId>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: TranslationRecord = serde_json::from_str(line).map_err(|e| parse(json_message(&e)))?;
        let set = by_id
            .get(r.id.as_str())
            .ok_or_else(|| parse(format!("id {:?} is not in the input", r.id)))?;
        pairs.push((tokenize(&r.hypothesis, target)?, set.reference.clone()));
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!("{}: no hypotheses", path.display())));
    }
    let wers = pairs
        .iter()
        .map(|(h, r)| wer(h, r))
        .collect::<mcst_core::Result<Vec<_>>>()?;
    Ok(HypothesisScores {
        scored: pairs.len(),
        corpus_bleu: corpus_bleu(pairs.iter().map(|(h, r)| (h.as_slice(), r.as_slice()))),
        mean_wer: wers.iter().sum::<f64>() / wers.len() as f64,
    })
}

fn experiment_cmd(a: Experiment) -> Result<()> {
    if a.list_presets {
        for (name, _) in PRESETS {
            println!("{name}");
        }
        return Ok(());
    }
    let cfg = a.cfg.resolve()?;
    let start = std::time::Instant::now();
    let out = a.out.expect("clap requires --out");
    let rep = experiment::run_to_dir(&cfg, &out, &mut |s| {
        eprintln!("[{:>5.0}s] {s}", start.elapsed().as_secs_f64())
    })?;
    print!("{}", report::render_experiment(&rep));
    Ok(())
}
