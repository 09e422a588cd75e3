use mcst::config::{ExperimentConfig, Setting};
use mcst::experiment::run_experiment;

const TINY: &str = r#"
name = "tiny"
seed = 5
n_candidates = 1
[corpus]
n_sentences = 60
grammar_size = 20
[asr]
n_best = 5
[model]
d_model = 8
n_enc_layers = 1
n_dec_layers = 1
ffn_mult = 2
[train]
epochs = 2
[decode]
beam = 2
max_len = 10
[analysis]
overlap_ns = [1, 3, 5]
best_index_n = 3
"#;

// With a single candidate, multi-candidate input degenerates to the 1-best
// baseline: same input rows, same init, same training order.
#[test]
fn one_candidate_makes_mc_match_the_baseline() {
    let mut cfg: ExperimentConfig = toml::from_str(TINY).unwrap();
    cfg.settings = vec![Setting::new("4", false, false, false), Setting::new("5", true, false, false)];
    let r = run_experiment(&cfg, &mut |_| {}).unwrap();
    let (b4, b5) = (r.bleu("4").unwrap(), r.bleu("5").unwrap());
    assert_eq!(b4.to_bits(), b5.to_bits(), "(4) {b4} vs (5) {b5}");
    let loss = |l: &str| r.settings.iter().find(|s| s.label == l).unwrap().epoch_loss.clone();
    assert_eq!(loss("4"), loss("5"));
}
