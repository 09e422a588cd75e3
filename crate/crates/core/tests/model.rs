mod oracles;

use mcst_core::decode::{next_token_logprobs, Memories};
use mcst_core::model::{
    backward, decode_averaged, decode_single, encode_text, encode_units, forward_loss, framed, sinusoidal_positions,
    Example, ModelConfig, SeqModel, SourceRows,
};
use mcst_core::{Error, Mat, SeededRng, TokenId};
use oracles::tiny_config;

fn t(ids: &[u32]) -> Vec<TokenId> {
    ids.iter().map(|&i| TokenId(i)).collect()
}

#[test]
fn single_candidate_reduces_to_plain_decoder() {
    oracles::check_reduction(20, 3).unwrap();
}

#[test]
fn gradients_match_finite_differences() {
    let msg = oracles::check_gradients(4, 12, 21).unwrap();
    assert!(msg.contains("max relative error"));
}

#[test]
fn one_averaging_op_per_forward() {
    let cfg = tiny_config(9, 9, None);
    let model = SeqModel::new(cfg, 4).unwrap();
    let ex = Example {
        source: SourceRows::new(vec![t(&[4, 5]), t(&[4, 1, 6]), t(&[7])], vec![vec![false; 2], vec![false, true, false], vec![false]]),
        units: None,
        target: framed(&t(&[5, 6, 7])),
    };
    assert_eq!(backward(&model, &ex).unwrap().mean_ops, 1);
}

#[test]
fn final_norm_output_is_standardized() {
    let model = SeqModel::new(tiny_config(9, 9, None), 5).unwrap();
    let mems = vec![encode_text(&model, &t(&[4, 5, 6])).unwrap(), encode_text(&model, &t(&[6, 7])).unwrap()];
    let out = decode_averaged(&model, &mems, None, &t(&[2, 4, 5])).unwrap();
    for r in 0..out.normed.rows {
        let row = out.normed.row(r);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6, "{mean}");
        assert!((var - 1.0).abs() < 1e-6, "{var}");
    }
    // The averaged state really is the candidate mean.
    let mut avg = out.per_candidate[0].clone();
    avg.add_assign(&out.per_candidate[1]);
    avg.scale_assign(0.5);
    assert!(avg.max_abs_diff(&out.averaged) < 1e-14);
}

#[test]
fn identical_candidates_receive_identical_gradients() {
    let cfg = tiny_config(9, 9, None);
    let model = SeqModel::new(cfg, 6).unwrap();
    let row = t(&[4, 5, 6]);
    let ex = Example {
        source: SourceRows::new(vec![row.clone(), row.clone(), row], vec![vec![false; 3]; 3]),
        units: None,
        target: framed(&t(&[7, 8])),
    };
    let g = backward(&model, &ex).unwrap();
    assert_eq!(g.stream_grads.len(), 3);
    for s in &g.stream_grads[1..] {
        assert!(s.max_abs_diff(&g.stream_grads[0]) < 1e-15);
    }
    assert!(g.stream_grads[0].norm() > 0.0);
}

#[test]
fn uniform_output_gives_log_vocab_loss() {
    let cfg = tiny_config(9, 11, None);
    let mut model = SeqModel::new(cfg, 7).unwrap();
    for name in ["output.w", "output.b"] {
        model.tensor_mut(name).unwrap().scale_assign(0.0);
    }
    let ex = Example {
        source: SourceRows::single(&t(&[4, 5])),
        units: None,
        target: framed(&t(&[6, 7, 8])),
    };
    let loss = forward_loss(&model, &ex).unwrap();
    assert!((loss - (11f64).ln()).abs() < 1e-12, "{loss}");
}

#[test]
fn confident_correct_model_has_vanishing_gradients() {
    let cfg = tiny_config(9, 9, None);
    let mut model = SeqModel::new(cfg, 8).unwrap();
    model.tensor_mut("output.w").unwrap().scale_assign(0.0);
    model.tensor_mut("output.b").unwrap().data[TokenId::EOS.index()] = 60.0;
    let ex = Example {
        source: SourceRows::single(&t(&[4, 5])),
        units: None,
        target: framed(&[]),
    };
    let g = backward(&model, &ex).unwrap();
    assert!(g.loss < 1e-20);
    let max = g.grads.iter().flatten().flat_map(|m| m.data.iter()).fold(0.0f64, |a, x| a.max(x.abs()));
    assert!(max < 1e-20, "{max}");
}

#[test]
fn encoder_without_sublayers_returns_normalized_positions() {
    let cfg = tiny_config(9, 9, None);
    let mut model = SeqModel::zeros(cfg.clone()).unwrap();
    for (i, name) in model.tensor_names().to_vec().into_iter().enumerate() {
        if name.ends_with(".gamma") {
            model.tensors_mut()[i].data.iter_mut().for_each(|x| *x = 1.0);
        }
    }
    let out = encode_text(&model, &t(&[4, 5, 6, 4])).unwrap();
    assert!(out.is_finite());
    let pos = sinusoidal_positions(4, cfg.d_model);
    for r in 0..4 {
        let row = pos.row(r);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        for (c, x) in row.iter().enumerate() {
            let want = (x - mean) / (var + 1e-8).sqrt();
            assert!((out.get(r, c) - want).abs() < 1e-12);
        }
    }
    // All-zero parameters give an all-zero, finite output.
    let zero = SeqModel::zeros(cfg).unwrap();
    let out = encode_text(&zero, &t(&[4, 8])).unwrap();
    assert!(out.data.iter().all(|&x| x == 0.0));
}

#[test]
fn encoder_is_permutation_equivariant_without_positions() {
    let cfg = ModelConfig {
        use_positions: false,
        ..tiny_config(12, 9, None)
    };
    let model = SeqModel::new(cfg, 9).unwrap();
    let row = t(&[4, 9, 6, 11, 5]);
    let perm = [3, 0, 4, 1, 2];
    let permuted: Vec<TokenId> = perm.iter().map(|&i| row[i]).collect();
    let a = encode_text(&model, &row).unwrap();
    let b = encode_text(&model, &permuted).unwrap();
    for (r, &i) in perm.iter().enumerate() {
        for c in 0..a.cols {
            assert!((b.get(r, c) - a.get(i, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn unit_encoder_shapes_and_errors() {
    let model = SeqModel::new(tiny_config(9, 9, Some(8)), 10).unwrap();
    let m = encode_units(&model, &[5, 7, 5]).unwrap();
    assert_eq!((m.rows, m.cols), (3, 8));
    assert!(m.is_finite());
    assert_eq!(encode_units(&model, &[5, 7, 5]).unwrap(), m);
    assert!(matches!(encode_units(&model, &[8]), Err(Error::InvalidUnitId { id: 8, k: 8 })));
    assert!(encode_units(&model, &[]).is_err());
    let text_only = SeqModel::new(tiny_config(9, 9, None), 10).unwrap();
    assert!(matches!(encode_units(&text_only, &[1]), Err(Error::MissingUnitEncoder)));
}

#[test]
fn zero_unit_attention_matches_text_only_model() {
    let text_cfg = tiny_config(9, 9, None);
    let unit_cfg = ModelConfig {
        unit_vocab: Some(4 + 6),
        zero_init_unit_attention: true,
        ..text_cfg.clone()
    };
    let text = SeqModel::new(text_cfg, 11).unwrap();
    let units = SeqModel::new(unit_cfg, 11).unwrap();
    let src = SourceRows::new(vec![t(&[4, 5]), t(&[4, 6, 7])], vec![vec![false; 2], vec![false; 3]]);
    let a = Memories::encode(&text, &src, None).unwrap();
    let b = Memories::encode(&units, &src, Some(&[0, 3, 5])).unwrap();
    let prefix = t(&[2, 5, 6]);
    let la = decode_averaged(&text, &a.text, None, &prefix).unwrap().logits;
    let lb = decode_averaged(&units, &b.text, b.units.as_ref(), &prefix).unwrap().logits;
    assert!(la.max_abs_diff(&lb) <= 1e-9);
    // Without a unit memory the unit sublayers are skipped entirely.
    let lc = decode_averaged(&units, &b.text, None, &prefix).unwrap().logits;
    assert_eq!(la, lc);
}

#[test]
fn padding_mask_changes_encoding_only_when_enabled() {
    let mut model = SeqModel::new(tiny_config(9, 9, None), 12).unwrap();
    let src = SourceRows::new(vec![t(&[4, 1, 5])], vec![vec![false, true, false]]);
    let off = Memories::encode(&model, &src, None).unwrap();
    model.set_mask_pad(true);
    let on = Memories::encode(&model, &src, None).unwrap();
    assert!(off.text[0].max_abs_diff(&on.text[0]) > 1e-6);
}

#[test]
fn masked_padding_columns_are_invisible_to_the_decoder() {
    let mut model = SeqModel::new(tiny_config(9, 9, None), 14).unwrap();
    let plain = SourceRows::new(vec![t(&[4, 5, 6])], vec![vec![false; 3]]);
    let padded = SourceRows::new(vec![t(&[4, 5, 6, 1])], vec![vec![false, false, false, true]]);
    let prefix = [TokenId::BOS, TokenId(5)];
    let logprobs = |m: &SeqModel, src: &SourceRows| {
        let mem = Memories::encode(m, src, None).unwrap();
        next_token_logprobs(m, &mem, &prefix[1..]).unwrap().0
    };
    let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap(&logprobs(&model, &plain), &logprobs(&model, &padded)) > 1e-6);
    model.set_mask_pad(true);
    assert!(gap(&logprobs(&model, &plain), &logprobs(&model, &padded)) < 1e-12);
}

#[test]
fn malformed_inputs_are_rejected() {
    let model = SeqModel::new(tiny_config(9, 9, None), 13).unwrap();
    assert!(matches!(encode_text(&model, &[]), Err(Error::EmptySequence)));
    assert!(matches!(encode_text(&model, &t(&[9])), Err(Error::InvalidTokenId { .. })));
    let mem = encode_text(&model, &t(&[4])).unwrap();
    assert!(decode_single(&model, &mem, None, &[]).is_err());
    assert!(decode_averaged(&model, &[], None, &t(&[2])).is_err());
    let bad = Example {
        source: SourceRows::single(&t(&[4])),
        units: None,
        target: t(&[5, 6]),
    };
    assert!(matches!(forward_loss(&model, &bad), Err(Error::InvalidTarget(_))));
    assert!(SeqModel::new(ModelConfig { n_heads: 3, ..tiny_config(9, 9, None) }, 0).is_err());
}

#[test]
fn checkpoint_tensors_round_trip() {
    let model = SeqModel::new(tiny_config(9, 9, Some(4)), 14).unwrap();
    let tensors: Vec<(String, Mat)> =
        model.tensor_names().iter().cloned().zip(model.tensors().iter().cloned()).collect();
    let back = SeqModel::from_tensors(model.config().clone(), tensors.clone()).unwrap();
    assert_eq!(back, model);
    let mut wrong = tensors.clone();
    wrong[0].1 = Mat::zeros(1, 1);
    assert!(SeqModel::from_tensors(model.config().clone(), wrong).is_err());
    let mut nan = tensors;
    nan[1].1.data[0] = f64::NAN;
    assert!(SeqModel::from_tensors(model.config().clone(), nan).is_err());
}

#[test]
fn same_seed_same_model() {
    let cfg = tiny_config(9, 9, Some(4));
    assert_eq!(SeqModel::new(cfg.clone(), 3).unwrap(), SeqModel::new(cfg.clone(), 3).unwrap());
    assert_ne!(SeqModel::new(cfg.clone(), 3).unwrap(), SeqModel::new(cfg, 4).unwrap());
    let mut rng = SeededRng::new(0);
    let _ = rng.next_u64();
}
