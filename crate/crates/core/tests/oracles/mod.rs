//! Independent reference checks shared by the integration tests and the
//! acceptance target. Each `check_*` returns a one-line summary on success.

#![allow(dead_code)]

use mcst_core::align::{align_candidates, lcs};
use mcst_core::decode::{emittable, next_token_logprobs, normalize, search, BeamConfig, Memories};
use mcst_core::model::{
    backward, decode_averaged, decode_single, encode_text, forward_loss, framed, Example, ModelConfig, SeqModel,
    SourceRows,
};
use mcst_core::units::{dedup, kmeans_fit, quantize, Quantizer, UnitSequence};
use mcst_core::{CandidateSet, SeededRng, TokenId};

pub type Check = Result<String, String>;

/// `lo..=hi` random words from `vocab` non-reserved ids.
fn toks(rng: &mut SeededRng, lo: usize, hi: usize, vocab: usize) -> Vec<TokenId> {
    let len = lo + rng.below(hi - lo + 1);
    (0..len).map(|_| TokenId(4 + rng.below(vocab) as u32)).collect()
}

/// A random n-best list: `1..=n_max` candidates of length `0..=len_max` over `vocab` words.
pub fn random_set(rng: &mut SeededRng, n_max: usize, len_max: usize, vocab: usize) -> CandidateSet {
    let n = 1 + rng.below(n_max);
    let base = toks(rng, 1, len_max, vocab);
    let candidates: Vec<Vec<TokenId>> = (0..n)
        .map(|_| {
            // Mostly edits of a shared base so that alignments are non-trivial.
            if rng.bernoulli(0.2) {
                return toks(rng, 0, len_max, vocab);
            }
            let mut c = Vec::new();
            for &t in &base {
                match rng.below(6) {
                    0 => {}
                    1 => c.push(TokenId(4 + rng.below(vocab) as u32)),
                    2 => {
                        c.push(t);
                        c.push(TokenId(4 + rng.below(vocab) as u32));
                    }
                    _ => c.push(t),
                }
            }
            c.truncate(len_max);
            c
        })
        .collect();
    CandidateSet {
        utterance_id: "r".into(),
        scores: (0..n).map(|i| -(i as f64)).collect(),
        transcript: base.clone(),
        reference: base,
        candidates,
        units: None,
    }
}

/// LCS length by enumerating every subsequence of `a`.
pub fn brute_lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<TokenId> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        let mut it = b.iter();
        if sub.iter().all(|x| it.any(|y| y == x)) {
            best = k;
        }
    }
    best
}

pub fn is_subsequence(sub: &[TokenId], of: &[TokenId]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// Criterion 1: unpadding recovers every candidate and rows share one width.
pub fn check_alignment(instances: usize, seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    for i in 0..instances {
        let set = random_set(&mut rng, 5, 12, 20);
        let n = set.len();
        let al = align_candidates(&set, n).map_err(|e| format!("instance {i}: {e}"))?;
        if al.n_rows() != n {
            return Err(format!("instance {i}: {} rows for {n} candidates", al.n_rows()));
        }
        let w = al.width();
        for k in 0..n {
            if al.rows[k].len() != w || al.pad_mask[k].len() != w {
                return Err(format!("instance {i}: row {k} has width {} != {w}", al.rows[k].len()));
            }
            if al.unpadded(k) != set.candidates[k] {
                return Err(format!("instance {i}: row {k} does not unpad to its candidate"));
            }
            if al.rows[k].iter().zip(&al.pad_mask[k]).any(|(&t, &p)| p && t != TokenId::UNK) {
                return Err(format!("instance {i}: padding that is not unk in row {k}"));
            }
        }
        if let Some(c) = (0..w).find(|&c| (0..n).all(|k| al.pad_mask[k][c])) {
            return Err(format!("instance {i}: column {c} is padding in every row"));
        }
        let total: usize = set.candidates.iter().map(Vec::len).sum();
        if w > total {
            return Err(format!("instance {i}: width {w} exceeds total length {total}"));
        }
        // Column-wise agreement with the anchor keeps a full LCS with every row.
        for k in 1..n {
            let agree = (0..w)
                .filter(|&c| !al.pad_mask[0][c] && !al.pad_mask[k][c] && al.rows[0][c] == al.rows[k][c])
                .count();
            let want = brute_lcs_len(&set.candidates[0], &set.candidates[k]);
            if k == 1 && agree != want {
                return Err(format!("instance {i}: anchor/row 1 share {agree} columns, LCS is {want}"));
            }
        }
    }
    Ok(format!("{instances} random sets unpad exactly to equal-width rows"))
}

/// Criterion 2: LCS length equals brute force; the trace is a common subsequence.
pub fn check_lcs(pairs: usize, seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    for i in 0..pairs {
        let vocab = 2 + rng.below(6);
        let a = toks(&mut rng, 0, 10, vocab);
        let b = toks(&mut rng, 0, 10, vocab);
        let tr = lcs(&a, &b);
        let want = brute_lcs_len(&a, &b);
        if tr.len() != want {
            return Err(format!("pair {i}: lcs {} != brute force {want}", tr.len()));
        }
        let mut prev: Option<(usize, usize)> = None;
        for &(x, y) in &tr.pairs {
            if a[x] != b[y] || prev.is_some_and(|(px, py)| x <= px || y <= py) {
                return Err(format!("pair {i}: trace is not a strictly increasing matching"));
            }
            prev = Some((x, y));
        }
    }
    Ok(format!("{pairs} pairs match brute-force subsequence enumeration"))
}

pub fn tiny_config(src: usize, tgt: usize, units: Option<usize>) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 2,
        ffn_mult: 2,
        unit_vocab: units.map(|k| k + 4),
        zero_init_unit_attention: false,
        ..ModelConfig::toy(src, tgt)
    }
}

/// Criterion 3: one candidate is bit-identical to the plain decoder, and
/// identical candidates pool to the single-stream logits.
pub fn check_reduction(instances: usize, seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let model = SeqModel::new(tiny_config(10, 9, None), rng.next_u64()).map_err(|e| e.to_string())?;
        let src = toks(&mut rng, 1, 6, 6);
        let mut prefix = vec![TokenId::BOS];
        prefix.extend(toks(&mut rng, 0, 4, 5));
        let mem = encode_text(&model, &src).map_err(|e| e.to_string())?;
        let single = decode_single(&model, &mem, None, &prefix).map_err(|e| e.to_string())?;
        let one = decode_averaged(&model, core::slice::from_ref(&mem), None, &prefix).map_err(|e| e.to_string())?;
        if one.logits.data.iter().zip(&single.data).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("instance {i}: n=1 logits are not bit-identical"));
        }
        if one.mean_ops != 1 {
            return Err(format!("instance {i}: {} averaging ops", one.mean_ops));
        }
        let copies = 2 + rng.below(4);
        let pooled = decode_averaged(&model, &vec![mem.clone(); copies], None, &prefix).map_err(|e| e.to_string())?;
        if pooled.mean_ops != 1 {
            return Err(format!("instance {i}: {} averaging ops", pooled.mean_ops));
        }
        let d = pooled.logits.max_abs_diff(&single);
        worst = worst.max(d);
        if d > 1e-12 {
            return Err(format!("instance {i}: identical candidates differ by {d:e}"));
        }
    }
    Ok(format!("{instances} instances bit-exact at n=1; identical memories within {worst:.1e}"))
}

/// A random training example for a [`tiny_config`] model.
pub fn random_example(rng: &mut SeededRng, cfg: &ModelConfig) -> Example {
    let n = 1 + rng.below(3);
    let src_words = cfg.src_vocab - 4;
    let rows: Vec<Vec<TokenId>> = (0..n).map(|_| toks(rng, 1, 5, src_words)).collect();
    let pad_mask = rows.iter().map(|r| r.iter().map(|_| rng.bernoulli(0.2)).collect()).collect();
    let units = cfg
        .unit_vocab
        .map(|u| (0..1 + rng.below(5)).map(|_| rng.below(u - 4) as u32).collect());
    let tgt = toks(rng, 1, 4, cfg.tgt_vocab - 4);
    Example {
        source: SourceRows::new(rows, pad_mask),
        units,
        target: framed(&tgt),
    }
}

/// Largest per-group relative error between analytic and central-difference gradients.
///
/// Per tensor: `max |analytic - numeric| / max(max |analytic|, max |numeric|, 1e-6)`
/// over the checked entries. The floor keeps groups whose exact gradient is zero
/// (key biases: softmax ignores a per-query shift) from dividing round-off by round-off.
pub fn gradient_error(model: &SeqModel, ex: &Example, per_tensor: usize, rng: &mut SeededRng) -> Result<(f64, String), String> {
    let h = 1e-5;
    let analytic = backward(model, ex).map_err(|e| e.to_string())?;
    let mut probe = model.clone();
    let mut worst = (0.0f64, String::new());
    for t in 0..model.tensors().len() {
        let size = model.tensors()[t].data.len();
        let mut idx: Vec<usize> = (0..size).collect();
        if size > per_tensor {
            rng.shuffle(&mut idx);
            idx.truncate(per_tensor);
        }
        let (mut diff, mut scale) = (0.0f64, 1e-6f64);
        for &j in &idx {
            let orig = probe.tensors()[t].data[j];
            probe.tensors_mut()[t].data[j] = orig + h;
            let up = forward_loss(&probe, ex).map_err(|e| e.to_string())?;
            probe.tensors_mut()[t].data[j] = orig - h;
            let down = forward_loss(&probe, ex).map_err(|e| e.to_string())?;
            probe.tensors_mut()[t].data[j] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = analytic.grads[t].as_ref().map_or(0.0, |g| g.data[j]);
            diff = diff.max((ana - num).abs());
            scale = scale.max(ana.abs()).max(num.abs());
        }
        let rel = diff / scale;
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, model.tensor_names()[t].clone());
        }
    }
    Ok(worst)
}

/// Criterion 4: gradient check over every parameter group.
pub fn check_gradients(instances: usize, per_tensor: usize, seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let mut worst = (0.0f64, String::new());
    for i in 0..instances {
        let mut cfg = tiny_config(9, 9, Some(5));
        cfg.mask_pad = i % 2 == 0;
        let model = SeqModel::new(cfg.clone(), rng.next_u64()).map_err(|e| e.to_string())?;
        let ex = random_example(&mut rng, &cfg);
        let (rel, name) = gradient_error(&model, &ex, per_tensor, &mut rng)?;
        if rel >= 1e-4 {
            return Err(format!("instance {i}: relative error {rel:e} in {name}"));
        }
        if rel > worst.0 {
            worst = (rel, name);
        }
    }
    Ok(format!(
        "{instances} instances, max relative error {:.2e} ({})",
        worst.0, worst.1
    ))
}

/// Log-probability table over every prefix shorter than `max_len`, then the
/// beam selection rule replayed on it without early stopping.
///
/// Returns the beam result and the global top-m over all complete sequences.
pub fn exhaustive_beam(model: &SeqModel, mem: &Memories, cfg: &BeamConfig) -> (Vec<(Vec<TokenId>, f64)>, Vec<(Vec<TokenId>, f64)>) {
    let vocab = model.config().tgt_vocab;
    let emit: Vec<usize> = emittable(vocab).collect();
    let eos = TokenId::EOS.index();

    // Every prefix without eos up to max_len - 1 tokens.
    let mut table: std::collections::BTreeMap<Vec<TokenId>, Vec<f64>> = Default::default();
    let mut frontier = vec![Vec::<TokenId>::new()];
    for _ in 0..cfg.max_len {
        let mut next = Vec::new();
        for p in frontier {
            let (lp, _) = next_token_logprobs(model, mem, &p).unwrap();
            for &v in &emit {
                if v != eos && p.len() + 1 < cfg.max_len {
                    let mut q = p.clone();
                    q.push(TokenId(v as u32));
                    next.push(q);
                }
            }
            table.insert(p, lp);
        }
        frontier = next;
    }
    let score = |seq: &[TokenId]| -> f64 { (0..seq.len()).map(|t| table[&seq[..t]][seq[t].index()]).sum() };

    // Complete sequences: eos-terminated, or max_len tokens long.
    let mut all = Vec::new();
    for p in table.keys() {
        let mut e = p.clone();
        e.push(TokenId::EOS);
        all.push(e);
        for &v in &emit {
            if v != eos && p.len() + 1 == cfg.max_len {
                let mut q = p.clone();
                q.push(TokenId(v as u32));
                all.push(q);
            }
        }
    }
    let mut global: Vec<(Vec<TokenId>, f64)> = all.into_iter().map(|s| {
        let sc = score(&s);
        (s, sc)
    }).collect();
    let by_norm = |a: &(Vec<TokenId>, f64), b: &(Vec<TokenId>, f64)| {
        normalize(b.1, b.0.len(), cfg.alpha).partial_cmp(&normalize(a.1, a.0.len(), cfg.alpha)).unwrap()
    };
    global.sort_by(by_norm);
    global.truncate(cfg.beam);

    // Beam replay: keep the best `beam` extensions per step; eos ones retire.
    let mut live: Vec<Vec<TokenId>> = vec![Vec::new()];
    let mut done: Vec<Vec<TokenId>> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut ext: Vec<(f64, Vec<TokenId>)> = Vec::new();
        for p in &live {
            for &v in &emit {
                let mut q = p.clone();
                q.push(TokenId(v as u32));
                ext.push((score(&q), q));
            }
        }
        ext.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        live.clear();
        for (_, q) in ext.into_iter().take(cfg.beam) {
            if q.last() == Some(&TokenId::EOS) {
                done.push(q);
            } else {
                live.push(q);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    done.extend(live);
    let mut beam: Vec<(Vec<TokenId>, f64)> = done.into_iter().map(|s| {
        let sc = score(&s);
        (s, sc)
    }).collect();
    beam.sort_by(by_norm);
    beam.truncate(cfg.beam);
    (beam, global)
}

/// Criterion 5: pooled beam search equals the exhaustive replay exactly.
pub fn check_beam(models: usize, seed: u64) -> Check {
    let agree = beam_stats(models, seed)?;
    Ok(format!(
        "{models} models match the exhaustive replay; global top-m also equal on {agree}/{models}"
    ))
}

/// Runs the replay comparison (errors on any mismatch) and counts the models
/// whose beam top-m also equals the global top-m over all sequences.
pub fn beam_stats(models: usize, seed: u64) -> Result<usize, String> {
    let mut rng = SeededRng::new(seed);
    let mut global_agree = 0;
    for i in 0..models {
        let tgt = 5 + rng.below(4);
        let cfg = tiny_config(8, tgt, None);
        let model = SeqModel::new(cfg, rng.next_u64()).map_err(|e| e.to_string())?;
        let n = 1 + rng.below(3);
        let rows: Vec<Vec<TokenId>> = (0..n).map(|_| toks(&mut rng, 1, 4, 4)).collect();
        let src = SourceRows::new(rows.clone(), rows.iter().map(|r| vec![false; r.len()]).collect());
        let mem = Memories::encode(&model, &src, None).map_err(|e| e.to_string())?;
        let bc = BeamConfig {
            beam: 1 + rng.below(3),
            max_len: 1 + rng.below(4),
            alpha: [0.0, 0.6, 1.0][rng.below(3)],
        };
        let got = search(&model, &mem, &bc).map_err(|e| e.to_string())?;
        let (want, global) = exhaustive_beam(&model, &mem, &bc);
        let got_seqs: Vec<&Vec<TokenId>> = got.iter().map(|h| &h.tokens).collect();
        let want_seqs: Vec<&Vec<TokenId>> = want.iter().map(|(s, _)| s).collect();
        if got_seqs != want_seqs {
            return Err(format!("model {i} ({bc:?}): beam {got_seqs:?} != oracle {want_seqs:?}"));
        }
        for (h, (_, s)) in got.iter().zip(&want) {
            if (h.score - s).abs() > 1e-9 {
                return Err(format!("model {i}: score {} != oracle {s}", h.score));
            }
        }
        let best_beam = normalize(want[0].1, want[0].0.len(), bc.alpha);
        let best_global = normalize(global[0].1, global[0].0.len(), bc.alpha);
        if best_beam > best_global + 1e-12 {
            return Err(format!("model {i}: beam beats the exhaustive optimum"));
        }
        if want_seqs == global.iter().map(|(s, _)| s).collect::<Vec<_>>() {
            global_agree += 1;
        }
    }
    Ok(global_agree)
}

/// Criterion 9: dedup idempotence, quantize vs linear scan, monotone inertia.
pub fn check_units(instances: usize, seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    for i in 0..instances {
        let len = rng.below(30);
        let alphabet = 1 + rng.below(6);
        let u = UnitSequence::new((0..len).map(|_| rng.below(alphabet) as u32).collect());
        let once = dedup(&u);
        if dedup(&once).ids != once.ids || once.ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(format!("instance {i}: dedup not idempotent"));
        }

        let dim = 1 + rng.below(4);
        let k = 1 + rng.below(6);
        let points = k + rng.below(40);
        // Integer grid points make exact ties likely.
        let feats: Vec<Vec<f64>> = (0..points)
            .map(|_| (0..dim).map(|_| rng.below(5) as f64).collect())
            .collect();
        let centroids: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.below(5) as f64).collect()).collect();
        let q = Quantizer { centroids, dim };
        let ids = quantize(&q, &feats).map_err(|e| e.to_string())?.ids;
        for (f, &id) in feats.iter().zip(&ids) {
            let d: Vec<f64> = q
                .centroids
                .iter()
                .map(|c| c.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let mut best = 0;
            for j in 1..k {
                if d[j] < d[best] {
                    best = j;
                }
            }
            if best as u32 != id {
                return Err(format!("instance {i}: quantize {id} != linear scan {best}"));
            }
        }

        let cont: Vec<Vec<f64>> = (0..points)
            .map(|_| (0..dim).map(|_| 3.0 * rng.normal()).collect())
            .collect();
        let fit = kmeans_fit(&cont, k, rng.next_u64(), 25).map_err(|e| format!("instance {i}: {e}"))?;
        if fit.inertia.windows(2).any(|w| w[1] > w[0] + 1e-9 * w[0].abs().max(1.0)) {
            return Err(format!("instance {i}: inertia increased {:?}", fit.inertia));
        }
    }
    Ok(format!("{instances} instances: dedup idempotent, quantize = linear scan, inertia monotone"))
}
