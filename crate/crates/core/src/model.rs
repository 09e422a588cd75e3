//! Pre-norm Transformer encoder-decoder with candidate-averaged decoding.
//!
//! Every candidate row is encoded separately and the decoder runs once per
//! candidate memory with shared parameters. After the last decoder layer the
//! per-candidate hidden states are averaged once, and the final layer norm and
//! output projection are applied to the average. An optional unit encoder adds
//! a second cross-attention (text first, then units) in every decoder layer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::rng::SeededRng;
use crate::tensor::Mat;
use crate::text::TokenId;

/// Large negative score used to mask attention logits.
const MASKED: f64 = -1e9;

/// Architecture and behaviour switches of a [`SeqModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub ffn_mult: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    /// Size of the speech-unit vocabulary (reserved tokens included); `None` disables units.
    pub unit_vocab: Option<usize>,
    /// Add fixed sinusoidal positions to embeddings.
    pub use_positions: bool,
    /// Mask padding-origin `unk` keys in encoder self-attention and in the
    /// decoder's cross-attention over each candidate memory.
    pub mask_pad: bool,
    /// Start the unit cross-attention output projection at zero.
    pub zero_init_unit_attention: bool,
}

impl ModelConfig {
    pub fn toy(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            ffn_mult: 4,
            src_vocab,
            tgt_vocab,
            unit_vocab: None,
            use_positions: true,
            mask_pad: false,
            zero_init_unit_attention: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.ffn_mult == 0 || self.n_dec_layers == 0 {
            return Err(Error::InvalidConfig("ffn_mult and n_dec_layers must be positive".into()));
        }
        if self.src_vocab <= 4 || self.tgt_vocab <= 4 || self.unit_vocab.is_some_and(|u| u <= 4) {
            return Err(Error::InvalidConfig("vocabularies need at least one non-reserved entry".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct NormP {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone)]
struct HeadP {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
}

#[derive(Debug, Clone)]
struct AttnP {
    heads: Vec<HeadP>,
    bo: usize,
}

#[derive(Debug, Clone)]
struct FfnP {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct EncLayerP {
    ln_attn: NormP,
    attn: AttnP,
    ln_ffn: NormP,
    ffn: FfnP,
}

#[derive(Debug, Clone)]
struct EncoderP {
    embed: usize,
    layers: Vec<EncLayerP>,
    final_ln: NormP,
}

#[derive(Debug, Clone)]
struct DecLayerP {
    ln_self: NormP,
    self_attn: AttnP,
    ln_text: NormP,
    text_attn: AttnP,
    unit: Option<(NormP, AttnP)>,
    ln_ffn: NormP,
    ffn: FfnP,
}

#[derive(Debug, Clone)]
struct Layout {
    text: EncoderP,
    units: Option<EncoderP>,
    tgt_embed: usize,
    dec: Vec<DecLayerP>,
    final_ln: NormP,
    out_w: usize,
    out_b: usize,
}

/// How a fresh tensor is filled.
#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
    Xavier,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols));
        self.inits.push(init);
        self.names.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormP {
        NormP {
            gamma: self.add(format!("{prefix}.gamma"), 1, d, Init::Ones),
            beta: self.add(format!("{prefix}.beta"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, cfg: &ModelConfig, zero_out: bool) -> AttnP {
        let (d, dh) = (cfg.d_model, cfg.head_dim());
        let out_init = if zero_out { Init::Zeros } else { Init::Xavier };
        let heads = (0..cfg.n_heads)
            .map(|h| HeadP {
                wq: self.add(format!("{prefix}.head{h}.wq"), d, dh, Init::Xavier),
                bq: self.add(format!("{prefix}.head{h}.bq"), 1, dh, Init::Zeros),
                wk: self.add(format!("{prefix}.head{h}.wk"), d, dh, Init::Xavier),
                bk: self.add(format!("{prefix}.head{h}.bk"), 1, dh, Init::Zeros),
                wv: self.add(format!("{prefix}.head{h}.wv"), d, dh, Init::Xavier),
                bv: self.add(format!("{prefix}.head{h}.bv"), 1, dh, Init::Zeros),
                wo: self.add(format!("{prefix}.head{h}.wo"), dh, d, out_init),
            })
            .collect();
        AttnP {
            heads,
            bo: self.add(format!("{prefix}.bo"), 1, d, Init::Zeros),
        }
    }

    fn ffn(&mut self, prefix: &str, cfg: &ModelConfig) -> FfnP {
        let (d, h) = (cfg.d_model, cfg.d_model * cfg.ffn_mult);
        FfnP {
            w1: self.add(format!("{prefix}.w1"), d, h, Init::Xavier),
            b1: self.add(format!("{prefix}.b1"), 1, h, Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), h, d, Init::Xavier),
            b2: self.add(format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }

    fn encoder(&mut self, prefix: &str, vocab: usize, cfg: &ModelConfig) -> EncoderP {
        let d = cfg.d_model;
        let embed = self.add(format!("{prefix}.embed"), vocab, d, Init::Normal(1.0));
        let layers = (0..cfg.n_enc_layers)
            .map(|l| EncLayerP {
                ln_attn: self.norm(&format!("{prefix}.layer{l}.ln_attn"), d),
                attn: self.attn(&format!("{prefix}.layer{l}.attn"), cfg, false),
                ln_ffn: self.norm(&format!("{prefix}.layer{l}.ln_ffn"), d),
                ffn: self.ffn(&format!("{prefix}.layer{l}.ffn"), cfg),
            })
            .collect();
        EncoderP {
            embed,
            layers,
            final_ln: self.norm(&format!("{prefix}.final_ln"), d),
        }
    }
}

/// Build the parameter layout. Registration order is the serialization order.
fn build_layout(cfg: &ModelConfig) -> (Layout, Builder) {
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
        inits: Vec::new(),
    };
    let d = cfg.d_model;
    let text = b.encoder("text_encoder", cfg.src_vocab, cfg);
    let units = cfg.unit_vocab.map(|uv| b.encoder("unit_encoder", uv, cfg));
    let tgt_embed = b.add("decoder.embed".into(), cfg.tgt_vocab, d, Init::Normal(1.0));
    let dec = (0..cfg.n_dec_layers)
        .map(|l| {
            let p = format!("decoder.layer{l}");
            DecLayerP {
                ln_self: b.norm(&format!("{p}.ln_self"), d),
                self_attn: b.attn(&format!("{p}.self_attn"), cfg, false),
                ln_text: b.norm(&format!("{p}.ln_text"), d),
                text_attn: b.attn(&format!("{p}.text_attn"), cfg, false),
                unit: cfg.unit_vocab.map(|_| {
                    (
                        b.norm(&format!("{p}.ln_unit"), d),
                        b.attn(&format!("{p}.unit_attn"), cfg, cfg.zero_init_unit_attention),
                    )
                }),
                ln_ffn: b.norm(&format!("{p}.ln_ffn"), d),
                ffn: b.ffn(&format!("{p}.ffn"), cfg),
            }
        })
        .collect();
    let final_ln = b.norm("decoder.final_ln", d);
    let out_w = b.add("output.w".into(), d, cfg.tgt_vocab, Init::Xavier);
    let out_b = b.add("output.b".into(), 1, cfg.tgt_vocab, Init::Zeros);
    (
        Layout {
            text,
            units,
            tgt_embed,
            dec,
            final_ln,
            out_w,
            out_b,
        },
        b,
    )
}

/// Parameters of the encoder-decoder, stored as named tensors in a fixed order.
#[derive(Debug, Clone)]
pub struct SeqModel {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Mat>,
}

impl PartialEq for SeqModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl SeqModel {
    /// Randomly initialized model.
    ///
    /// Each tensor draws from its own stream keyed by `seed` and the tensor name,
    /// so a tensor's initial value does not depend on which other tensors exist.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        let params = b
            .shapes
            .iter()
            .zip(&b.inits)
            .zip(&b.names)
            .map(|((&(r, c), &init), name)| (r, c, init, SeededRng::new(seed ^ fnv1a(name))))
            .map(|(r, c, init, mut rng)| match init {
                Init::Zeros => Mat::zeros(r, c),
                Init::Ones => Mat::from_fn(r, c, |_, _| 1.0),
                Init::Normal(s) => Mat::from_fn(r, c, |_, _| s * rng.normal()),
                Init::Xavier => {
                    let a = libm::sqrt(6.0 / (r + c) as f64);
                    Mat::from_fn(r, c, |_, _| a * (2.0 * rng.uniform() - 1.0))
                }
            })
            .collect();
        Ok(SeqModel {
            config,
            layout,
            names: b.names,
            params,
        })
    }

    /// Model whose parameters are all zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        let params = b.shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
        Ok(SeqModel {
            config,
            layout,
            names: b.names,
            params,
        })
    }

    /// Rebuild from tensors in serialization order; names and shapes must match.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Mat)>) -> Result<Self> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        if tensors.len() != b.names.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                b.names.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(tensors.len());
        for ((name, m), (want, &shape)) in tensors.into_iter().zip(b.names.iter().zip(&b.shapes)) {
            if &name != want || m.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "tensor `{name}` {:?} where `{want}` {:?} was expected",
                    m.shape(),
                    shape
                )));
            }
            if !m.is_finite() {
                return Err(Error::ShapeMismatch(format!("tensor `{name}` is not finite")));
            }
            params.push(m);
        }
        Ok(SeqModel {
            config,
            layout,
            names: b.names,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Toggle runtime-only switches without touching parameters.
    pub fn set_mask_pad(&mut self, on: bool) {
        self.config.mask_pad = on;
    }

    pub fn tensor_names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Mat] {
        &self.params
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&Mat> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn has_units(&self) -> bool {
        self.layout.units.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Mat::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Mat::is_finite)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Fixed sinusoidal position table.
pub fn sinusoidal_positions(len: usize, d: usize) -> Mat {
    Mat::from_fn(len, d, |pos, i| {
        let pair = (i / 2) as f64;
        let rate = libm::pow(10000.0, -2.0 * pair / d as f64);
        let angle = pos as f64 * rate;
        if i % 2 == 0 {
            libm::sin(angle)
        } else {
            libm::cos(angle)
        }
    })
}

/// Source rows handed to the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRows {
    pub rows: Vec<Vec<TokenId>>,
    pub pad_mask: Vec<Vec<bool>>,
}

impl SourceRows {
    /// Empty rows are replaced by a single padding `unk` so every row can be encoded.
    pub fn new(rows: Vec<Vec<TokenId>>, pad_mask: Vec<Vec<bool>>) -> Self {
        let mut rows = rows;
        let mut pad_mask = pad_mask;
        for (r, m) in rows.iter_mut().zip(pad_mask.iter_mut()) {
            if r.is_empty() {
                r.push(TokenId::UNK);
                m.push(true);
            }
        }
        SourceRows { rows, pad_mask }
    }

    pub fn from_aligned(a: &crate::align::AlignedCandidateSet) -> Self {
        SourceRows::new(a.rows.clone(), a.pad_mask.clone())
    }

    pub fn single(row: &[TokenId]) -> Self {
        SourceRows::new(vec![row.to_vec()], vec![vec![false; row.len()]])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Result of a candidate-averaged decoder pass.
#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// Pre-norm decoder states, one `T x d_model` matrix per candidate.
    pub per_candidate: Vec<Mat>,
    /// Candidate mean of `per_candidate`.
    pub averaged: Mat,
    /// Final layer norm output of `averaged`.
    pub normed: Mat,
    /// `T x tgt_vocab` logits from the final norm and output projection of `averaged`.
    pub logits: Mat,
    /// Number of candidate-mean operations performed in the pass.
    pub mean_ops: usize,
}

/// Graph nodes of one candidate-averaged decoder pass.
pub struct DecodeNodes {
    pub states: Vec<NodeId>,
    pub averaged: NodeId,
    pub normed: NodeId,
    pub logits: NodeId,
}

/// Graph-building forward pass shared by training and inference.
pub struct Forward<'m> {
    model: &'m SeqModel,
    pub graph: Graph<'m>,
    /// Padding flags of text memories, consulted when `mask_pad` is on.
    memory_pads: Vec<(NodeId, Vec<bool>)>,
}

impl<'m> Forward<'m> {
    pub fn new(model: &'m SeqModel) -> Self {
        Forward {
            model,
            graph: Graph::new(&model.params),
            memory_pads: Vec::new(),
        }
    }

    fn cfg(&self) -> &ModelConfig {
        &self.model.config
    }

    fn layer_norm(&mut self, x: NodeId, p: &NormP) -> NodeId {
        let g = self.graph.param(p.gamma);
        let b = self.graph.param(p.beta);
        self.graph.layer_norm(x, g, b)
    }

    fn linear(&mut self, x: NodeId, w: usize, b: usize) -> NodeId {
        let w = self.graph.param(w);
        let b = self.graph.param(b);
        let y = self.graph.matmul(x, w);
        self.graph.add_row(y, b)
    }

    /// Multi-head attention of `query` over `memory`; `mask` is added to the scores.
    fn attention(&mut self, query: NodeId, memory: NodeId, p: &AttnP, mask: Option<&Mat>) -> NodeId {
        let scale = 1.0 / libm::sqrt(self.cfg().head_dim() as f64);
        let mut out: Option<NodeId> = None;
        for h in &p.heads {
            let q = self.linear(query, h.wq, h.bq);
            let k = self.linear(memory, h.wk, h.bk);
            let v = self.linear(memory, h.wv, h.bv);
            let s = self.graph.matmul_bt(q, k);
            let s = self.graph.scale(s, scale);
            let s = match mask {
                Some(m) => self.graph.add_const(s, m),
                None => s,
            };
            let a = self.graph.softmax(s);
            let o = self.graph.matmul(a, v);
            let wo = self.graph.param(h.wo);
            let o = self.graph.matmul(o, wo);
            out = Some(match out {
                Some(acc) => self.graph.add(acc, o),
                None => o,
            });
        }
        let bo = self.graph.param(p.bo);
        self.graph.add_row(out.expect("at least one head"), bo)
    }

    fn ffn(&mut self, x: NodeId, p: &FfnP) -> NodeId {
        let h = self.linear(x, p.w1, p.b1);
        let h = self.graph.gelu(h);
        self.linear(h, p.w2, p.b2)
    }

    fn embed(&mut self, table: usize, ids: &[usize]) -> NodeId {
        let e = self.graph.gather(table, ids);
        if self.cfg().use_positions {
            let pos = sinusoidal_positions(ids.len(), self.cfg().d_model);
            self.graph.add_const(e, &pos)
        } else {
            e
        }
    }

    fn encoder(&mut self, p: &EncoderP, ids: &[usize], key_mask: Option<&Mat>) -> NodeId {
        let mut x = self.embed(p.embed, ids);
        for layer in &p.layers {
            let h = self.layer_norm(x, &layer.ln_attn);
            let a = self.attention(h, h, &layer.attn, key_mask);
            x = self.graph.add(x, a);
            let h = self.layer_norm(x, &layer.ln_ffn);
            let f = self.ffn(h, &layer.ffn);
            x = self.graph.add(x, f);
        }
        self.layer_norm(x, &p.final_ln)
    }

    /// Encode one source row into a `len x d_model` memory.
    pub fn encode_text(&mut self, row: &[TokenId], pad: Option<&[bool]>) -> Result<NodeId> {
        if row.is_empty() {
            return Err(Error::EmptySequence);
        }
        let v = self.cfg().src_vocab;
        let ids = checked_ids(row, v)?;
        if pad.is_some_and(|p| p.len() != row.len()) {
            return Err(Error::InvalidConfig("pad mask length differs from its row".into()));
        }
        let mask = match pad {
            Some(pad) if self.cfg().mask_pad => key_padding_mask(pad, row.len()),
            _ => None,
        };
        let enc = self.model.layout.text.clone();
        let node = self.encoder(&enc, &ids, mask.as_ref());
        if let Some(pad) = pad {
            self.set_memory_pad(node, pad);
        }
        Ok(node)
    }

    /// Record which columns of a text memory are padding.
    pub fn set_memory_pad(&mut self, memory: NodeId, pad: &[bool]) {
        self.memory_pads.retain(|(n, _)| *n != memory);
        self.memory_pads.push((memory, pad.to_vec()));
    }

    fn cross_mask(&self, memory: NodeId, queries: usize) -> Option<Mat> {
        if !self.cfg().mask_pad {
            return None;
        }
        let (_, pad) = self.memory_pads.iter().find(|(n, _)| *n == memory)?;
        key_padding_mask(pad, queries)
    }

    /// Encode a unit sequence (ids in `[0, K)`).
    pub fn encode_units(&mut self, units: &[u32]) -> Result<NodeId> {
        let enc = self.model.layout.units.clone().ok_or(Error::MissingUnitEncoder)?;
        if units.is_empty() {
            return Err(Error::EmptySequence);
        }
        let k = self.cfg().unit_vocab.unwrap_or(0) - crate::text::RESERVED.len();
        let mut ids = Vec::with_capacity(units.len());
        for &u in units {
            if u as usize >= k {
                return Err(Error::InvalidUnitId { id: u, k });
            }
            ids.push(u as usize + crate::text::RESERVED.len());
        }
        Ok(self.encoder(&enc, &ids, None))
    }

    /// Decoder layers over `prefix` for each text memory, up to (excluding) the final norm.
    ///
    /// Computation before the first cross-attention is shared by all streams.
    pub fn decoder_states(
        &mut self,
        memories: &[NodeId],
        unit_memory: Option<NodeId>,
        prefix: &[TokenId],
    ) -> Result<Vec<NodeId>> {
        if memories.is_empty() {
            return Err(Error::InvalidConfig("no candidate memories".into()));
        }
        if prefix.is_empty() {
            return Err(Error::InvalidTarget("empty decoder prefix".into()));
        }
        if unit_memory.is_some() && !self.model.has_units() {
            return Err(Error::MissingUnitEncoder);
        }
        let ids = checked_ids(prefix, self.cfg().tgt_vocab)?;
        let causal = causal_mask(prefix.len());
        let layers = self.model.layout.dec.clone();

        let y0 = self.embed(self.model.layout.tgt_embed, &ids);
        let first = &layers[0];
        let h = self.layer_norm(y0, &first.ln_self);
        let a = self.attention(h, h, &first.self_attn, Some(&causal));
        let shared = self.graph.add(y0, a);

        let mut states = Vec::with_capacity(memories.len());
        for &mem in memories {
            let cross = self.cross_mask(mem, prefix.len());
            let mut y = shared;
            for (l, layer) in layers.iter().enumerate() {
                if l > 0 {
                    let h = self.layer_norm(y, &layer.ln_self);
                    let a = self.attention(h, h, &layer.self_attn, Some(&causal));
                    y = self.graph.add(y, a);
                }
                let h = self.layer_norm(y, &layer.ln_text);
                let c = self.attention(h, mem, &layer.text_attn, cross.as_ref());
                y = self.graph.add(y, c);
                if let (Some((ln, attn)), Some(umem)) = (&layer.unit, unit_memory) {
                    let h = self.layer_norm(y, ln);
                    let c = self.attention(h, umem, attn, None);
                    y = self.graph.add(y, c);
                }
                let h = self.layer_norm(y, &layer.ln_ffn);
                let f = self.ffn(h, &layer.ffn);
                y = self.graph.add(y, f);
            }
            states.push(y);
        }
        Ok(states)
    }

    /// Final layer norm, then output projection. Returns `(normed, logits)`.
    pub fn project(&mut self, state: NodeId) -> (NodeId, NodeId) {
        let ln = self.model.layout.final_ln.clone();
        let h = self.layer_norm(state, &ln);
        let (w, b) = (self.model.layout.out_w, self.model.layout.out_b);
        (h, self.linear(h, w, b))
    }

    /// Candidate-averaged decoding: average pre-norm states once, then project.
    pub fn decode_averaged(
        &mut self,
        memories: &[NodeId],
        unit_memory: Option<NodeId>,
        prefix: &[TokenId],
    ) -> Result<DecodeNodes> {
        let states = self.decoder_states(memories, unit_memory, prefix)?;
        let averaged = self.graph.mean(&states);
        let (normed, logits) = self.project(averaged);
        Ok(DecodeNodes {
            states,
            averaged,
            normed,
            logits,
        })
    }

    /// Encode all rows and the optional unit sequence.
    pub fn encode_all(
        &mut self,
        src: &SourceRows,
        units: Option<&[u32]>,
    ) -> Result<(Vec<NodeId>, Option<NodeId>)> {
        if src.is_empty() {
            return Err(Error::InvalidConfig("no candidate rows".into()));
        }
        let mut mems = Vec::with_capacity(src.len());
        for (row, pad) in src.rows.iter().zip(&src.pad_mask) {
            mems.push(self.encode_text(row, Some(pad))?);
        }
        let umem = match units {
            Some(u) if self.model.has_units() => Some(self.encode_units(u)?),
            _ => None,
        };
        Ok((mems, umem))
    }
}

fn checked_ids(tokens: &[TokenId], vocab: usize) -> Result<Vec<usize>> {
    tokens
        .iter()
        .map(|t| {
            if t.index() < vocab {
                Ok(t.index())
            } else {
                Err(Error::InvalidTokenId {
                    id: t.0,
                    size: vocab,
                })
            }
        })
        .collect()
}

fn causal_mask(len: usize) -> Mat {
    Mat::from_fn(len, len, |q, k| if k > q { MASKED } else { 0.0 })
}

/// `queries x keys` mask over padding keys; none unless some but not all keys are padding.
fn key_padding_mask(pad: &[bool], queries: usize) -> Option<Mat> {
    if pad.iter().all(|&p| p) || !pad.iter().any(|&p| p) {
        return None;
    }
    Some(Mat::from_fn(queries, pad.len(), |_, k| if pad[k] { MASKED } else { 0.0 }))
}

/// Encode one row outside of any training graph.
pub fn encode_text(model: &SeqModel, row: &[TokenId]) -> Result<Mat> {
    let mut f = Forward::new(model);
    let n = f.encode_text(row, None)?;
    Ok(f.graph.value(n).clone())
}

/// Encode a unit sequence outside of any training graph.
pub fn encode_units(model: &SeqModel, units: &[u32]) -> Result<Mat> {
    let mut f = Forward::new(model);
    let n = f.encode_units(units)?;
    Ok(f.graph.value(n).clone())
}

/// Decode `prefix` against precomputed memories with candidate averaging.
pub fn decode_averaged(
    model: &SeqModel,
    memories: &[Mat],
    unit_memory: Option<&Mat>,
    prefix: &[TokenId],
) -> Result<DecoderOutput> {
    decode_averaged_padded(model, memories, &[], unit_memory, prefix)
}

/// [`decode_averaged`] with per-memory padding flags (`pads[i]` for memory `i`;
/// missing entries mean no padding). Only used when `mask_pad` is on.
pub fn decode_averaged_padded(
    model: &SeqModel,
    memories: &[Mat],
    pads: &[Vec<bool>],
    unit_memory: Option<&Mat>,
    prefix: &[TokenId],
) -> Result<DecoderOutput> {
    let mut f = Forward::new(model);
    let mems: Vec<NodeId> = memories.iter().map(|m| f.graph.input(m.clone())).collect();
    for (&m, pad) in mems.iter().zip(pads) {
        if pad.len() != f.graph.value(m).rows {
            return Err(Error::InvalidConfig("pad mask length differs from its memory".into()));
        }
        f.set_memory_pad(m, pad);
    }
    let umem = unit_memory.map(|m| f.graph.input(m.clone()));
    let d = f.decode_averaged(&mems, umem, prefix)?;
    Ok(DecoderOutput {
        per_candidate: d.states.iter().map(|&s| f.graph.value(s).clone()).collect(),
        averaged: f.graph.value(d.averaged).clone(),
        normed: f.graph.value(d.normed).clone(),
        logits: f.graph.value(d.logits).clone(),
        mean_ops: f.graph.mean_count(),
    })
}

/// Standard single-source decoder: no averaging node at all.
pub fn decode_single(
    model: &SeqModel,
    memory: &Mat,
    unit_memory: Option<&Mat>,
    prefix: &[TokenId],
) -> Result<Mat> {
    let mut f = Forward::new(model);
    let mem = f.graph.input(memory.clone());
    let umem = unit_memory.map(|m| f.graph.input(m.clone()));
    let states = f.decoder_states(&[mem], umem, prefix)?;
    let (_, logits) = f.project(states[0]);
    Ok(f.graph.value(logits).clone())
}

/// Check a `bos ... eos` framed target and split it into decoder input and labels.
pub fn frame_target(target: &[TokenId], tgt_vocab: usize) -> Result<(Vec<TokenId>, Vec<usize>)> {
    if target.len() < 2 || target[0] != TokenId::BOS || *target.last().unwrap() != TokenId::EOS {
        return Err(Error::InvalidTarget("target must be framed by bos ... eos".into()));
    }
    checked_ids(target, tgt_vocab)?;
    if target[1..target.len() - 1].iter().any(|t| t.is_reserved() && *t != TokenId::UNK) {
        return Err(Error::InvalidTarget("reserved token inside target".into()));
    }
    let input = target[..target.len() - 1].to_vec();
    let labels = target[1..].iter().map(|t| t.index()).collect();
    Ok((input, labels))
}

/// Wrap a bare token sequence as `bos ... eos`.
pub fn framed(tokens: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(tokens.len() + 2);
    v.push(TokenId::BOS);
    v.extend_from_slice(tokens);
    v.push(TokenId::EOS);
    v
}

/// One supervised example: candidate rows, optional units, framed target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub source: SourceRows,
    pub units: Option<Vec<u32>>,
    pub target: Vec<TokenId>,
}

/// Loss value, parameter gradients and the graph-level instrumentation of one example.
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: Vec<Option<Mat>>,
    pub mean_ops: usize,
    /// Gradient reaching each candidate stream's pre-norm state.
    pub stream_grads: Vec<Mat>,
}

/// Mean token negative log-likelihood under teacher forcing.
pub fn forward_loss(model: &SeqModel, ex: &Example) -> Result<f64> {
    let mut f = Forward::new(model);
    let loss = build_loss(&mut f, ex)?.0;
    Ok(f.graph.value(loss).data[0])
}

fn build_loss(f: &mut Forward<'_>, ex: &Example) -> Result<(NodeId, Vec<NodeId>)> {
    let (input, labels) = frame_target(&ex.target, f.cfg().tgt_vocab)?;
    let (mems, umem) = f.encode_all(&ex.source, ex.units.as_deref())?;
    let d = f.decode_averaged(&mems, umem, &input)?;
    let loss = f.graph.cross_entropy(d.logits, &labels);
    Ok((loss, d.states))
}

/// Loss and analytic gradients for every parameter tensor.
pub fn backward(model: &SeqModel, ex: &Example) -> Result<LossAndGrads> {
    let mut f = Forward::new(model);
    let (loss, states) = build_loss(&mut f, ex)?;
    let grads: Gradients = f.graph.backward(loss);
    let stream_grads = states
        .iter()
        .map(|&s| grads.node(s).cloned().unwrap_or_else(|| Mat::zeros(0, 0)))
        .collect();
    Ok(LossAndGrads {
        loss: f.graph.value(loss).data[0],
        mean_ops: f.graph.mean_count(),
        grads: grads.params,
        stream_grads,
    })
}
