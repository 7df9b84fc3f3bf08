//! Tokenization, embedding, and the transformer encoder over descriptions.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Activation, Graph, NodeId, NumericsError, ParamStore, Scalar, Tensor};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

pub const SEGMENT_DESCRIPTION: usize = 0;
pub const SEGMENT_FIELD: usize = 1;

/// Lowercases and splits on whitespace and punctuation; every punctuation
/// character becomes its own token. With `wrap`, the result is truncated to
/// `max_len - 2` and framed by [CLS]/[SEP]; otherwise truncated to `max_len`.
pub fn tokenize(text: &str, max_len: usize, wrap: bool) -> Vec<String> {
    let mut toks: Vec<String> = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                toks.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                toks.push(ch.to_lowercase().collect());
            }
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }
    if wrap {
        toks.truncate(max_len.saturating_sub(2));
        let mut out = Vec::with_capacity(toks.len() + 2);
        out.push(RESERVED[CLS].to_string());
        out.append(&mut toks);
        out.push(RESERVED[SEP].to_string());
        out
    } else {
        toks.truncate(max_len);
        toks
    }
}

/// Corpus-built vocabulary: reserved ids 0..4, then tokens ranked by
/// frequency (ties broken alphabetically), capped at `cap` total entries.
#[derive(Debug, Clone)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    pub fn build<'a>(texts: impl Iterator<Item = &'a str>, cap: usize) -> Vocab {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text, usize::MAX, false) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for (tok, _) in ranked {
            if tokens.len() >= cap {
                break;
            }
            tokens.push(tok);
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { ids, tokens }
    }

    pub fn id(&self, token: &str) -> usize {
        *self.ids.get(token).unwrap_or(&UNK)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// One token per line; line number = id after the four reserved ids.
    pub fn save(&self, path: &Path) -> Result<(), std::io::Error> {
        let mut out = fs::File::create(path)?;
        for tok in self.tokens.iter().skip(RESERVED.len()) {
            writeln!(out, "{tok}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, std::io::Error> {
        let file = fs::File::open(path)?;
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for line in BufReader::new(file).lines() {
            tokens.push(line?);
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocab { ids, tokens })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_blocks: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub max_desc_len: usize,
    pub max_field_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub ff_activation: FfActivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfActivation {
    Relu,
    Gelu,
}

impl From<FfActivation> for Activation {
    fn from(a: FfActivation) -> Activation {
        match a {
            FfActivation::Relu => Activation::Relu,
            FfActivation::Gelu => Activation::Gelu,
        }
    }
}

impl Default for EncoderConfig {
    /// Desk-scale defaults; the published 12/768/12 geometry stays
    /// expressible through the same fields.
    fn default() -> Self {
        EncoderConfig {
            num_blocks: 2,
            hidden_size: 128,
            num_heads: 4,
            max_desc_len: 64,
            max_field_len: 10,
            vocab_size: 2000,
            dropout: 0.1,
            ff_activation: FfActivation::Gelu,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if self.hidden_size % self.num_heads != 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "encoder_config",
                shapes: format!("hidden {} not divisible by heads {}", self.hidden_size, self.num_heads),
            });
        }
        Ok(())
    }

    pub fn max_position(&self) -> usize {
        self.max_desc_len.max(self.max_field_len)
    }
}

/// Token/segment/position id triples for one input segment. Positions for
/// descriptions and header fields each start at zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
}

impl EncodedInput {
    pub fn new(token_ids: Vec<usize>, segment: usize) -> Self {
        let n = token_ids.len();
        EncodedInput {
            token_ids,
            segment_ids: vec![segment; n],
            position_ids: (0..n).collect(),
        }
    }

    pub fn description(vocab: &Vocab, text: &str, cfg: &EncoderConfig) -> Self {
        let toks = tokenize(text, cfg.max_desc_len, true);
        EncodedInput::new(vocab.encode(&toks), SEGMENT_DESCRIPTION)
    }

    /// Header-field input, padded to exactly `max_field_len` tokens.
    pub fn field(vocab: &Vocab, text: &str, cfg: &EncoderConfig) -> Self {
        let toks = tokenize(text, cfg.max_field_len, false);
        let mut ids = vocab.encode(&toks);
        ids.resize(cfg.max_field_len, PAD);
        EncodedInput::new(ids, SEGMENT_FIELD)
    }

    /// Description input, padded to exactly `max_desc_len` tokens.
    pub fn description_padded(vocab: &Vocab, text: &str, cfg: &EncoderConfig) -> Self {
        let toks = tokenize(text, cfg.max_desc_len, true);
        let mut ids = vocab.encode(&toks);
        ids.resize(cfg.max_desc_len, PAD);
        EncodedInput::new(ids, SEGMENT_DESCRIPTION)
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Registers embedding tables and `num_blocks` transformer blocks.
pub fn init_encoder_params<S: Scalar>(
    store: &mut ParamStore<S>,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) {
    let h = cfg.hidden_size;
    store.insert_embedding("embed.token", cfg.vocab_size, h, rng);
    store.insert_embedding("embed.segment", 2, h, rng);
    store.insert_embedding("embed.position", cfg.max_position(), h, rng);
    for b in 0..cfg.num_blocks {
        for name in ["wq", "wk", "wv", "wo"] {
            store.insert_weight(&format!("enc.{b}.attn.{name}"), h, h, rng);
            store.insert_zeros(&format!("enc.{b}.attn.{name}_b"), 1, h);
        }
        store.insert_const(&format!("enc.{b}.ln1.gamma"), 1, h, S::one());
        store.insert_zeros(&format!("enc.{b}.ln1.beta"), 1, h);
        store.insert_weight(&format!("enc.{b}.ff.w1"), h, 4 * h, rng);
        store.insert_zeros(&format!("enc.{b}.ff.b1"), 1, 4 * h);
        store.insert_weight(&format!("enc.{b}.ff.w2"), 4 * h, h, rng);
        store.insert_zeros(&format!("enc.{b}.ff.b2"), 1, h);
        store.insert_const(&format!("enc.{b}.ln2.gamma"), 1, h, S::one());
        store.insert_zeros(&format!("enc.{b}.ln2.beta"), 1, h);
    }
}

/// Per-position sum of token, segment, and position embedding rows.
pub fn embed<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamStore<S>,
    input: &EncodedInput,
) -> Result<NodeId, NumericsError> {
    let tok_table = g.param(params, "embed.token")?;
    let seg_table = g.param(params, "embed.segment")?;
    let pos_table = g.param(params, "embed.position")?;
    let tok = g.gather_rows(tok_table, &input.token_ids)?;
    let seg = g.gather_rows(seg_table, &input.segment_ids)?;
    let pos = g.gather_rows(pos_table, &input.position_ids)?;
    let ts = g.add(tok, seg)?;
    g.add(ts, pos)
}

fn multi_head_attention<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamStore<S>,
    block: usize,
    x: NodeId,
    cfg: &EncoderConfig,
) -> Result<NodeId, NumericsError> {
    let h = cfg.hidden_size;
    let heads = cfg.num_heads;
    let dk = h / heads;
    let scale = S::from_f64(1.0 / (dk as f64).sqrt());
    let (len, _) = g.value(x).shape();

    let proj = |g: &mut Graph<S>, name: &str| -> Result<NodeId, NumericsError> {
        let w = g.param(params, &format!("enc.{block}.attn.{name}"))?;
        let b = g.param(params, &format!("enc.{block}.attn.{name}_b"))?;
        let xw = g.matmul(x, w)?;
        g.add_bias(xw, b)
    };
    let q = proj(g, "wq")?;
    let k = proj(g, "wk")?;
    let v = proj(g, "wv")?;

    let mut head_outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let (c0, c1) = (i * dk, (i + 1) * dk);
        let qi = g.slice(q, 0, len, c0, c1)?;
        let ki = g.slice(k, 0, len, c0, c1)?;
        let vi = g.slice(v, 0, len, c0, c1)?;
        let kt = g.transpose(ki);
        let scores = g.matmul(qi, kt)?;
        let scaled = g.affine(scores, scale, S::zero());
        let attn = g.softmax_row(scaled);
        head_outs.push(g.matmul(attn, vi)?);
    }
    let mut cat = head_outs[0];
    for out in &head_outs[1..] {
        cat = g.concat_cols(cat, *out)?;
    }
    let wo = g.param(params, &format!("enc.{block}.attn.wo"))?;
    let bo = g.param(params, &format!("enc.{block}.attn.wo_b"))?;
    let projed = g.matmul(cat, wo)?;
    g.add_bias(projed, bo)
}

/// Inverted-dropout mask for training mode; `None` leaves the node as is.
fn maybe_dropout<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId, NumericsError> {
    let rng = match rng {
        Some(r) if p > 0.0 => r,
        _ => return Ok(x),
    };
    let (rows, cols) = g.value(x).shape();
    let keep = 1.0 / (1.0 - p);
    let data: Vec<S> = (0..rows * cols)
        .map(|_| {
            if rand::Rng::gen_range(&mut *rng, 0.0..1.0) < p {
                S::zero()
            } else {
                S::from_f64(keep)
            }
        })
        .collect();
    g.dropout_mask(x, Tensor::from_vec(rows, cols, data))
}

/// Transformer stack: per block, multi-head self-attention with residual and
/// layer norm, then a two-layer feed-forward (inner width 4x) with residual
/// and layer norm. `dropout_rng` enables training-mode dropout.
pub fn encode<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamStore<S>,
    cfg: &EncoderConfig,
    embedded: NodeId,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId, NumericsError> {
    let eps = S::from_f64(1e-5);
    let mut x = embedded;
    for b in 0..cfg.num_blocks {
        let attn = multi_head_attention(g, params, b, x, cfg)?;
        let attn = maybe_dropout(g, attn, cfg.dropout, dropout_rng.as_deref_mut())?;
        let res = g.add(x, attn)?;
        let g1 = g.param(params, &format!("enc.{b}.ln1.gamma"))?;
        let b1 = g.param(params, &format!("enc.{b}.ln1.beta"))?;
        x = g.layer_norm(res, g1, b1, eps)?;

        let w1 = g.param(params, &format!("enc.{b}.ff.w1"))?;
        let bias1 = g.param(params, &format!("enc.{b}.ff.b1"))?;
        let w2 = g.param(params, &format!("enc.{b}.ff.w2"))?;
        let bias2 = g.param(params, &format!("enc.{b}.ff.b2"))?;
        let h1 = g.matmul(x, w1)?;
        let h1 = g.add_bias(h1, bias1)?;
        let h1 = g.activation(h1, cfg.ff_activation.into());
        let h2 = g.matmul(h1, w2)?;
        let h2 = g.add_bias(h2, bias2)?;
        let h2 = maybe_dropout(g, h2, cfg.dropout, dropout_rng.as_deref_mut())?;
        let res2 = g.add(x, h2)?;
        let g2 = g.param(params, &format!("enc.{b}.ln2.gamma"))?;
        let b2 = g.param(params, &format!("enc.{b}.ln2.beta"))?;
        x = g.layer_norm(res2, g2, b2, eps)?;
    }
    Ok(x)
}

/// The aggregated sequence representation: row 0 of the encoder output.
pub fn cls_vector<S: Scalar>(g: &mut Graph<S>, hs: NodeId) -> Result<NodeId, NumericsError> {
    if g.value(hs).rows == 0 {
        return Err(NumericsError::EmptyInput("cls_vector"));
    }
    g.row(hs, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_on_whitespace() {
        assert_eq!(tokenize("Total Length", 10, false), vec!["total", "length"]);
    }

    #[test]
    fn tokenize_empty_wrapped_is_cls_sep() {
        assert_eq!(tokenize("", 10, true), vec!["[CLS]", "[SEP]"]);
    }

    #[test]
    fn tokenize_punctuation_becomes_own_token() {
        assert_eq!(tokenize("HDR_LEN", 10, false), vec!["hdr", "_", "len"]);
        assert_eq!(tokenize("Version:  4 bits.", 10, false), vec!["version", ":", "4", "bits", "."]);
    }

    #[test]
    fn tokenize_wrap_reserves_two_slots() {
        let toks = tokenize("a b c d e", 4, true);
        assert_eq!(toks, vec!["[CLS]", "a", "b", "[SEP]"]);
    }

    #[test]
    fn vocab_ranks_by_frequency_then_alphabet() {
        let texts = ["b b b a a c", "a"];
        let v = Vocab::build(texts.iter().copied(), 100);
        assert_eq!(v.id("a"), 4); // 3 uses, ties broken after b? a=3, b=3 -> alphabetical
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("c"), 6);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.size(), 7);
    }

    #[test]
    fn vocab_cap_limits_size() {
        let texts = ["a b c d e f g h"];
        let v = Vocab::build(texts.iter().copied(), 6);
        assert_eq!(v.size(), 6);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::build(["checksum header checksum"].iter().copied(), 100);
        v.save(&path).unwrap();
        let w = Vocab::load(&path).unwrap();
        assert_eq!(v.size(), w.size());
        assert_eq!(v.id("checksum"), w.id("checksum"));
        assert_eq!(v.id("header"), w.id("header"));
    }

    #[test]
    fn field_positions_restart_at_zero() {
        let cfg = EncoderConfig::default();
        let v = Vocab::build(["version number of the header"].iter().copied(), 100);
        let desc = EncodedInput::description(&v, "version number", &cfg);
        let field = EncodedInput::field(&v, "version", &cfg);
        assert_eq!(desc.position_ids[0], 0);
        assert_eq!(field.position_ids[0], 0);
        assert_eq!(field.len(), cfg.max_field_len);
        assert_eq!(field.segment_ids[0], SEGMENT_FIELD);
        assert_eq!(desc.segment_ids[0], SEGMENT_DESCRIPTION);
    }

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            num_blocks: 1,
            hidden_size: 8,
            num_heads: 2,
            max_desc_len: 6,
            max_field_len: 4,
            vocab_size: 16,
            dropout: 0.0,
            ff_activation: FfActivation::Gelu,
        }
    }

    #[test]
    fn embed_with_zero_tables_is_zero() {
        let cfg = tiny_cfg();
        let mut store: ParamStore<f64> = ParamStore::new(0);
        store.insert_zeros("embed.token", cfg.vocab_size, cfg.hidden_size);
        store.insert_zeros("embed.segment", 2, cfg.hidden_size);
        store.insert_zeros("embed.position", cfg.max_position(), cfg.hidden_size);
        let mut g = Graph::new();
        let input = EncodedInput::new(vec![1, 2, 3], 0);
        let e = embed(&mut g, &store, &input).unwrap();
        assert!(g.value(e).data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn embed_is_sum_of_three_rows() {
        let cfg = tiny_cfg();
        let h = cfg.hidden_size;
        let mut store: ParamStore<f64> = ParamStore::new(0);
        let mut tok = Tensor::zeros(cfg.vocab_size, h);
        tok.set(5, 0, 1.0);
        let mut seg = Tensor::zeros(2, h);
        seg.set(1, 0, 10.0);
        let mut pos = Tensor::zeros(cfg.max_position(), h);
        pos.set(0, 0, 100.0);
        store.insert("embed.token", tok);
        store.insert("embed.segment", seg);
        store.insert("embed.position", pos);
        let mut g = Graph::new();
        let input = EncodedInput::new(vec![5], 1);
        let e = embed(&mut g, &store, &input).unwrap();
        assert_eq!(g.value(e).at(0, 0), 111.0);
    }

    #[test]
    fn encode_preserves_shape_and_zero_blocks_is_identity() {
        let mut cfg = tiny_cfg();
        let mut store: ParamStore<f64> = ParamStore::new(9);
        let mut rng = store.init_rng();
        init_encoder_params(&mut store, &cfg, &mut rng);
        let input = EncodedInput::new(vec![4, 5, 6, 7], 0);

        let mut g = Graph::new();
        let e = embed(&mut g, &store, &input).unwrap();
        let hs = encode(&mut g, &store, &cfg, e, None).unwrap();
        assert_eq!(g.value(hs).shape(), (4, cfg.hidden_size));

        cfg.num_blocks = 0;
        let mut g2 = Graph::new();
        let e2 = embed(&mut g2, &store, &input).unwrap();
        let hs2 = encode(&mut g2, &store, &cfg, e2, None).unwrap();
        assert_eq!(g2.value(hs2).data, g2.value(e2).data);
    }

    #[test]
    fn cls_vector_is_exactly_row_zero() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let cls = cls_vector(&mut g, x).unwrap();
        assert_eq!(g.value(cls).data, vec![1.0, 2.0, 3.0]);

        let one = g.input(Tensor::from_vec(1, 2, vec![7.0, 8.0]));
        let c1 = cls_vector(&mut g, one).unwrap();
        assert_eq!(g.value(c1).data, vec![7.0, 8.0]);
    }

    #[test]
    fn cls_shift_moves_linearly() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let eps = g.input(Tensor::from_vec(2, 2, vec![0.25, 0.25, 0.0, 0.0]));
        let shifted = g.add(x, eps).unwrap();
        let a = cls_vector(&mut g, x).unwrap();
        let b = cls_vector(&mut g, shifted).unwrap();
        assert_eq!(g.value(b).data[0] - g.value(a).data[0], 0.25);
        assert_eq!(g.value(b).data[1] - g.value(a).data[1], 0.25);
    }

    #[test]
    fn permuting_tokens_permutes_rows_without_position_signal() {
        // zero position table, single block: encoder output rows track input
        // rows under permutation of the non-CLS tokens
        let cfg = tiny_cfg();
        let mut store: ParamStore<f64> = ParamStore::new(33);
        let mut rng = store.init_rng();
        init_encoder_params(&mut store, &cfg, &mut rng);
        let h = cfg.hidden_size;
        *store.get_mut("embed.position").unwrap() = Tensor::zeros(cfg.max_position(), h);

        let a = EncodedInput::new(vec![CLS, 7, 8, 9], 0);
        let b = EncodedInput::new(vec![CLS, 9, 7, 8], 0);
        let run = |input: &EncodedInput| {
            let mut g = Graph::new();
            let e = embed(&mut g, &store, input).unwrap();
            let hs = encode(&mut g, &store, &cfg, e, None).unwrap();
            let t = g.value(hs).clone();
            t
        };
        let ha = run(&a);
        let hb = run(&b);
        // rows of b are the permutation (0, 3, 1, 2) of rows of a
        for (rb, ra) in [(0usize, 0usize), (1, 3), (2, 1), (3, 2)] {
            for c in 0..h {
                assert!((hb.at(rb, c) - ha.at(ra, c)).abs() < 1e-9);
            }
        }
    }
}
