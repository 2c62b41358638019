//! Perception encoders producing the vision and language embeddings, and
//! the decoders that reconstruct both observations from the latent.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

pub use crate::envsim::Vocab;
use crate::numerics::{Blocks, Linear, LstmCell, LstmState, NumericsError, ParamId, ParamSet, SelfAttention, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EncDecConfig {
    pub vision_dim: usize,
    pub vision_hidden: usize,
    pub vision_embed: usize,
    pub vocab_size: usize,
    pub token_embed: usize,
    pub attention_key: usize,
    pub attention_value: usize,
    pub language_embed: usize,
    pub latent: usize,
    pub decoder_hidden: usize,
    pub decoder_token_embed: usize,
    pub max_len: usize,
    /// Include the `(1 - x) ln(1 - d)` terms in the language loss.
    pub both_sided_language_loss: bool,
}

impl EncDecConfig {
    pub fn new(vision_dim: usize, vocab_size: usize) -> Self {
        Self {
            vision_dim,
            vision_hidden: 64,
            vision_embed: 64,
            vocab_size,
            token_embed: 32,
            attention_key: 16,
            attention_value: 16,
            language_embed: 32,
            latent: 64,
            decoder_hidden: 32,
            decoder_token_embed: 16,
            max_len: 8,
            both_sided_language_loss: true,
        }
    }
}

/// Two-layer ReLU network from vision codes to `v_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisionEncoder {
    pub hidden: Linear,
    pub out: Linear,
}

impl VisionEncoder {
    pub fn new(params: &mut ParamSet, c: &EncDecConfig, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Linear::new(params, "vision_enc.0", c.vision_dim, c.vision_hidden, rng),
            out: Linear::new(params, "vision_enc.1", c.vision_hidden, c.vision_embed, rng),
        }
    }

    /// `codes` is `[B x D]`.
    pub fn encode(&self, tape: &mut Tape, codes: Var) -> Result<Var, NumericsError> {
        if tape.value(codes).cols() != self.hidden.in_dim {
            return Err(NumericsError::shape(
                "encode_vision",
                format!("code width {} expected {}", tape.value(codes).cols(), self.hidden.in_dim),
            ));
        }
        let h = self.hidden.forward(tape, codes)?;
        let h = tape.relu(h);
        let o = self.out.forward(tape, h)?;
        Ok(tape.relu(o))
    }
}

/// Token embeddings, one self-attention layer, mean pooling and a linear
/// projection to `l_t`. The empty sequence maps to a learned null embedding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanguageEncoder {
    pub embedding: ParamId,
    pub attention: SelfAttention,
    pub out: Linear,
    pub null: ParamId,
    pub vocab_size: usize,
}

/// Per-tape memo of encoded sequences, so each distinct string is encoded
/// once per unroll.
#[derive(Debug, Default)]
pub struct LanguageCache {
    tape: Option<u64>,
    rows: HashMap<Vec<usize>, (Var, usize)>,
}

impl LanguageEncoder {
    pub fn new(params: &mut ParamSet, c: &EncDecConfig, rng: &mut impl Rng) -> Self {
        Self {
            embedding: params.add_glorot("lang_enc.embed", c.vocab_size, c.token_embed, rng),
            attention: SelfAttention::new(params, "lang_enc.attn", c.token_embed, c.attention_key, c.attention_value, rng),
            out: Linear::new(params, "lang_enc.out", c.attention_value, c.language_embed, rng),
            null: params.add_glorot("lang_enc.null", 1, c.language_embed, rng),
            vocab_size: c.vocab_size,
        }
    }

    /// Encodes a batch of token sequences into `[B x language_embed]`.
    pub fn encode(&self, tape: &mut Tape, seqs: &[&[usize]]) -> Result<Var, NumericsError> {
        self.encode_cached(tape, &mut LanguageCache::default(), seqs)
    }

    pub fn encode_cached(&self, tape: &mut Tape, cache: &mut LanguageCache, seqs: &[&[usize]]) -> Result<Var, NumericsError> {
        if cache.tape != Some(tape.id()) {
            cache.tape = Some(tape.id());
            cache.rows.clear();
        }
        if let Some(&bad) = seqs.iter().flat_map(|s| s.iter()).find(|&&t| t >= self.vocab_size) {
            return Err(NumericsError::shape("encode_language", format!("token {bad} outside vocabulary")));
        }
        let mut fresh: Vec<&[usize]> = Vec::new();
        for s in seqs {
            if !s.is_empty() && !cache.rows.contains_key(*s) && !fresh.contains(s) {
                fresh.push(s);
            }
        }
        if !fresh.is_empty() {
            let table = tape.param(self.embedding);
            let rows: Vec<(Var, usize)> = fresh.iter().flat_map(|s| s.iter().map(|&t| (table, t))).collect();
            let width = tape.value(table).cols();
            let tokens = tape.gather_rows(&rows, width)?;
            let blocks = Arc::new(Blocks::new(fresh.iter().map(|s| s.len()).collect()));
            let attended = self.attention.forward(tape, tokens, &blocks)?;
            let pooled = tape.block_mean(attended, &blocks)?;
            let encoded = self.out.forward(tape, pooled)?;
            for (i, s) in fresh.iter().enumerate() {
                cache.rows.insert(s.to_vec(), (encoded, i));
            }
        }
        let null = tape.param(self.null);
        let rows: Vec<(Var, usize)> = seqs.iter().map(|s| if s.is_empty() { (null, 0) } else { cache.rows[*s] }).collect();
        let width = tape.value(null).cols();
        tape.gather_rows(&rows, width)
    }
}

/// Latent to vision-code logits; `d^im = sigmoid(logits)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisionDecoder {
    pub hidden: Linear,
    pub out: Linear,
}

impl VisionDecoder {
    pub fn new(params: &mut ParamSet, c: &EncDecConfig, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Linear::new(params, "vision_dec.0", c.latent, c.vision_hidden, rng),
            out: Linear::new(params, "vision_dec.1", c.vision_hidden, c.vision_dim, rng),
        }
    }

    pub fn logits(&self, tape: &mut Tape, e: Var) -> Result<Var, NumericsError> {
        let h = self.hidden.forward(tape, e)?;
        let h = tape.relu(h);
        self.out.forward(tape, h)
    }

    /// Reconstruction `d^im` and the binary cross-entropy against `targets`,
    /// summed over rows and code elements.
    pub fn loss(&self, tape: &mut Tape, e: Var, targets: &Tensor) -> Result<(Var, Var), NumericsError> {
        if targets.data().iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(NumericsError::NonFinite("vision targets must lie in [0, 1]".into()));
        }
        let z = self.logits(tape, e)?;
        let d = tape.sigmoid(z);
        let loss = tape.bce_with_logits(z, targets)?;
        Ok((d, loss))
    }
}

/// Teacher-forced LSTM that spells the current language observation from
/// the latent. Its state starts at `(tanh(W e), 0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanguageDecoder {
    pub init: Linear,
    pub embedding: ParamId,
    pub cell: LstmCell,
    pub out: Linear,
    pub max_len: usize,
    pub vocab_size: usize,
    pub both_sided: bool,
}

impl LanguageDecoder {
    pub fn new(params: &mut ParamSet, c: &EncDecConfig, rng: &mut impl Rng) -> Self {
        Self {
            init: Linear::new(params, "lang_dec.init", c.latent, c.decoder_hidden, rng),
            embedding: params.add_glorot("lang_dec.embed", c.vocab_size, c.decoder_token_embed, rng),
            cell: LstmCell::new(params, "lang_dec.lstm", c.decoder_token_embed, c.decoder_hidden, rng),
            out: Linear::new(params, "lang_dec.out", c.decoder_hidden, c.vocab_size, rng),
            max_len: c.max_len,
            vocab_size: c.vocab_size,
            both_sided: c.both_sided_language_loss,
        }
    }

    /// Per-position vocabulary logits, `[len*B x V]` in position-major order.
    /// Position 0 sees a zero input; position i sees token i-1.
    pub fn logits(&self, tape: &mut Tape, e: Var, targets: &[Vec<usize>], len: usize) -> Result<Var, NumericsError> {
        let b = targets.len();
        let h0 = self.init.forward(tape, e)?;
        let h = tape.tanh(h0);
        let c = tape.constant(Tensor::zeros(b, self.cell.hidden));
        let mut state = LstmState { h, c };
        let table = tape.param(self.embedding);
        let width = tape.value(table).cols();
        let start = tape.constant(Tensor::zeros(1, width));
        let mut steps = Vec::with_capacity(len);
        for pos in 0..len {
            let rows: Vec<(Var, usize)> = targets
                .iter()
                .map(|t| if pos == 0 { (start, 0) } else { (table, t.get(pos - 1).copied().unwrap_or(0)) })
                .collect();
            let x = tape.gather_rows(&rows, width)?;
            state = self.cell.forward(tape, x, state)?;
            steps.push(self.out.forward(tape, state.h)?);
        }
        let refs: Vec<(Var, usize)> = steps.iter().flat_map(|&s| (0..b).map(move |r| (s, r))).collect();
        tape.gather_rows(&refs, self.vocab_size)
    }

    /// Logits and the summed per-position cross-entropy. Targets longer than
    /// `max_len` are an error; positions past each sequence's end are masked.
    pub fn loss(&self, tape: &mut Tape, e: Var, targets: &[Vec<usize>]) -> Result<(Var, Var), NumericsError> {
        if targets.iter().any(|t| t.len() > self.max_len) {
            return Err(NumericsError::shape("recon_language_loss", format!("sequence longer than {}", self.max_len)));
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= self.vocab_size || t == 0) {
            return Err(NumericsError::shape("recon_language_loss", format!("invalid target token {bad}")));
        }
        let len = targets.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let logits = self.logits(tape, e, targets, len)?;
        let mask: Vec<Option<usize>> = (0..len).flat_map(|pos| targets.iter().map(move |t| t.get(pos).copied())).collect();
        let loss = tape.softmax_xent(logits, &mask, self.both_sided)?;
        Ok((logits, loss))
    }
}

/// Both encoders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Encoders {
    pub vision: VisionEncoder,
    pub language: LanguageEncoder,
}

impl Encoders {
    pub fn new(params: &mut ParamSet, c: &EncDecConfig, rng: &mut impl Rng) -> Self {
        Self { vision: VisionEncoder::new(params, c, rng), language: LanguageEncoder::new(params, c, rng) }
    }
}

/// Both reconstruction decoders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decoders {
    pub vision: VisionDecoder,
    pub language: LanguageDecoder,
}

impl Decoders {
    pub fn new(params: &mut ParamSet, c: &EncDecConfig, rng: &mut impl Rng) -> Self {
        Self { vision: VisionDecoder::new(params, c, rng), language: LanguageDecoder::new(params, c, rng) }
    }
}
