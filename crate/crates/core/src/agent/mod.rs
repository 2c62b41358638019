//! The three agent architectures: a plain LSTM, an LSTM with a DNC-style
//! fused memory and an LSTM with the dual-coding episodic memory.
//!
//! One [`Agent`] holds the network layout and an immutable parameter
//! snapshot; each actor owns an [`AgentState`]. Batched steps run on a
//! caller-owned [`Tape`], so an unroll recorded for acting can be
//! differentiated directly by the learner.

mod checkpoint;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::encdec::{Decoders, EncDecConfig, Encoders, LanguageCache};
use crate::envsim::{Observation, NUM_ACTIONS};
use crate::memory::{modality_ngu, ngu_reward, DcemReader, DncReader, DualMemory, FusedMemory, MemoryError, NguConfig, NguStats, SelectiveWriter, Slot};
use crate::numerics::{softmax, Linear, LstmCell, LstmState, NumericsError, ParamSet, Real, Tape, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("agent config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    Lstm,
    Dnc,
    Dcem,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Lstm, Arch::Dnc, Arch::Dcem];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Lstm => "lstm",
            Arch::Dnc => "dnc",
            Arch::Dcem => "dcem",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = AgentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| AgentError::Config(format!("unknown architecture {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub arch: Arch,
    pub encdec: EncDecConfig,
    pub hidden: usize,
    pub read_heads: usize,
    pub top_k: usize,
    pub capacity: usize,
    /// Key width of the attention that aggregates DCEM read-outs.
    pub aggregation_key: usize,
    pub head_hidden: usize,
    pub actions: usize,
    pub selective_write: bool,
    pub write_window: usize,
    /// Let reconstruction gradients reach the memory read-out through `e_t`.
    pub recon_through_read: bool,
    pub ngu: NguConfig,
}

impl AgentConfig {
    pub fn new(arch: Arch, vision_dim: usize, vocab_size: usize) -> Self {
        Self {
            arch,
            encdec: EncDecConfig::new(vision_dim, vocab_size),
            hidden: 128,
            read_heads: 3,
            top_k: 8,
            capacity: 1024,
            aggregation_key: 32,
            head_hidden: 64,
            actions: NUM_ACTIONS,
            selective_write: false,
            write_window: 3,
            recon_through_read: false,
            ngu: NguConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let sizes = [
            ("hidden", self.hidden),
            ("read_heads", self.read_heads),
            ("top_k", self.top_k),
            ("capacity", self.capacity),
            ("head_hidden", self.head_hidden),
            ("actions", self.actions),
            ("write_window", self.write_window),
            ("latent", self.encdec.latent),
            ("vision_dim", self.encdec.vision_dim),
            ("vocab_size", self.encdec.vocab_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(AgentError::Config(format!("{name} must be positive")));
        }
        Ok(())
    }

    /// Width of the memory read-out fed to the latent network.
    pub fn read_width(&self) -> usize {
        match self.arch {
            Arch::Lstm => 0,
            Arch::Dnc => self.read_heads * self.encdec.latent,
            Arch::Dcem => self.read_heads * self.encdec.vision_embed,
        }
    }

    /// Flat `key=value` form stored in checkpoints.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let e = &self.encdec;
        let mut v: Vec<(&str, String)> = vec![
            ("arch", self.arch.to_string()),
            ("vision_dim", e.vision_dim.to_string()),
            ("vision_hidden", e.vision_hidden.to_string()),
            ("vision_embed", e.vision_embed.to_string()),
            ("vocab_size", e.vocab_size.to_string()),
            ("token_embed", e.token_embed.to_string()),
            ("attention_key", e.attention_key.to_string()),
            ("attention_value", e.attention_value.to_string()),
            ("language_embed", e.language_embed.to_string()),
            ("latent", e.latent.to_string()),
            ("decoder_hidden", e.decoder_hidden.to_string()),
            ("decoder_token_embed", e.decoder_token_embed.to_string()),
            ("max_len", e.max_len.to_string()),
            ("both_sided_language_loss", e.both_sided_language_loss.to_string()),
            ("hidden", self.hidden.to_string()),
            ("read_heads", self.read_heads.to_string()),
            ("top_k", self.top_k.to_string()),
            ("capacity", self.capacity.to_string()),
            ("aggregation_key", self.aggregation_key.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("actions", self.actions.to_string()),
            ("selective_write", self.selective_write.to_string()),
            ("write_window", self.write_window.to_string()),
            ("recon_through_read", self.recon_through_read.to_string()),
        ];
        v.sort_by_key(|p| p.0);
        v.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, AgentError> {
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| AgentError::Config(format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<usize, AgentError> { get(k)?.parse().map_err(|_| AgentError::Config(format!("bad value for {k}"))) };
        let flag = |k: &str| -> Result<bool, AgentError> { get(k)?.parse().map_err(|_| AgentError::Config(format!("bad value for {k}"))) };
        let encdec = EncDecConfig {
            vision_dim: num("vision_dim")?,
            vision_hidden: num("vision_hidden")?,
            vision_embed: num("vision_embed")?,
            vocab_size: num("vocab_size")?,
            token_embed: num("token_embed")?,
            attention_key: num("attention_key")?,
            attention_value: num("attention_value")?,
            language_embed: num("language_embed")?,
            latent: num("latent")?,
            decoder_hidden: num("decoder_hidden")?,
            decoder_token_embed: num("decoder_token_embed")?,
            max_len: num("max_len")?,
            both_sided_language_loss: flag("both_sided_language_loss")?,
        };
        let c = Self {
            arch: get("arch")?.parse()?,
            encdec,
            hidden: num("hidden")?,
            read_heads: num("read_heads")?,
            top_k: num("top_k")?,
            capacity: num("capacity")?,
            aggregation_key: num("aggregation_key")?,
            head_hidden: num("head_hidden")?,
            actions: num("actions")?,
            selective_write: flag("selective_write")?,
            write_window: num("write_window")?,
            recon_through_read: flag("recon_through_read")?,
            ngu: NguConfig::default(),
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reader {
    None,
    Dnc(DncReader),
    Dcem(DcemReader),
}

/// Layer handles into the parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub encoders: Encoders,
    pub decoders: Decoders,
    /// `w`, producing the latent `e_t`.
    pub latent: Linear,
    pub core: LstmCell,
    pub reader: Reader,
    pub head_hidden: Linear,
    pub policy: Linear,
    pub value: Linear,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub config: AgentConfig,
    pub net: Network,
    pub params: Arc<ParamSet>,
}

impl Agent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let e = &config.encdec;
        let encoders = Encoders::new(&mut p, e, &mut rng);
        let decoders = Decoders::new(&mut p, e, &mut rng);
        let x_dim = e.vision_embed + e.language_embed;
        let latent = Linear::new(&mut p, "latent", config.hidden + config.read_width() + x_dim, e.latent, &mut rng);
        let core = LstmCell::new(&mut p, "core", e.latent, config.hidden, &mut rng);
        let reader = match config.arch {
            Arch::Lstm => Reader::None,
            Arch::Dnc => Reader::Dnc(DncReader::new(&mut p, config.hidden, e.latent, config.read_heads, config.top_k, &mut rng)),
            Arch::Dcem => Reader::Dcem(DcemReader::new(
                &mut p,
                x_dim + config.hidden,
                e.language_embed,
                e.vision_embed,
                config.read_heads,
                config.top_k,
                config.aggregation_key,
                &mut rng,
            )),
        };
        let head_hidden = Linear::new(&mut p, "head.hidden", e.latent + config.hidden, config.head_hidden, &mut rng);
        let policy = Linear::new(&mut p, "head.policy", config.head_hidden, config.actions, &mut rng);
        let value = Linear::new(&mut p, "head.value", config.head_hidden, 1, &mut rng);
        let net = Network { encoders, decoders, latent, core, reader, head_hidden, policy, value };
        Ok(Self { config, net, params: Arc::new(p) })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn init_state(&self) -> AgentState {
        let c = &self.config;
        let memory = match c.arch {
            Arch::Lstm => Memory::None,
            Arch::Dnc => Memory::Fused(FusedMemory::new(c.capacity, c.encdec.latent).expect("validated capacity")),
            Arch::Dcem => Memory::Dual(
                DualMemory::new(c.capacity, c.encdec.language_embed, c.encdec.vision_embed).expect("validated capacity"),
            ),
        };
        AgentState {
            h: vec![0.0; c.hidden],
            c: vec![0.0; c.hidden],
            read: vec![0.0; c.read_width()],
            memory,
            writer: c.selective_write.then(|| SelectiveWriter::new(c.write_window)),
            ngu_lang: NguStats::default(),
            ngu_im: NguStats::default(),
            t: 0,
        }
    }

    /// Tape nodes holding the recurrent state of `states`, one row each.
    pub fn load_carry(&self, tape: &mut Tape, states: &[AgentState]) -> Result<Carry, AgentError> {
        let stack = |tape: &mut Tape, f: &dyn Fn(&AgentState) -> &[Real], w: usize| -> Result<Var, AgentError> {
            let data: Vec<Real> = states.iter().flat_map(|s| f(s).iter().copied()).collect();
            Ok(tape.constant(Tensor::new(states.len(), w, data)?))
        };
        Ok(Carry {
            h: stack(tape, &|s| &s.h, self.config.hidden)?,
            c: stack(tape, &|s| &s.c, self.config.hidden)?,
            read: stack(tape, &|s| &s.read, self.config.read_width())?,
        })
    }

    /// Copies the carry back into `states` and drops their links to `tape`.
    pub fn store_carry(&self, tape: &Tape, carry: &Carry, states: &mut [AgentState]) {
        for (i, s) in states.iter_mut().enumerate() {
            s.h.copy_from_slice(tape.value(carry.h).row(i));
            s.c.copy_from_slice(tape.value(carry.c).row(i));
            s.read.copy_from_slice(tape.value(carry.read).row(i));
            s.memory.detach();
        }
    }

    /// One timestep for a batch of actors, recorded on `tape`. Rows whose
    /// state is at the start of an episode have their carry zeroed first.
    pub fn step_batch(
        &self,
        tape: &mut Tape,
        cache: &mut LanguageCache,
        carry: &mut Carry,
        states: &mut [AgentState],
        obs: &[&Observation],
    ) -> Result<StepOutput, AgentError> {
        let b = states.len();
        let c = &self.config;
        let e = &c.encdec;
        if obs.len() != b || tape.value(carry.h).rows() != b {
            return Err(AgentError::Config(format!("{} observations, {b} states", obs.len())));
        }
        if let Some(o) = obs.iter().find(|o| o.vision.len() != e.vision_dim) {
            return Err(NumericsError::shape("agent_step", format!("vision width {} expected {}", o.vision.len(), e.vision_dim)).into());
        }
        if states.iter().any(|s| s.t == 0) {
            let mask: Vec<Real> = states.iter().map(|s| if s.t == 0 { 0.0 } else { 1.0 }).collect();
            let m = tape.constant(Tensor::new(b, 1, mask)?);
            carry.h = tape.mul_col(carry.h, m)?;
            carry.c = tape.mul_col(carry.c, m)?;
            carry.read = tape.mul_col(carry.read, m)?;
        }
        let codes = tape.constant(Tensor::new(b, e.vision_dim, obs.iter().flat_map(|o| o.vision.iter().copied()).collect())?);
        let v = self.net.encoders.vision.encode(tape, codes)?;
        let seqs: Vec<&[usize]> = obs.iter().map(|o| o.tokens.as_slice()).collect();
        let l = self.net.encoders.language.encode_cached(tape, cache, &seqs)?;
        let writes: Vec<bool> = states
            .iter_mut()
            .zip(obs)
            .map(|(s, o)| s.writer.as_mut().is_none_or(|w| w.should_write(&o.tokens)))
            .collect();
        let prev = LstmState { h: carry.h, c: carry.c };
        let mut ngu = vec![(0.0, 0.0); b];
        let mut recon_latent = None;
        let (latent, next) = match &self.net.reader {
            Reader::None => {
                let e_t = self.latent(tape, &[prev.h, v, l])?;
                (e_t, self.net.core.forward(tape, e_t, prev)?)
            }
            Reader::Dcem(reader) => {
                let qin = tape.concat_cols(&[v, l, prev.h])?;
                let mems: Vec<&DualMemory> = states.iter().map(|s| s.memory.dual()).collect::<Result<_, _>>()?;
                let r = reader.read(tape, &mems, qin)?;
                carry.read = r;
                let e_t = self.latent(tape, &[prev.h, r, v, l])?;
                if !c.recon_through_read {
                    let stopped = tape.stop_gradient(r);
                    recon_latent = Some(self.latent(tape, &[prev.h, stopped, v, l])?);
                }
                let next = self.net.core.forward(tape, e_t, prev)?;
                for (i, s) in states.iter_mut().enumerate() {
                    if !writes[i] {
                        continue;
                    }
                    let key = Slot { data: tape.value(l).row(i).to_vec(), source: Some(tape.row_ref(l, i)) };
                    let val = Slot { data: tape.value(v).row(i).to_vec(), source: Some(tape.row_ref(v, i)) };
                    let AgentState { memory, ngu_lang, ngu_im, t, .. } = s;
                    let mem = memory.dual_mut()?;
                    ngu[i] = modality_ngu(mem, &key.data, &val.data, ngu_lang, ngu_im, &c.ngu)?;
                    mem.write(key, val, *t)?;
                }
                (e_t, next)
            }
            Reader::Dnc(reader) => {
                let e_t = self.latent(tape, &[prev.h, carry.read, v, l])?;
                if !c.recon_through_read {
                    let stopped = tape.stop_gradient(carry.read);
                    recon_latent = Some(self.latent(tape, &[prev.h, stopped, v, l])?);
                }
                for (i, s) in states.iter_mut().enumerate() {
                    if writes[i] {
                        let slot = Slot { data: tape.value(e_t).row(i).to_vec(), source: Some(tape.row_ref(e_t, i)) };
                        let AgentState { memory, ngu_lang, t, .. } = s;
                        let mem = memory.fused_mut()?;
                        // One merged column: its novelty is reported in the language slot.
                        ngu[i] = (ngu_reward(mem.rows(), &slot.data, ngu_lang, &c.ngu)?, 0.0);
                        mem.write(slot, *t)?;
                    }
                }
                let next = self.net.core.forward(tape, e_t, prev)?;
                let mems: Vec<&FusedMemory> = states.iter().map(|s| s.memory.fused()).collect::<Result<_, _>>()?;
                carry.read = reader.read(tape, &mems, next.h)?;
                (e_t, next)
            }
        };
        carry.h = next.h;
        carry.c = next.c;
        let joint = tape.concat_cols(&[latent, next.h])?;
        let z = self.net.head_hidden.forward(tape, joint)?;
        let z = tape.relu(z);
        let logits = self.net.policy.forward(tape, z)?;
        let value = self.net.value.forward(tape, z)?;
        for s in states.iter_mut() {
            s.t += 1;
        }
        let wrote = match c.arch {
            Arch::Lstm => vec![false; b],
            _ => writes,
        };
        let recon_latent = recon_latent.unwrap_or(latent);
        Ok(StepOutput { logits, value, latent, recon_latent, vision: v, language: l, ngu, wrote })
    }

    fn latent(&self, tape: &mut Tape, parts: &[Var]) -> Result<Var, AgentError> {
        let x = tape.concat_cols(parts)?;
        let z = self.net.latent.forward(tape, x)?;
        Ok(tape.relu(z))
    }

    /// Single-actor step on a private tape.
    pub fn step(&self, state: &mut AgentState, obs: &Observation) -> Result<StepValues, AgentError> {
        let mut tape = Tape::with_params(self.params.clone());
        let mut cache = LanguageCache::default();
        let states = std::slice::from_mut(state);
        let mut carry = self.load_carry(&mut tape, states)?;
        let out = self.step_batch(&mut tape, &mut cache, &mut carry, states, &[obs])?;
        let recon = self.net.decoders.vision.logits(&mut tape, out.recon_latent)?;
        let recon = tape.sigmoid(recon);
        self.store_carry(&tape, &carry, states);
        Ok(StepValues {
            logits: tape.value(out.logits).row(0).to_vec(),
            value: tape.value(out.value).item(),
            latent: tape.value(out.latent).row(0).to_vec(),
            read: tape.value(carry.read).row(0).to_vec(),
            recon_vision: tape.value(recon).row(0).to_vec(),
            ngu: out.ngu[0],
            wrote: out.wrote[0],
        })
    }

    /// Changes how many rows each read head retrieves. Weights are unaffected.
    pub fn set_top_k(&mut self, k: usize) -> Result<(), AgentError> {
        if k == 0 {
            return Err(AgentError::Config("top_k must be positive".into()));
        }
        match &mut self.net.reader {
            Reader::None => return Err(AgentError::Config("the lstm agent has no memory to read".into())),
            Reader::Dnc(r) => r.k = k,
            Reader::Dcem(r) => r.k = k,
        }
        self.config.top_k = k;
        Ok(())
    }

    /// Memory rows given to states created after this call.
    pub fn set_capacity(&mut self, capacity: usize) -> Result<(), AgentError> {
        if self.config.arch == Arch::Lstm {
            return Err(AgentError::Config("the lstm agent has no memory".into()));
        }
        if capacity == 0 {
            return Err(AgentError::Config("capacity must be positive".into()));
        }
        self.config.capacity = capacity;
        Ok(())
    }

    /// Replaces the parameter snapshot, keeping the layout.
    pub fn set_params(&mut self, params: ParamSet) -> Result<(), AgentError> {
        if params.len() != self.params.len() || params.iter().zip(self.params.iter()).any(|(a, b)| a.1 != b.1 || a.2.shape() != b.2.shape()) {
            return Err(AgentError::Config("parameter layout differs".into()));
        }
        self.params = Arc::new(params);
        Ok(())
    }
}

/// Per-actor recurrent state.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub h: Vec<Real>,
    pub c: Vec<Real>,
    /// Previous read-out (DNC) or the latest read (DCEM).
    pub read: Vec<Real>,
    pub memory: Memory,
    pub writer: Option<SelectiveWriter>,
    /// Lifetime statistics of the language column, or of the fused column.
    pub ngu_lang: NguStats,
    pub ngu_im: NguStats,
    /// Steps taken in the current episode.
    pub t: usize,
}

impl AgentState {
    /// Episode boundary: zero the controller, empty the memory. Novelty
    /// statistics are kept.
    pub fn reset(&mut self) {
        self.h.fill(0.0);
        self.c.fill(0.0);
        self.read.fill(0.0);
        self.memory.clear();
        if let Some(w) = &mut self.writer {
            w.reset();
        }
        self.t = 0;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Memory {
    None,
    Fused(FusedMemory),
    Dual(DualMemory),
}

impl Memory {
    pub fn occupancy(&self) -> usize {
        match self {
            Memory::None => 0,
            Memory::Fused(m) => m.occupancy(),
            Memory::Dual(m) => m.occupancy(),
        }
    }

    pub fn capacity(&self) -> usize {
        match self {
            Memory::None => 0,
            Memory::Fused(m) => m.capacity(),
            Memory::Dual(m) => m.capacity(),
        }
    }

    pub fn clear(&mut self) {
        match self {
            Memory::None => {}
            Memory::Fused(m) => m.clear(),
            Memory::Dual(m) => m.clear(),
        }
    }

    pub fn detach(&mut self) {
        match self {
            Memory::None => {}
            Memory::Fused(m) => m.detach(),
            Memory::Dual(m) => m.detach(),
        }
    }

    pub fn dual(&self) -> Result<&DualMemory, AgentError> {
        match self {
            Memory::Dual(m) => Ok(m),
            _ => Err(AgentError::Config("state does not hold a dual memory".into())),
        }
    }

    fn dual_mut(&mut self) -> Result<&mut DualMemory, AgentError> {
        match self {
            Memory::Dual(m) => Ok(m),
            _ => Err(AgentError::Config("state does not hold a dual memory".into())),
        }
    }

    pub fn fused(&self) -> Result<&FusedMemory, AgentError> {
        match self {
            Memory::Fused(m) => Ok(m),
            _ => Err(AgentError::Config("state does not hold a fused memory".into())),
        }
    }

    fn fused_mut(&mut self) -> Result<&mut FusedMemory, AgentError> {
        match self {
            Memory::Fused(m) => Ok(m),
            _ => Err(AgentError::Config("state does not hold a fused memory".into())),
        }
    }
}

/// Recurrent state of a batch on one tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Carry {
    pub h: Var,
    pub c: Var,
    pub read: Var,
}

/// Tape nodes produced by one batched step, one row per actor.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub logits: Var,
    pub value: Var,
    pub latent: Var,
    /// Same value as `latent`; the node reconstruction losses attach to.
    pub recon_latent: Var,
    pub vision: Var,
    pub language: Var,
    /// `(language, vision)` novelty, zero when nothing was written.
    pub ngu: Vec<(Real, Real)>,
    pub wrote: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepValues {
    pub logits: Vec<Real>,
    pub value: Real,
    pub latent: Vec<Real>,
    pub read: Vec<Real>,
    pub recon_vision: Vec<Real>,
    pub ngu: (Real, Real),
    pub wrote: bool,
}

/// Samples from `softmax(logits)`, or takes the first maximum when
/// `greedy`.
pub fn act(logits: &[Real], rng: &mut impl Rng, greedy: bool) -> Result<usize, AgentError> {
    if logits.is_empty() {
        return Err(NumericsError::Empty("act").into());
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite("policy logits".into()).into());
    }
    if greedy {
        let mut best = 0;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        return Ok(best);
    }
    let p = softmax(logits)?;
    let u: Real = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1))
}
