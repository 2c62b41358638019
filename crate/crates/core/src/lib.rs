//! Fast-mapping agents with dual-coding episodic memory.
//!
//! The crate is split by subsystem:
//!
//! * [`numerics`] - gradient tape, layers and Adam.
//! * [`envsim`] - the two-phase grid-world simulator.
//! * [`encdec`] - perception encoders and reconstruction decoders.
//! * [`memory`] - episodic memories, selective writing and novelty rewards.
//! * [`agent`] - LSTM, DNC-style and DCEM agents.
//! * [`learner`] - V-trace actor-critic training.
//! * [`harness`] - experiment configs, probes and curve aggregation.

pub mod agent;
pub mod encdec;
pub mod envsim;
pub mod harness;
pub mod learner;
pub mod memory;
pub mod numerics;

pub use numerics::{Real, Tensor};
