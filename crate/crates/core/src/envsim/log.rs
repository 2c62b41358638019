use std::io::Write;

use super::vocab::Vocab;
use super::{EnvError, Observation};

/// Column order of the tab-separated episode log.
pub const LOG_FIELDS: [&str; 7] = ["seed", "step", "phase", "action", "reward", "tokens", "done"];

/// Writes one tab-separated record per environment step, preceded by a
/// header line. Tokens are joined by single spaces.
pub struct EpisodeLogger<W: Write> {
    out: W,
}

impl<W: Write> EpisodeLogger<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{}", LOG_FIELDS.join("\t"))?;
        Ok(Self { out })
    }

    pub fn record(&mut self, vocab: &Vocab, seed: u64, step: usize, action: usize, obs: &Observation) -> Result<(), EnvError> {
        let words = vocab.decode(&obs.tokens)?.join(" ");
        writeln!(
            self.out,
            "{seed}\t{step}\t{}\t{action}\t{}\t{words}\t{}",
            obs.info.phase.name(),
            obs.reward,
            u8::from(obs.done)
        )
        .map_err(|e| EnvError::Config(format!("episode log: {e}")))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
