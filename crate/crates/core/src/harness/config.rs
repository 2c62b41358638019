use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use super::HarnessError;
use crate::agent::{AgentConfig, Arch};
use crate::envsim::{Regime, TaskSpec, Vocab, World, WorldConfig};
use crate::learner::TrainConfig;
use crate::numerics::Real;

/// One training condition. Parsed from flat `key = value` text; `#` starts a
/// comment, lists are comma-separated.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub arch: Arch,
    /// Episode regimes, sampled uniformly per episode.
    pub regimes: Vec<Regime>,
    /// Object counts N, sampled uniformly per episode.
    pub n_objects: Vec<usize>,
    /// |G|: training categories are the first `g`.
    pub g: usize,
    /// |H|: held-out categories are the last `h`.
    pub h: usize,
    pub capacity: usize,
    pub top_k: usize,
    pub read_heads: usize,
    pub selective_write: bool,
    pub write_window: usize,
    pub shaping: bool,
    pub recon_cost: Real,
    pub recon_through_read: bool,
    pub lambda_lang: Real,
    pub lambda_im: Real,
    pub entropy_cost: Real,
    pub learning_rate: Option<Real>,
    pub seeds: Vec<u64>,
    /// Step budget in environment steps.
    pub env_steps: u64,
    /// Checkpoint cadence in environment steps.
    pub eval_every: u64,
    pub actors: usize,
    pub unroll: usize,
    pub discovery_steps: usize,
    pub instruction_steps: usize,
    pub world_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            name: "experiment".into(),
            arch: Arch::Dcem,
            regimes: vec![Regime::FastMapping],
            n_objects: vec![3],
            g: 30,
            h: 10,
            capacity: 1024,
            top_k: 8,
            read_heads: 3,
            selective_write: false,
            write_window: 3,
            shaping: true,
            recon_cost: train.weights.recon,
            recon_through_read: false,
            lambda_lang: 0.0,
            lambda_im: 0.0,
            entropy_cost: train.weights.entropy,
            learning_rate: None,
            seeds: vec![1],
            env_steps: 5_000_000,
            eval_every: 500_000,
            actors: 16,
            unroll: train.unroll,
            discovery_steps: 90,
            instruction_steps: 60,
            world_seed: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Every key accepted in a config file.
pub const CONFIG_KEYS: [&str; 27] = [
    "name",
    "arch",
    "regime",
    "n_objects",
    "g",
    "h",
    "capacity",
    "top_k",
    "read_heads",
    "selective_write",
    "write_window",
    "shaping",
    "recon_cost",
    "recon_through_read",
    "lambda_lang",
    "lambda_im",
    "entropy_cost",
    "learning_rate",
    "seeds",
    "env_steps",
    "eval_every",
    "actors",
    "unroll",
    "discovery_steps",
    "instruction_steps",
    "world_seed",
    "out_dir",
];

fn bad(key: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config { key: key.to_string(), message: msg.into() }
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| bad(key, format!("cannot parse {v:?}")))
}

/// Accepts `5000000`, `5e6` and `5_000_000`.
fn parse_count(key: &str, v: &str) -> Result<u64, HarnessError> {
    let clean = v.replace('_', "");
    if let Ok(n) = clean.parse::<u64>() {
        return Ok(n);
    }
    match clean.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 => Ok(x as u64),
        _ => Err(bad(key, format!("expected a non-negative integer, got {v:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, HarnessError> {
    v.split(',').map(|x| parse_one(key, x.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(bad("", format!("line {}: expected key = value", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if !CONFIG_KEYS.contains(&k) {
                return Err(bad(k, "unknown key"));
            }
            if seen.insert(k.to_string(), v.to_string()).is_some() {
                return Err(bad(k, "given twice"));
            }
        }
        let mut c = Self::default();
        for (k, v) in &seen {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "name" => c.name = v.to_string(),
                "arch" => c.arch = v.parse().map_err(|_| bad(k, format!("unknown architecture {v:?}")))?,
                "regime" => c.regimes = parse_list(k, v)?,
                "n_objects" => c.n_objects = parse_list(k, v)?,
                "g" => c.g = parse_one(k, v)?,
                "h" => c.h = parse_one(k, v)?,
                "capacity" => c.capacity = parse_one(k, v)?,
                "top_k" => c.top_k = parse_one(k, v)?,
                "read_heads" => c.read_heads = parse_one(k, v)?,
                "selective_write" => c.selective_write = parse_one(k, v)?,
                "write_window" => c.write_window = parse_one(k, v)?,
                "shaping" => c.shaping = parse_one(k, v)?,
                "recon_cost" => c.recon_cost = parse_one(k, v)?,
                "recon_through_read" => c.recon_through_read = parse_one(k, v)?,
                "lambda_lang" => c.lambda_lang = parse_one(k, v)?,
                "lambda_im" => c.lambda_im = parse_one(k, v)?,
                "entropy_cost" => c.entropy_cost = parse_one(k, v)?,
                "learning_rate" => c.learning_rate = Some(parse_one(k, v)?),
                "seeds" => c.seeds = parse_list(k, v)?,
                "env_steps" => c.env_steps = parse_count(k, v)?,
                "eval_every" => c.eval_every = parse_count(k, v)?,
                "actors" => c.actors = parse_one(k, v)?,
                "unroll" => c.unroll = parse_one(k, v)?,
                "discovery_steps" => c.discovery_steps = parse_one(k, v)?,
                "instruction_steps" => c.instruction_steps = parse_one(k, v)?,
                "world_seed" => c.world_seed = parse_one(k, v)?,
                "out_dir" => c.out_dir = PathBuf::from(v),
                _ => unreachable!("keys are checked above"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Inverse of [`parse`](Self::parse), listing every key.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("name", self.name.clone()),
            ("arch", self.arch.to_string()),
            ("regime", join(&self.regimes)),
            ("n_objects", join(&self.n_objects)),
            ("g", self.g.to_string()),
            ("h", self.h.to_string()),
            ("capacity", self.capacity.to_string()),
            ("top_k", self.top_k.to_string()),
            ("read_heads", self.read_heads.to_string()),
            ("selective_write", self.selective_write.to_string()),
            ("write_window", self.write_window.to_string()),
            ("shaping", self.shaping.to_string()),
            ("recon_cost", self.recon_cost.to_string()),
            ("recon_through_read", self.recon_through_read.to_string()),
            ("lambda_lang", self.lambda_lang.to_string()),
            ("lambda_im", self.lambda_im.to_string()),
            ("entropy_cost", self.entropy_cost.to_string()),
        ];
        if let Some(lr) = self.learning_rate {
            out.push(("learning_rate", lr.to_string()));
        }
        out.extend([
            ("seeds", join(&self.seeds)),
            ("env_steps", self.env_steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("actors", self.actors.to_string()),
            ("unroll", self.unroll.to_string()),
            ("discovery_steps", self.discovery_steps.to_string()),
            ("instruction_steps", self.instruction_steps.to_string()),
            ("world_seed", self.world_seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ]);
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            return Err(bad("name", "must be non-empty without slashes or commas"));
        }
        if self.regimes.is_empty() {
            return Err(bad("regime", "at least one regime"));
        }
        if self.n_objects.is_empty() || self.n_objects.contains(&0) {
            return Err(bad("n_objects", "object counts must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(bad("seeds", "seeds must be distinct"));
        }
        for (key, v) in [("actors", self.actors), ("unroll", self.unroll), ("capacity", self.capacity), ("top_k", self.top_k), ("read_heads", self.read_heads), ("write_window", self.write_window)] {
            if v == 0 {
                return Err(bad(key, "must be positive"));
            }
        }
        if self.env_steps == 0 {
            return Err(bad("env_steps", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(bad("eval_every", "must be positive"));
        }
        for (key, v) in [("recon_cost", self.recon_cost), ("lambda_lang", self.lambda_lang), ("lambda_im", self.lambda_im), ("entropy_cost", self.entropy_cost)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(key, "must be finite and non-negative"));
            }
        }
        if let Some(lr) = self.learning_rate {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(bad("learning_rate", "must be finite and non-negative"));
            }
        }
        let world = WorldConfig { seed: self.world_seed, ..WorldConfig::default() };
        if self.g + self.h > world.categories {
            return Err(bad("g", format!("|G| + |H| = {} exceeds the {} categories", self.g + self.h, world.categories)));
        }
        if self.g == 0 {
            return Err(bad("g", "must be positive"));
        }
        Ok(())
    }

    pub fn world(&self) -> Result<World, HarnessError> {
        Ok(World::generate(WorldConfig { seed: self.world_seed, ..WorldConfig::default() })?)
    }

    /// Training task: G is the first `g` categories, H the last `h`.
    pub fn task_spec(&self, world: &World) -> Result<TaskSpec, HarnessError> {
        let mut spec = TaskSpec::new(world, self.regimes[0], self.n_objects[0].min(self.g), self.g).map_err(|e| bad("regime", e.to_string()))?;
        let c = world.categories();
        spec.regimes = self.regimes.clone();
        spec.n_objects = self.n_objects.clone();
        spec.held_out = (c - self.h..c).collect();
        spec.shaping = self.shaping;
        spec.discovery_steps = self.discovery_steps;
        spec.instruction_steps = self.instruction_steps;
        spec.validate(world).map_err(|e| bad("n_objects", e.to_string()))?;
        Ok(spec)
    }

    pub fn agent_config(&self, world: &World, vocab: &Vocab) -> Result<AgentConfig, HarnessError> {
        let mut a = AgentConfig::new(self.arch, world.dim(), vocab.len());
        a.capacity = self.capacity;
        a.top_k = self.top_k;
        a.read_heads = self.read_heads;
        a.selective_write = self.selective_write;
        a.write_window = self.write_window;
        a.recon_through_read = self.recon_through_read;
        a.validate().map_err(|e| bad("arch", e.to_string()))?;
        Ok(a)
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = TrainConfig { unroll: self.unroll, ..TrainConfig::default() };
        t.weights.recon = self.recon_cost;
        t.weights.lambda_lang = self.lambda_lang;
        t.weights.lambda_im = self.lambda_im;
        t.weights.entropy = self.entropy_cost;
        if let Some(lr) = self.learning_rate {
            t.adam.learning_rate = lr;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_flagship_condition() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.arch, Arch::Dcem);
        assert_eq!((c.n_objects.as_slice(), c.g, c.capacity), (&[3][..], 30, 1024));
        assert!(c.recon_cost > 0.0 && c.shaping);
        assert_eq!(c.learning_rate, None);
    }

    #[test]
    fn parses_every_key() {
        let text = "
            # slow-learning sanity run
            name = slow
            arch = lstm
            regime = slow-learning, slow-put
            n_objects = 3,4
            g = 20
            h = 5
            capacity = 20
            top_k = 1
            read_heads = 2
            selective_write = true
            write_window = 4
            shaping = false
            recon_cost = 0
            recon_through_read = true
            lambda_lang = 1e-3
            lambda_im = 3e-5
            entropy_cost = 0.01
            learning_rate = 3e-4
            seeds = 1,2,3
            env_steps = 2e6
            eval_every = 250_000
            actors = 8
            unroll = 32
            discovery_steps = 50
            instruction_steps = 40
            world_seed = 7
            out_dir = /tmp/x   # trailing comment
        ";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.regimes, vec![Regime::SlowLearning, Regime::SlowPut]);
        assert_eq!(c.n_objects, vec![3, 4]);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!((c.env_steps, c.eval_every), (2_000_000, 250_000));
        assert_eq!(c.learning_rate, Some(3e-4));
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
        assert!(c.selective_write && !c.shaping && c.recon_through_read);
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(c.pairs().len(), CONFIG_KEYS.len());
    }

    #[test]
    fn errors_name_the_field() {
        let key = |text: &str| match ExperimentConfig::parse(text) {
            Err(HarnessError::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key("colour = red"), "colour");
        assert_eq!(key("arch = transformer"), "arch");
        assert_eq!(key("seeds = 1,1"), "seeds");
        assert_eq!(key("g = 35"), "g");
        assert_eq!(key("top_k = 0"), "top_k");
        assert_eq!(key("env_steps = 1.5"), "env_steps");
        assert_eq!(key("g = 3\ng = 4"), "g");
        assert_eq!(key("regime = fast"), "regime");
        assert_eq!(key("learning_rate = -1"), "learning_rate");
    }

    #[test]
    fn task_spec_checks_pools() {
        let c = ExperimentConfig::parse("n_objects = 5\ng = 3").unwrap();
        let world = c.world().unwrap();
        assert!(c.task_spec(&world).is_err());
        let c = ExperimentConfig::parse("n_objects = 3,4,5,6\nshaping = false").unwrap();
        let spec = c.task_spec(&world).unwrap();
        assert_eq!(spec.n_objects, vec![3, 4, 5, 6]);
        assert_eq!(spec.held_out.len(), 10);
        assert!(spec.held_out.iter().all(|h| !spec.train_categories.contains(h)));
        assert!(!spec.shaping);
    }

    #[test]
    fn train_config_carries_costs() {
        let c = ExperimentConfig::parse("recon_cost = 0\nlambda_lang = 1e-3\nlearning_rate = 0.01").unwrap();
        let t = c.train_config();
        assert_eq!((t.weights.recon, t.weights.lambda_lang, t.adam.learning_rate), (0.0, 1e-3, 0.01));
        let d = ExperimentConfig::default().train_config();
        assert_eq!(d.adam.learning_rate, TrainConfig::default().adam.learning_rate);
        assert_eq!((d.weights.lambda_lang, d.weights.lambda_im), (0.0, 0.0));
    }
}
