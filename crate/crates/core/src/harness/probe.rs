use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ExperimentConfig, HarnessError};
use crate::agent::{act, read_checkpoint, Agent};
use crate::encdec::LanguageCache;
use crate::envsim::{run_scripted, Env, Observation, OraclePolicy, Pool, RandomSelectionPolicy, Regime, TaskSpec, Vocab, World};
use crate::numerics::{Real, Tape};

/// A success rate with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub successes: usize,
    pub episodes: usize,
    pub accuracy: Real,
    /// `sqrt(p (1 - p) / n)`.
    pub se: Real,
}

pub fn estimate(successes: usize, episodes: usize) -> Estimate {
    let n = episodes.max(1) as Real;
    let p = successes as Real / n;
    Estimate { successes, episodes, accuracy: p, se: (p * (1.0 - p) / n).sqrt() }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4} ({}/{})", self.accuracy, self.se, self.successes, self.episodes)
    }
}

/// Frozen-weight evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    /// The training distribution.
    Train,
    /// Training task with exactly N objects.
    ObjectCount(usize),
    /// Objects drawn only from the held-out categories H.
    NovelObjects,
    /// Cross-exemplar episodes over H: named and instructed exemplars differ.
    CategoryExtension,
    /// Novel objects with the number of retrieved rows overridden.
    TopK(usize),
    /// Training task with the memory capacity overridden.
    Capacity(usize),
    FastPut,
    Corridor,
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Probe::Train => f.write_str("train"),
            Probe::ObjectCount(n) => write!(f, "object-count:{n}"),
            Probe::NovelObjects => f.write_str("novel-objects"),
            Probe::CategoryExtension => f.write_str("category-extension"),
            Probe::TopK(k) => write!(f, "k:{k}"),
            Probe::Capacity(m) => write!(f, "capacity:{m}"),
            Probe::FastPut => f.write_str("fast-put"),
            Probe::Corridor => f.write_str("corridor"),
        }
    }
}

impl FromStr for Probe {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::Config { key: "probe".into(), message: format!("unknown probe {s:?}") };
        let arg = |v: &str| v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
        Ok(match s.split_once(':') {
            None => match s {
                "train" => Probe::Train,
                "novel-objects" => Probe::NovelObjects,
                "category-extension" => Probe::CategoryExtension,
                "fast-put" => Probe::FastPut,
                "corridor" => Probe::Corridor,
                _ => return Err(bad()),
            },
            Some(("object-count", v)) => Probe::ObjectCount(arg(v)?),
            Some(("k", v)) => Probe::TopK(arg(v)?),
            Some(("capacity", v)) => Probe::Capacity(arg(v)?),
            _ => return Err(bad()),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSpec {
    pub probe: Probe,
    pub episodes: usize,
    /// Greedy actions; sampled from the policy otherwise.
    pub greedy: bool,
    pub seed: u64,
}

impl ProbeSpec {
    pub fn new(probe: Probe) -> Self {
        Self { probe, episodes: 1000, greedy: true, seed: 0 }
    }
}

fn mismatch(probe: Probe, message: impl Into<String>) -> HarnessError {
    HarnessError::Mismatch { probe: probe.to_string(), message: message.into() }
}

/// Episode distribution of `probe` for an agent trained under `config`.
pub fn probe_task(config: &ExperimentConfig, world: &World, probe: Probe) -> Result<TaskSpec, HarnessError> {
    let mut spec = config.task_spec(world)?;
    let held_out = |spec: &mut TaskSpec| -> Result<(), HarnessError> {
        let overlap: Vec<usize> = spec.held_out.iter().copied().filter(|c| spec.train_categories.contains(c)).collect();
        if !overlap.is_empty() {
            return Err(mismatch(probe, format!("held-out categories {overlap:?} were trained on")));
        }
        spec.pool = Pool::HeldOut;
        Ok(())
    };
    match probe {
        Probe::Train | Probe::Capacity(_) => {}
        Probe::ObjectCount(n) => spec.n_objects = vec![n],
        Probe::NovelObjects | Probe::TopK(_) => held_out(&mut spec)?,
        Probe::CategoryExtension => {
            spec.regimes = vec![Regime::CategoryExtension];
            held_out(&mut spec)?;
        }
        Probe::FastPut => spec.regimes = vec![Regime::FastPut],
        Probe::Corridor => spec.regimes = vec![Regime::Corridor],
    }
    spec.validate(world).map_err(|e| mismatch(probe, e.to_string()))?;
    Ok(spec)
}

/// Runs `ps.episodes` episodes of `spec` without touching the weights.
/// Episodes run in lockstep lanes; lanes retire once every episode has
/// been started.
pub fn evaluate_agent(agent: &Agent, world: Arc<World>, vocab: Arc<Vocab>, spec: &TaskSpec, ps: &ProbeSpec) -> Result<Estimate, HarnessError> {
    if ps.episodes == 0 {
        return Err(mismatch(ps.probe, "at least one episode"));
    }
    let lanes = ps.episodes.min(16);
    let mut rng = ChaCha8Rng::seed_from_u64(ps.seed);
    let mut envs = Vec::with_capacity(lanes);
    let mut obs: Vec<Observation> = Vec::with_capacity(lanes);
    let mut rngs = Vec::with_capacity(lanes);
    for _ in 0..lanes {
        let (env, first) = Env::new(world.clone(), vocab.clone(), spec.clone(), rng.random())?;
        envs.push(env);
        obs.push(first);
        rngs.push(ChaCha8Rng::seed_from_u64(rng.random()));
    }
    let mut states: Vec<_> = (0..lanes).map(|_| agent.init_state()).collect();
    let mut live = vec![true; lanes];
    let (mut started, mut finished, mut successes) = (lanes, 0, 0);
    while finished < ps.episodes {
        let mut tape = Tape::with_params(agent.params.clone());
        let mut cache = LanguageCache::default();
        let mut carry = agent.load_carry(&mut tape, &states)?;
        let refs: Vec<&Observation> = obs.iter().collect();
        let out = agent.step_batch(&mut tape, &mut cache, &mut carry, &mut states, &refs)?;
        agent.store_carry(&tape, &carry, &mut states);
        for i in 0..lanes {
            if !live[i] {
                continue;
            }
            let a = act(tape.value(out.logits).row(i), &mut rngs[i], ps.greedy)?;
            let next = envs[i].step(a)?;
            if !next.done {
                obs[i] = next;
                continue;
            }
            finished += 1;
            successes += usize::from(next.info.success == Some(true));
            if started < ps.episodes {
                started += 1;
                obs[i] = envs[i].reset()?;
                states[i].reset();
            } else {
                live[i] = false;
            }
        }
    }
    Ok(estimate(successes, finished))
}

/// Loads a checkpoint written by a training run and evaluates `ps` on it.
/// The file is only read.
pub fn evaluate_probe(checkpoint: &Path, ps: &ProbeSpec) -> Result<Estimate, HarnessError> {
    let bytes = std::fs::read(checkpoint)?;
    let (mut agent, extra) = read_checkpoint(&mut bytes.as_slice())?;
    let text: String = extra
        .iter()
        .filter(|(k, _)| super::CONFIG_KEYS.contains(&k.as_str()))
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    let config = ExperimentConfig::parse(&text)?;
    if config.arch != agent.config.arch {
        return Err(mismatch(ps.probe, "checkpoint architecture disagrees with its run config"));
    }
    match ps.probe {
        Probe::TopK(k) => agent.set_top_k(k).map_err(|e| mismatch(ps.probe, e.to_string()))?,
        Probe::Capacity(m) => agent.set_capacity(m).map_err(|e| mismatch(ps.probe, e.to_string()))?,
        _ => {}
    }
    let world = Arc::new(config.world()?);
    let spec = probe_task(&config, &world, ps.probe)?;
    evaluate_agent(&agent, world, Arc::new(Vocab::standard()), &spec, ps)
}

/// Named tasks for the scripted policies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleTask {
    /// Three-object fast-mapping room.
    Room,
    Corridor,
    FastPut,
    SlowLearning,
    SlowPut,
    CategoryExtension,
}

impl OracleTask {
    pub const ALL: [OracleTask; 6] = [
        OracleTask::Room,
        OracleTask::Corridor,
        OracleTask::FastPut,
        OracleTask::SlowLearning,
        OracleTask::SlowPut,
        OracleTask::CategoryExtension,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OracleTask::Room => "room",
            OracleTask::Corridor => "corridor",
            OracleTask::FastPut => "fast-put",
            OracleTask::SlowLearning => "slow-learning",
            OracleTask::SlowPut => "slow-put",
            OracleTask::CategoryExtension => "category-extension",
        }
    }

    pub fn regime(self) -> Regime {
        match self {
            OracleTask::Room => Regime::FastMapping,
            OracleTask::Corridor => Regime::Corridor,
            OracleTask::FastPut => Regime::FastPut,
            OracleTask::SlowLearning => Regime::SlowLearning,
            OracleTask::SlowPut => Regime::SlowPut,
            OracleTask::CategoryExtension => Regime::CategoryExtension,
        }
    }

    /// The default three-object condition with this task's regime.
    pub fn config(self) -> ExperimentConfig {
        ExperimentConfig { regimes: vec![self.regime()], ..ExperimentConfig::default() }
    }
}

impl FromStr for OracleTask {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OracleTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| HarnessError::Config { key: "task".into(), message: format!("unknown task {s:?}") })
    }
}

/// Runs the scripted oracle, or random object selection when `random`.
pub fn run_oracle(config: &ExperimentConfig, episodes: usize, seed: u64, random: bool) -> Result<Estimate, HarnessError> {
    let world = Arc::new(config.world()?);
    let spec = config.task_spec(&world)?;
    let stats = if random {
        run_scripted(world, Arc::new(Vocab::standard()), spec, &mut RandomSelectionPolicy::default(), episodes, seed)?
    } else {
        run_scripted(world, Arc::new(Vocab::standard()), spec, &mut OraclePolicy, episodes, seed)?
    };
    Ok(estimate(stats.successes, stats.episodes))
}
