use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ExperimentConfig, HarnessError};
use crate::agent::{save_checkpoint, Agent};
use crate::envsim::{Env, Vocab};
use crate::learner::{Actor, Learner, MetricsWriter, TrainMetrics};
use crate::numerics::Real;

/// Column order of the per-episode log.
pub const EPISODES_HEADER: &str = "env_steps,regime,return,success,length,writes,language_changes";

/// Episodes counted by [`RunSummary::final_accuracy`].
const TAIL_EPISODES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub episodes: PathBuf,
    /// Periodic checkpoints followed by the final one.
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub updates: u64,
    pub env_steps: u64,
    /// Training success rate over the last finished episodes (up to 1000).
    pub final_accuracy: Option<Real>,
}

pub(crate) fn seed_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.out_dir.join(&config.name).join(format!("seed-{seed}"))
}

pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunSummary, HarnessError> {
    run_experiment_with(config, seed, |_| {})
}

/// Trains one seed until the step budget is spent. `on_update` sees every
/// update's metrics, e.g. for progress output.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    seed: u64,
    mut on_update: impl FnMut(&TrainMetrics),
) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let world = Arc::new(config.world()?);
    let vocab = Arc::new(Vocab::standard());
    let spec = config.task_spec(&world)?;
    let agent = Agent::new(config.agent_config(&world, &vocab)?, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actors = Vec::with_capacity(config.actors);
    for _ in 0..config.actors {
        let (env, first) = Env::new(world.clone(), vocab.clone(), spec.clone(), rng.random())?;
        actors.push(Actor::new(Box::new(env), first, agent.init_state(), rng.random()));
    }
    let mut learner = Learner::new(agent, actors, config.train_config())?;

    let dir = seed_dir(config, seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("experiment.cfg"), config.to_text())?;
    let metrics_path = dir.join("metrics.csv");
    let episodes_path = dir.join("episodes.csv");
    let regime_label = config.regimes.iter().map(|r| r.name()).collect::<Vec<_>>().join("+");
    let mut metrics = MetricsWriter::new(BufWriter::new(File::create(&metrics_path)?), config.arch.name(), &regime_label, seed)?;
    let mut episodes = BufWriter::new(File::create(&episodes_path)?);
    writeln!(episodes, "{EPISODES_HEADER}")?;

    let mut extra = config.pairs();
    extra.push(("seed".into(), seed.to_string()));
    let mut checkpoints = Vec::new();
    let mut tail = std::collections::VecDeque::with_capacity(TAIL_EPISODES);
    let mut next_checkpoint = config.eval_every;
    while learner.env_steps < config.env_steps {
        let m = learner.train_step()?;
        metrics.record(&m)?;
        for e in &m.episodes {
            writeln!(
                episodes,
                "{},{},{},{},{},{},{}",
                m.env_steps,
                e.regime.name(),
                e.ret,
                u8::from(e.success),
                e.length,
                e.writes,
                e.language_changes
            )?;
            if tail.len() == TAIL_EPISODES {
                tail.pop_front();
            }
            tail.push_back(e.success);
        }
        on_update(&m);
        if learner.env_steps >= next_checkpoint && learner.env_steps < config.env_steps {
            let path = dir.join(format!("ckpt-{:010}.fmap", learner.env_steps));
            save(&path, &learner, &extra)?;
            checkpoints.push(path);
            while next_checkpoint <= learner.env_steps {
                next_checkpoint += config.eval_every;
            }
        }
    }
    metrics.flush()?;
    episodes.flush()?;
    let final_checkpoint = dir.join("final.fmap");
    save(&final_checkpoint, &learner, &extra)?;
    checkpoints.push(final_checkpoint.clone());
    Ok(RunSummary {
        dir,
        metrics: metrics_path,
        episodes: episodes_path,
        checkpoints,
        final_checkpoint,
        updates: learner.step,
        env_steps: learner.env_steps,
        final_accuracy: (!tail.is_empty()).then(|| tail.iter().filter(|&&s| s).count() as Real / tail.len() as Real),
    })
}

fn save(path: &Path, learner: &Learner, extra: &[(String, String)]) -> Result<(), HarnessError> {
    let mut extra = extra.to_vec();
    extra.push(("trained_env_steps".into(), learner.env_steps.to_string()));
    extra.push(("trained_updates".into(), learner.step.to_string()));
    save_checkpoint(path, &learner.agent, &extra)?;
    Ok(())
}
