//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use fastmap::agent::{Agent, AgentConfig, Arch};
use fastmap::envsim::{Env, Regime, TaskSpec, Vocab, World, WorldConfig};
use fastmap::learner::{Actor, Learner, TrainConfig};

/// A learner with default-sized networks on the N=3 fast-mapping task.
pub fn learner(arch: Arch, actors: usize, unroll: usize) -> Learner {
    let world = Arc::new(World::generate(WorldConfig::default()).expect("default world"));
    let vocab = Arc::new(Vocab::standard());
    let spec = TaskSpec::new(&world, Regime::FastMapping, 3, 30).expect("default task");
    let agent = Agent::new(AgentConfig::new(arch, world.dim(), vocab.len()), 0).expect("default agent");
    let actors = (0..actors as u64)
        .map(|i| {
            let (env, obs) = Env::new(world.clone(), vocab.clone(), spec.clone(), i).expect("env");
            Actor::new(Box::new(env), obs, agent.init_state(), i)
        })
        .collect();
    Learner::new(agent, actors, TrainConfig { unroll, ..TrainConfig::default() }).expect("learner")
}
