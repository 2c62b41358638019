//! Privileged scripted policies used as task-solvability oracles and as
//! chance-level baselines.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::episode::{Cell, Env, EpisodeState};
use super::vocab::{Fixture, Vocab};
use super::world::{World, BED};
use super::{Action, Dir, EnvError, Phase, TaskSpec};
use crate::numerics::Real;

pub trait ScriptedPolicy {
    /// Chooses an action with full access to the episode state.
    fn act(&mut self, state: &EpisodeState, rng: &mut ChaCha8Rng) -> usize;

    /// Called at the start of every episode.
    fn reset(&mut self) {}
}

/// Visits every object in discovery, then carries out the instruction.
#[derive(Clone, Debug, Default)]
pub struct OraclePolicy;

/// Visits every object in discovery, then acts on a uniformly chosen
/// object regardless of the instruction.
#[derive(Clone, Debug, Default)]
pub struct RandomSelectionPolicy {
    choice: Option<usize>,
}

impl ScriptedPolicy for OraclePolicy {
    fn act(&mut self, state: &EpisodeState, _rng: &mut ChaCha8Rng) -> usize {
        scripted_action(state, state.target).index()
    }
}

impl ScriptedPolicy for RandomSelectionPolicy {
    fn act(&mut self, state: &EpisodeState, rng: &mut ChaCha8Rng) -> usize {
        if state.phase == Phase::Discovery {
            self.choice = None;
            return scripted_action(state, state.target).index();
        }
        let choice = *self.choice.get_or_insert_with(|| {
            let present: Vec<usize> = (0..state.n_task).filter(|&i| state.objects[i].cell.is_some()).collect();
            present[rng.random_range(0..present.len())]
        });
        scripted_action(state, choice).index()
    }

    fn reset(&mut self) {
        self.choice = None;
    }
}

/// The action that makes progress toward acting on task object `chosen`.
fn scripted_action(s: &EpisodeState, chosen: usize) -> Action {
    match s.phase {
        Phase::Discovery if s.is_corridor() => Action::Move(Dir::East),
        Phase::Discovery => match (0..s.n_task).find(|&i| !s.visited[i]) {
            Some(i) if s.facing_object() == Some(i) => Action::Fixate,
            Some(i) => approach(s, i),
            None => Action::Noop,
        },
        Phase::Instruction if s.is_corridor() => approach(s, chosen),
        Phase::Instruction => match s.carrying {
            Some(_) => {
                let want = if s.target_fixture == Some(Fixture::Bed) { BED } else { super::world::BOX };
                let f = (s.n_task..s.objects.len()).find(|&j| s.objects[j].shown == want).expect("put episode has fixtures");
                if s.facing_object() == Some(f) {
                    Action::Put
                } else {
                    approach(s, f)
                }
            }
            None if s.facing_object() == Some(chosen) => Action::Lift,
            None => approach(s, chosen),
        },
        Phase::Done => Action::Noop,
    }
}

/// Next move along a shortest path to a cell next to object `i`, or a turn
/// toward it once adjacent. Moving into an occupied cell only turns.
fn approach(s: &EpisodeState, i: usize) -> Action {
    let goal = s.objects[i].cell.expect("object is placed");
    let adjacent = |c: Cell| Dir::ALL.into_iter().find(|&d| c.offset(d, s.rows, s.cols) == Some(goal));
    if let Some(d) = adjacent(s.agent) {
        return Action::Move(d);
    }
    let idx = |c: Cell| c.row * s.cols + c.col;
    let mut first: Vec<Option<Dir>> = vec![None; s.rows * s.cols];
    let mut seen = vec![false; s.rows * s.cols];
    seen[idx(s.agent)] = true;
    let mut queue = VecDeque::from([s.agent]);
    while let Some(c) = queue.pop_front() {
        for d in Dir::ALL {
            let Some(n) = c.offset(d, s.rows, s.cols) else { continue };
            if seen[idx(n)] || s.occupant(n).is_some() {
                continue;
            }
            seen[idx(n)] = true;
            first[idx(n)] = first[idx(c)].or(Some(d));
            if adjacent(n).is_some() {
                return Action::Move(first[idx(n)].expect("set above"));
            }
            queue.push_back(n);
        }
    }
    Action::Noop
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScriptedStats {
    pub episodes: usize,
    pub successes: usize,
    pub mean_return: Real,
    pub max_length: usize,
}

impl ScriptedStats {
    pub fn accuracy(&self) -> Real {
        self.successes as Real / self.episodes.max(1) as Real
    }
}

/// Runs `episodes` complete episodes of a scripted policy.
pub fn run_scripted(
    world: Arc<World>,
    vocab: Arc<Vocab>,
    spec: TaskSpec,
    policy: &mut dyn ScriptedPolicy,
    episodes: usize,
    seed: u64,
) -> Result<ScriptedStats, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (mut env, _) = Env::new(world, vocab, spec, seed)?;
    let mut stats = ScriptedStats::default();
    let mut total = 0.0;
    for e in 0..episodes {
        if e > 0 {
            env.reset()?;
        }
        policy.reset();
        loop {
            let a = policy.act(env.state(), &mut rng);
            let obs = env.step(a)?;
            if obs.done {
                stats.successes += usize::from(obs.info.success == Some(true));
                break;
            }
        }
        total += env.state().total_reward;
        stats.max_length = stats.max_length.max(env.state().step);
        stats.episodes += 1;
    }
    stats.mean_return = total / episodes.max(1) as Real;
    Ok(stats)
}
