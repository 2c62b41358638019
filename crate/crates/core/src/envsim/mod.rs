//! Seeded grid-world simulator for two-phase word-learning episodes.
//!
//! An episode starts with a discovery phase in which the agent wanders a
//! small room and hears the name of each object it fixates. The instruction
//! phase then re-shuffles the room and asks for one of the objects by name.
//! Vision is a low-dimensional code per object, seen along the gaze ray.

mod episode;
mod log;
mod scripted;
mod vocab;
mod world;

use std::fmt;
use std::str::FromStr;

pub use episode::{Cell, Env, EpisodeState, Placed};
pub use log::{EpisodeLogger, LOG_FIELDS};
pub use scripted::{run_scripted, OraclePolicy, RandomSelectionPolicy, ScriptedPolicy};
pub use vocab::{emit_language, Fixture, LanguageEvent, Vocab, HOUSEHOLD_NAMES, NONSENSE_WORDS, PAD};
pub use world::{ObjectDef, World, WorldConfig, BED, BOX};

use crate::numerics::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid action id {0}")]
    InvalidAction(usize),
    #[error("episode is already done")]
    EpisodeDone,
    #[error("unknown word {0}")]
    UnknownWord(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("task spec: {0}")]
    Config(String),
    #[error("room {rows}x{cols} cannot hold {needed} objects and the agent")]
    RoomTooSmall { rows: usize, cols: usize, needed: usize },
}

pub const NUM_ACTIONS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Move(Dir),
    RotateLeft,
    RotateRight,
    Fixate,
    Lift,
    Put,
    Noop,
}

impl Action {
    pub fn from_index(i: usize) -> Result<Self, EnvError> {
        Ok(match i {
            0 => Action::Move(Dir::North),
            1 => Action::Move(Dir::South),
            2 => Action::Move(Dir::East),
            3 => Action::Move(Dir::West),
            4 => Action::RotateLeft,
            5 => Action::RotateRight,
            6 => Action::Fixate,
            7 => Action::Lift,
            8 => Action::Put,
            9 => Action::Noop,
            _ => return Err(EnvError::InvalidAction(i)),
        })
    }

    pub fn index(self) -> usize {
        match self {
            Action::Move(Dir::North) => 0,
            Action::Move(Dir::South) => 1,
            Action::Move(Dir::East) => 2,
            Action::Move(Dir::West) => 3,
            Action::RotateLeft => 4,
            Action::RotateRight => 5,
            Action::Fixate => 6,
            Action::Lift => 7,
            Action::Put => 8,
            Action::Noop => 9,
        }
    }
}

/// Compass direction; row 0 is the northern wall.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dir {
    North,
    East,
    South,
    West,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Dir::North => (-1, 0),
            Dir::East => (0, 1),
            Dir::South => (1, 0),
            Dir::West => (0, -1),
        }
    }

    pub fn left(self) -> Dir {
        Dir::ALL[(self.index() + 3) % 4]
    }

    pub fn right(self) -> Dir {
        Dir::ALL[(self.index() + 1) % 4]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    FastMapping,
    SlowLearning,
    FastPut,
    SlowPut,
    CategoryExtension,
    Corridor,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::FastMapping,
        Regime::SlowLearning,
        Regime::FastPut,
        Regime::SlowPut,
        Regime::CategoryExtension,
        Regime::Corridor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::FastMapping => "fast-mapping",
            Regime::SlowLearning => "slow-learning",
            Regime::FastPut => "fast-put",
            Regime::SlowPut => "slow-put",
            Regime::CategoryExtension => "category-extension",
            Regime::Corridor => "corridor",
        }
    }

    /// Objects get fresh nonsense names each episode.
    pub fn fresh_names(self) -> bool {
        !matches!(self, Regime::SlowLearning | Regime::SlowPut)
    }

    pub fn is_put(self) -> bool {
        matches!(self, Regime::FastPut | Regime::SlowPut)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| EnvError::Config(format!("unknown regime {s}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Discovery,
    Instruction,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Discovery => "discovery",
            Phase::Instruction => "instruction",
            Phase::Done => "done",
        }
    }
}

/// Which categories an episode draws its objects from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Train,
    HeldOut,
}

/// Everything needed to sample episodes. `regimes` and `n_objects` are
/// mixtures; each episode draws one entry of each uniformly.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub regimes: Vec<Regime>,
    pub n_objects: Vec<usize>,
    /// Categories of the global training set G.
    pub train_categories: Vec<usize>,
    /// Held-out categories H.
    pub held_out: Vec<usize>,
    pub pool: Pool,
    pub shaping: bool,
    pub room: usize,
    pub discovery_steps: usize,
    pub instruction_steps: usize,
    pub naming_steps: usize,
    pub lift_steps: usize,
}

impl TaskSpec {
    /// G is the first `g` categories and H the last ten.
    pub fn new(world: &World, regime: Regime, n_objects: usize, g: usize) -> Result<Self, EnvError> {
        let c = world.categories();
        let h = 10.min(c.saturating_sub(g));
        let spec = Self {
            regimes: vec![regime],
            n_objects: vec![n_objects],
            train_categories: (0..g).collect(),
            held_out: (c - h..c).collect(),
            pool: Pool::Train,
            shaping: true,
            room: 7,
            discovery_steps: 90,
            instruction_steps: 60,
            naming_steps: 3,
            lift_steps: 3,
        };
        spec.validate(world)?;
        Ok(spec)
    }

    pub fn categories(&self) -> &[usize] {
        match self.pool {
            Pool::Train => &self.train_categories,
            Pool::HeldOut => &self.held_out,
        }
    }

    pub fn max_objects(&self) -> usize {
        self.n_objects.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self, world: &World) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if self.regimes.is_empty() || self.n_objects.is_empty() {
            return bad("at least one regime and object count required".into());
        }
        if self.train_categories.iter().any(|c| self.held_out.contains(c)) {
            return bad("training and held-out categories overlap".into());
        }
        if let Some(&c) = self.train_categories.iter().chain(&self.held_out).find(|&&c| c >= world.categories()) {
            return bad(format!("category {c} does not exist"));
        }
        let n = self.max_objects();
        if n == 0 || n > self.categories().len() {
            return bad(format!("{n} objects requested from a pool of {}", self.categories().len()));
        }
        if self.regimes.iter().any(|r| r.fresh_names()) && n > NONSENSE_WORDS.len() {
            return bad(format!("{n} objects but only {} nonsense words", NONSENSE_WORDS.len()));
        }
        if self.regimes.contains(&Regime::CategoryExtension) && world.exemplars() < 2 {
            return bad("category extension needs at least two exemplars".into());
        }
        if self.regimes.contains(&Regime::Corridor) && self.n_objects.iter().any(|&k| k < 2) {
            return bad("corridor episodes need at least two objects".into());
        }
        if self.naming_steps == 0 || self.lift_steps == 0 || self.discovery_steps == 0 || self.instruction_steps == 0 {
            return bad("step budgets must be positive".into());
        }
        let fixtures = if self.regimes.iter().any(|r| r.is_put()) { 2 } else { 0 };
        if self.room * self.room < n + fixtures + 1 {
            return Err(EnvError::RoomTooSmall { rows: self.room, cols: self.room, needed: n + fixtures });
        }
        Ok(())
    }
}

/// Anything an actor can drive: the simulator or a test stub.
pub trait Environment: Send {
    fn step(&mut self, action: usize) -> Result<Observation, EnvError>;
    /// Starts the next episode.
    fn reset(&mut self) -> Result<Observation, EnvError>;
}

impl Environment for Env {
    fn step(&mut self, action: usize) -> Result<Observation, EnvError> {
        Env::step(self, action)
    }

    fn reset(&mut self) -> Result<Observation, EnvError> {
        Env::reset(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub phase: Phase,
    pub regime: Regime,
    /// Object id of the instructed object, for evaluation only.
    pub target: usize,
    /// Set once the episode ends: whether the instruction was carried out.
    pub success: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub vision: Vec<Real>,
    pub tokens: Vec<usize>,
    pub reward: Real,
    pub done: bool,
    pub info: StepInfo,
}
