use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{emit_language, Fixture, LanguageEvent, Vocab, NONSENSE_WORDS};
use super::world::{World, BED, BOX};
use super::{Action, Dir, EnvError, Observation, Phase, Regime, StepInfo, TaskSpec};
use crate::numerics::Real;

const SHAPING_REWARD: Real = 0.1;
const SUCCESS_REWARD: Real = 1.0;
const CORRIDOR_ROOM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn offset(self, dir: Dir, rows: usize, cols: usize) -> Option<Cell> {
        let (dr, dc) = dir.delta();
        let r = self.row.checked_add_signed(dr)?;
        let c = self.col.checked_add_signed(dc)?;
        (r < rows && c < cols).then_some(Cell::new(r, c))
    }
}

/// An object in the episode. `shown` is the exemplar rendered during
/// discovery and `instructed` the one rendered afterwards; they differ only
/// in category-extension episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Placed {
    pub shown: usize,
    pub instructed: usize,
    pub name: usize,
    pub cell: Option<Cell>,
    pub movable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub seed: u64,
    pub regime: Regime,
    pub phase: Phase,
    pub rows: usize,
    pub cols: usize,
    pub agent: Cell,
    pub facing: Dir,
    /// Task objects first, then any fixtures.
    pub objects: Vec<Placed>,
    pub n_task: usize,
    pub visited: Vec<bool>,
    pub step: usize,
    pub phase_step: usize,
    pub naming: Vec<usize>,
    pub naming_left: usize,
    /// Corridor objects collected but still visible during their naming window.
    pub vanishing: Vec<usize>,
    pub instruction: Vec<usize>,
    pub target: usize,
    pub target_fixture: Option<Fixture>,
    pub carrying: Option<usize>,
    pub lift: Option<(usize, usize)>,
    pub total_reward: Real,
    pub success: Option<bool>,
    naming_steps: usize,
    lift_steps: usize,
    discovery_steps: usize,
    instruction_steps: usize,
    shaping: bool,
    room: usize,
    rng: ChaCha8Rng,
}

impl EpisodeState {
    pub fn reset(world: &World, vocab: &Vocab, spec: &TaskSpec, seed: u64) -> Result<(Self, Observation), EnvError> {
        spec.validate(world)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let regime = *spec.regimes.choose(&mut rng).expect("validated");
        let n = *spec.n_objects.choose(&mut rng).expect("validated");
        let categories: Vec<usize> = spec.categories().choose_multiple(&mut rng, n).copied().collect();
        let words: Vec<&str> = if regime.fresh_names() {
            NONSENSE_WORDS.choose_multiple(&mut rng, n).copied().collect()
        } else {
            categories.iter().map(|&c| world.object(world.exemplar(c, 0)).name.as_str()).collect()
        };
        let mut objects = Vec::with_capacity(n + 2);
        for (&c, w) in categories.iter().zip(&words) {
            let (shown, instructed) = if regime == Regime::CategoryExtension {
                let picks: Vec<usize> = (0..world.exemplars()).collect::<Vec<_>>().choose_multiple(&mut rng, 2).copied().collect();
                (world.exemplar(c, picks[0]), world.exemplar(c, picks[1]))
            } else {
                (world.exemplar(c, 0), world.exemplar(c, 0))
            };
            objects.push(Placed { shown, instructed, name: vocab.id(w)?, cell: None, movable: true });
        }
        let target = rng.random_range(0..n);
        let target_fixture = regime.is_put().then(|| if rng.random_bool(0.5) { Fixture::Bed } else { Fixture::Box });
        if regime.is_put() {
            for (id, w) in [(BED, "bed"), (BOX, "box")] {
                objects.push(Placed { shown: id, instructed: id, name: vocab.id(w)?, cell: None, movable: false });
            }
        }
        let word = vocab.word(objects[target].name)?.to_string();
        let instruction = match target_fixture {
            Some(f) => emit_language(vocab, LanguageEvent::Put(&word, f))?,
            None => emit_language(vocab, LanguageEvent::Lift(&word))?,
        };
        let mut state = Self {
            seed,
            regime,
            phase: Phase::Discovery,
            rows: spec.room,
            cols: spec.room,
            agent: Cell::new(0, 0),
            facing: Dir::North,
            objects,
            n_task: n,
            visited: vec![false; n],
            step: 0,
            phase_step: 0,
            naming: Vec::new(),
            naming_left: 0,
            vanishing: Vec::new(),
            instruction,
            target,
            target_fixture,
            carrying: None,
            lift: None,
            total_reward: 0.0,
            success: None,
            naming_steps: spec.naming_steps,
            lift_steps: spec.lift_steps,
            discovery_steps: spec.discovery_steps,
            instruction_steps: spec.instruction_steps,
            shaping: spec.shaping,
            room: spec.room,
            rng,
        };
        if regime == Regime::Corridor {
            state.layout_corridor();
        } else {
            let all: Vec<usize> = (0..state.objects.len()).collect();
            state.scatter(&all)?;
        }
        let obs = state.observe(world, 0.0, Vec::new());
        Ok((state, obs))
    }

    pub fn is_corridor(&self) -> bool {
        self.regime == Regime::Corridor
    }

    /// Object id currently rendered for placed object `i`.
    pub fn appearance(&self, i: usize) -> usize {
        let o = &self.objects[i];
        if self.phase == Phase::Discovery {
            o.shown
        } else {
            o.instructed
        }
    }

    pub fn target_object(&self) -> usize {
        self.objects[self.target].instructed
    }

    pub fn occupant(&self, cell: Cell) -> Option<usize> {
        self.objects.iter().position(|o| o.cell == Some(cell))
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        cell != self.agent && self.occupant(cell).is_none()
    }

    /// The object directly in front of the agent.
    pub fn facing_object(&self) -> Option<usize> {
        self.agent.offset(self.facing, self.rows, self.cols).and_then(|c| self.occupant(c))
    }

    /// First object along the gaze ray and its distance in cells.
    pub fn gaze(&self) -> Option<(usize, usize)> {
        let mut cell = self.agent;
        for d in 1.. {
            cell = cell.offset(self.facing, self.rows, self.cols)?;
            if let Some(i) = self.occupant(cell) {
                return Some((i, d));
            }
        }
        None
    }

    pub fn render_vision(&mut self, world: &World) -> Vec<Real> {
        match self.gaze() {
            Some((i, d)) => {
                let id = self.appearance(i);
                world.render(id, self.facing, d, Some(&mut self.rng))
            }
            None => vec![0.0; world.dim()],
        }
    }

    pub fn step(&mut self, world: &World, vocab: &Vocab, action: usize) -> Result<Observation, EnvError> {
        if self.phase == Phase::Done {
            return Err(EnvError::EpisodeDone);
        }
        let action = Action::from_index(action)?;
        let mut reward = 0.0;
        if action != Action::Lift {
            self.lift = None;
        }
        match action {
            Action::Move(dir) => {
                self.facing = dir;
                if let Some(next) = self.agent.offset(dir, self.rows, self.cols) {
                    match self.occupant(next) {
                        None => self.agent = next,
                        Some(i) if self.is_corridor() => reward += self.bump(vocab, i)?,
                        Some(_) => {}
                    }
                }
            }
            Action::RotateLeft => self.facing = self.facing.left(),
            Action::RotateRight => self.facing = self.facing.right(),
            Action::Fixate => {
                if self.phase == Phase::Discovery && !self.is_corridor() {
                    if let Some(i) = self.facing_object() {
                        reward += self.name_object(vocab, i)?;
                    }
                }
            }
            Action::Lift => {
                if self.phase == Phase::Instruction && !self.is_corridor() && self.carrying.is_none() {
                    reward += self.lift_step();
                } else {
                    self.lift = None;
                }
            }
            Action::Put => {
                if let (Some(i), Some(f)) = (self.carrying, self.facing_object()) {
                    if !self.objects[f].movable {
                        let fixture = if self.objects[f].shown == BED { Fixture::Bed } else { Fixture::Box };
                        let ok = i == self.target && Some(fixture) == self.target_fixture;
                        reward += self.finish(ok);
                    }
                }
            }
            Action::Noop => {}
        }
        self.step += 1;
        self.phase_step += 1;

        if self.phase == Phase::Discovery {
            if self.naming_left == 0 {
                for i in std::mem::take(&mut self.vanishing) {
                    self.objects[i].cell = None;
                }
            }
            let named_all = self.visited.iter().all(|&v| v) && self.naming_left == 0;
            if named_all || self.phase_step >= self.discovery_steps {
                self.begin_instruction()?;
            }
        } else if self.phase == Phase::Instruction && self.phase_step >= self.instruction_steps {
            reward += self.finish(false);
        }

        let tokens = match self.phase {
            Phase::Discovery if self.naming_left > 0 => {
                self.naming_left -= 1;
                self.naming.clone()
            }
            Phase::Discovery => Vec::new(),
            Phase::Instruction | Phase::Done => self.instruction.clone(),
        };
        self.total_reward += reward;
        Ok(self.observe(world, reward, tokens))
    }

    fn observe(&mut self, world: &World, reward: Real, tokens: Vec<usize>) -> Observation {
        let vision = self.render_vision(world);
        Observation {
            vision,
            tokens,
            reward,
            done: self.phase == Phase::Done,
            info: StepInfo { phase: self.phase, regime: self.regime, target: self.target_object(), success: self.success },
        }
    }

    fn name_object(&mut self, vocab: &Vocab, i: usize) -> Result<Real, EnvError> {
        let word = vocab.word(self.objects[i].name)?.to_string();
        self.naming = emit_language(vocab, LanguageEvent::Naming(&word))?;
        self.naming_left = self.naming_steps;
        if i < self.n_task && !self.visited[i] {
            self.visited[i] = true;
            return Ok(if self.shaping { SHAPING_REWARD } else { 0.0 });
        }
        Ok(0.0)
    }

    fn lift_step(&mut self) -> Real {
        let Some(i) = self.facing_object().filter(|&i| self.objects[i].movable) else {
            self.lift = None;
            return 0.0;
        };
        let count = match self.lift {
            Some((j, c)) if j == i => c + 1,
            _ => 1,
        };
        if count < self.lift_steps {
            self.lift = Some((i, count));
            return 0.0;
        }
        self.lift = None;
        if self.target_fixture.is_some() && i == self.target {
            self.carrying = Some(i);
            self.objects[i].cell = None;
            0.0
        } else {
            self.finish(i == self.target)
        }
    }

    /// Moving into an object in the corridor collects it during discovery
    /// and selects it during instruction.
    fn bump(&mut self, vocab: &Vocab, i: usize) -> Result<Real, EnvError> {
        match self.phase {
            Phase::Discovery if !self.vanishing.contains(&i) => {
                let r = self.name_object(vocab, i)?;
                self.vanishing.push(i);
                Ok(r)
            }
            Phase::Instruction => Ok(self.finish(i == self.target)),
            _ => Ok(0.0),
        }
    }

    fn finish(&mut self, success: bool) -> Real {
        self.phase = Phase::Done;
        self.success = Some(success);
        self.lift = None;
        if success {
            SUCCESS_REWARD
        } else {
            0.0
        }
    }

    fn begin_instruction(&mut self) -> Result<(), EnvError> {
        self.phase = Phase::Instruction;
        self.phase_step = 0;
        self.naming_left = 0;
        self.naming.clear();
        self.vanishing.clear();
        self.lift = None;
        if self.is_corridor() {
            self.rows = CORRIDOR_ROOM;
            self.cols = CORRIDOR_ROOM;
            for o in &mut self.objects {
                o.cell = None;
            }
            let distractor = loop {
                let d = self.rng.random_range(0..self.n_task);
                if d != self.target {
                    break d;
                }
            };
            let mut pair = [self.target, distractor];
            pair.shuffle(&mut self.rng);
            self.scatter(&pair)
        } else {
            let all: Vec<usize> = (0..self.objects.len()).collect();
            self.scatter(&all)
        }
    }

    fn layout_corridor(&mut self) {
        self.rows = 1;
        self.cols = 2 * self.n_task + 1;
        self.agent = Cell::new(0, 0);
        self.facing = Dir::East;
        for i in 0..self.n_task {
            self.objects[i].cell = Some(Cell::new(0, 2 * i + 2));
        }
    }

    /// Places the agent and the listed objects on distinct random cells such
    /// that every object can be approached from some reachable cell.
    fn scatter(&mut self, which: &[usize]) -> Result<(), EnvError> {
        if !self.is_corridor() {
            self.rows = self.room;
            self.cols = self.room;
        }
        let cells: Vec<Cell> = (0..self.rows).flat_map(|r| (0..self.cols).map(move |c| Cell::new(r, c))).collect();
        if cells.len() < which.len() + 1 {
            return Err(EnvError::RoomTooSmall { rows: self.rows, cols: self.cols, needed: which.len() });
        }
        for _ in 0..1000 {
            let picks: Vec<Cell> = cells.choose_multiple(&mut self.rng, which.len() + 1).copied().collect();
            self.agent = picks[0];
            for (&i, &c) in which.iter().zip(&picks[1..]) {
                self.objects[i].cell = Some(c);
            }
            self.facing = Dir::ALL[self.rng.random_range(0..4)];
            if self.all_reachable(which) {
                return Ok(());
            }
        }
        Err(EnvError::RoomTooSmall { rows: self.rows, cols: self.cols, needed: which.len() })
    }

    fn all_reachable(&self, which: &[usize]) -> bool {
        let seen = self.reachable();
        which.iter().all(|&i| {
            let cell = self.objects[i].cell.expect("placed");
            Dir::ALL
                .iter()
                .filter_map(|&d| cell.offset(d, self.rows, self.cols))
                .any(|c| seen[c.row * self.cols + c.col])
        })
    }

    /// Cells the agent can walk to, as a row-major mask.
    pub fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.rows * self.cols];
        let mut queue = VecDeque::from([self.agent]);
        seen[self.agent.row * self.cols + self.agent.col] = true;
        while let Some(c) = queue.pop_front() {
            for d in Dir::ALL {
                if let Some(n) = c.offset(d, self.rows, self.cols) {
                    let k = n.row * self.cols + n.col;
                    if !seen[k] && self.occupant(n).is_none() {
                        seen[k] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        seen
    }

    pub fn discovery_limit(&self) -> usize {
        self.discovery_steps
    }

    pub fn instruction_limit(&self) -> usize {
        self.instruction_steps
    }
}

/// An environment instance that starts a new seeded episode whenever the
/// current one finishes.
#[derive(Clone, Debug)]
pub struct Env {
    world: Arc<World>,
    vocab: Arc<Vocab>,
    spec: TaskSpec,
    seeds: ChaCha8Rng,
    state: EpisodeState,
}

impl Env {
    pub fn new(world: Arc<World>, vocab: Arc<Vocab>, spec: TaskSpec, seed: u64) -> Result<(Self, Observation), EnvError> {
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let (state, obs) = EpisodeState::reset(&world, &vocab, &spec, seeds.next_u64())?;
        Ok((Self { world, vocab, spec, seeds, state }, obs))
    }

    pub fn step(&mut self, action: usize) -> Result<Observation, EnvError> {
        self.state.step(&self.world, &self.vocab, action)
    }

    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        let (state, obs) = EpisodeState::reset(&self.world, &self.vocab, &self.spec, self.seeds.next_u64())?;
        self.state = state;
        Ok(obs)
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }
}
