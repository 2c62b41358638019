//! V-trace actor-critic training with entropy regularisation,
//! observation reconstruction and novelty-augmented rewards.
//!
//! Actors and learner run in one thread. A rollout is recorded on a single
//! tape whose parameters are the snapshot the actors acted with, so the
//! learner differentiates the acting pass directly; [`replay`] rebuilds the
//! same pass from stored initial states.

pub mod bandit;
mod metrics;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use metrics::{MetricsWriter, METRICS_HEADER};

use crate::agent::{act, Agent, AgentError, AgentState, StepOutput};
use crate::encdec::LanguageCache;
use crate::envsim::{EnvError, Environment, Observation, Regime};
use crate::numerics::{log_sum_exp, AdamConfig, AdamState, NumericsError, Real, Tape, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum LearnerError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("learner: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub policy: Real,
    pub entropy: Real,
    pub recon: Real,
    /// Weight of the squared error between value and V-trace target.
    pub ret: Real,
    pub discount: Real,
    pub rho_clip: Real,
    pub c_clip: Real,
    pub lambda_lang: Real,
    pub lambda_im: Real,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            policy: 0.1,
            entropy: 1e-4,
            recon: 1.0,
            ret: 0.5,
            discount: 0.95,
            rho_clip: 1.0,
            c_clip: 1.0,
            lambda_lang: 1e-3,
            lambda_im: 3e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let all = [self.policy, self.entropy, self.recon, self.ret, self.discount, self.rho_clip, self.c_clip, self.lambda_lang, self.lambda_im];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(LearnerError::Config("loss weights must be finite and non-negative".into()));
        }
        if self.discount > 1.0 {
            return Err(LearnerError::Config("discount must not exceed 1".into()));
        }
        Ok(())
    }
}

pub fn combine_rewards(ext: Real, ngu_lang: Real, ngu_im: Real, w: &LossWeights) -> Real {
    ext + w.lambda_lang * ngu_lang + w.lambda_im * ngu_im
}

#[derive(Clone, Debug, PartialEq)]
pub struct VTrace {
    pub vs: Vec<Real>,
    pub advantages: Vec<Real>,
}

/// V-trace targets for one trajectory. `discounts[s]` is zero where the
/// episode ended after step `s`; `bootstrap` is the value of the state
/// following the last step.
#[allow(clippy::too_many_arguments)]
pub fn vtrace(
    behavior_logp: &[Real],
    target_logp: &[Real],
    rewards: &[Real],
    discounts: &[Real],
    values: &[Real],
    bootstrap: Real,
    rho_clip: Real,
    c_clip: Real,
) -> Result<VTrace, LearnerError> {
    let n = rewards.len();
    if [behavior_logp.len(), target_logp.len(), discounts.len(), values.len()].iter().any(|&l| l != n) {
        return Err(LearnerError::Config("vtrace inputs differ in length".into()));
    }
    let ratio: Vec<Real> = target_logp.iter().zip(behavior_logp).map(|(t, b)| (t - b).exp()).collect();
    let mut vs = vec![0.0; n];
    let mut next_vs = bootstrap;
    let mut next_v = bootstrap;
    for s in (0..n).rev() {
        let rho = ratio[s].min(rho_clip);
        let c = ratio[s].min(c_clip);
        let delta = rho * (rewards[s] + discounts[s] * next_v - values[s]);
        vs[s] = values[s] + delta + discounts[s] * c * (next_vs - next_v);
        next_vs = vs[s];
        next_v = values[s];
    }
    let advantages = (0..n)
        .map(|s| {
            let next = if s + 1 < n { vs[s + 1] } else { bootstrap };
            ratio[s].min(rho_clip) * (rewards[s] + discounts[s] * next - values[s])
        })
        .collect();
    Ok(VTrace { vs, advantages })
}

/// One actor's share of a rollout.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Actor state before the first step, detached from any tape.
    pub initial: AgentState,
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub behavior_logits: Vec<Vec<Real>>,
    pub rewards: Vec<Real>,
    pub ngu_lang: Vec<Real>,
    pub ngu_im: Vec<Real>,
    /// The episode ended with this step; the state was reset after it.
    pub dones: Vec<bool>,
    pub bootstrap_value: Real,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn combined_rewards(&self, w: &LossWeights) -> Vec<Real> {
        (0..self.len()).map(|t| combine_rewards(self.rewards[t], self.ngu_lang[t], self.ngu_im[t], w)).collect()
    }

    pub fn discounts(&self, gamma: Real) -> Vec<Real> {
        self.dones.iter().map(|&d| if d { 0.0 } else { gamma }).collect()
    }
}

/// A finished episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStat {
    pub regime: Regime,
    /// Extrinsic return.
    pub ret: Real,
    pub success: bool,
    pub length: usize,
    /// Memory writes made during the episode.
    pub writes: usize,
    /// Steps whose tokens differ from the previous step's (the first step counts).
    pub language_changes: usize,
}

pub struct Actor {
    pub env: Box<dyn Environment>,
    pub obs: Observation,
    pub state: AgentState,
    pub rng: ChaCha8Rng,
    episode_return: Real,
    episode_length: usize,
    episode_writes: usize,
    language_changes: usize,
    last_tokens: Option<Vec<usize>>,
}

impl Actor {
    pub fn new(env: Box<dyn Environment>, first: Observation, state: AgentState, seed: u64) -> Self {
        Self {
            env,
            obs: first,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            episode_return: 0.0,
            episode_length: 0,
            episode_writes: 0,
            language_changes: 0,
            last_tokens: None,
        }
    }
}

pub struct Rollout {
    pub tape: Tape,
    pub steps: Vec<StepOutput>,
    pub trajectories: Vec<Trajectory>,
    pub episodes: Vec<EpisodeStat>,
}

/// Runs every actor for `unroll` steps on one tape. Finished episodes are
/// reset in place. The bootstrap value comes from an extra step on the
/// final observations whose side effects are discarded.
pub fn collect_rollout(agent: &Agent, actors: &mut [Actor], unroll: usize) -> Result<Rollout, LearnerError> {
    let b = actors.len();
    if b == 0 || unroll == 0 {
        return Err(LearnerError::Config("rollout needs at least one actor and one step".into()));
    }
    let mut tape = Tape::with_params(agent.params.clone());
    let mut cache = LanguageCache::default();
    let mut states: Vec<AgentState> = actors.iter().map(|a| a.state.clone()).collect();
    for s in &mut states {
        s.memory.detach();
    }
    let mut trajectories: Vec<Trajectory> = states
        .iter()
        .map(|s| Trajectory {
            initial: s.clone(),
            observations: Vec::with_capacity(unroll),
            actions: Vec::with_capacity(unroll),
            behavior_logits: Vec::with_capacity(unroll),
            rewards: Vec::with_capacity(unroll),
            ngu_lang: Vec::with_capacity(unroll),
            ngu_im: Vec::with_capacity(unroll),
            dones: Vec::with_capacity(unroll),
            bootstrap_value: 0.0,
        })
        .collect();
    let mut carry = agent.load_carry(&mut tape, &states)?;
    let mut steps = Vec::with_capacity(unroll);
    let mut episodes = Vec::new();
    for _ in 0..unroll {
        let obs: Vec<&Observation> = actors.iter().map(|a| &a.obs).collect();
        let out = agent.step_batch(&mut tape, &mut cache, &mut carry, &mut states, &obs)?;
        for (i, actor) in actors.iter_mut().enumerate() {
            let logits = tape.value(out.logits).row(i).to_vec();
            let a = act(&logits, &mut actor.rng, false)?;
            let next = actor.env.step(a)?;
            if actor.last_tokens.as_ref() != Some(&actor.obs.tokens) {
                actor.language_changes += 1;
                actor.last_tokens = Some(actor.obs.tokens.clone());
            }
            actor.episode_writes += usize::from(out.wrote[i]);
            let tr = &mut trajectories[i];
            tr.observations.push(std::mem::replace(&mut actor.obs, next.clone()));
            tr.actions.push(a);
            tr.behavior_logits.push(logits);
            tr.rewards.push(next.reward);
            tr.ngu_lang.push(out.ngu[i].0);
            tr.ngu_im.push(out.ngu[i].1);
            tr.dones.push(next.done);
            actor.episode_return += next.reward;
            actor.episode_length += 1;
            if next.done {
                episodes.push(EpisodeStat {
                    regime: next.info.regime,
                    ret: actor.episode_return,
                    success: next.info.success == Some(true),
                    length: actor.episode_length,
                    writes: actor.episode_writes,
                    language_changes: actor.language_changes,
                });
                actor.episode_return = 0.0;
                actor.episode_length = 0;
                actor.episode_writes = 0;
                actor.language_changes = 0;
                actor.last_tokens = None;
                actor.obs = actor.env.reset()?;
                states[i].reset();
            }
        }
        steps.push(out);
    }
    let snapshot = states.clone();
    let obs: Vec<&Observation> = actors.iter().map(|a| &a.obs).collect();
    let mut probe = carry;
    let boot = agent.step_batch(&mut tape, &mut cache, &mut probe, &mut states, &obs)?;
    for (i, tr) in trajectories.iter_mut().enumerate() {
        tr.bootstrap_value = tape.value(boot.value).get(i, 0);
    }
    states = snapshot;
    agent.store_carry(&tape, &carry, &mut states);
    for (actor, s) in actors.iter_mut().zip(states) {
        actor.state = s;
    }
    Ok(Rollout { tape, steps, trajectories, episodes })
}

/// Re-runs the recorded unroll on `tape` from the stored initial states.
pub fn replay(agent: &Agent, tape: &mut Tape, trajectories: &[Trajectory]) -> Result<Vec<StepOutput>, LearnerError> {
    let n = trajectories.first().map_or(0, Trajectory::len);
    if trajectories.iter().any(|t| t.len() != n || t.observations.len() != n) {
        return Err(LearnerError::Config("trajectories differ in length".into()));
    }
    let mut cache = LanguageCache::default();
    let mut states: Vec<AgentState> = trajectories.iter().map(|t| t.initial.clone()).collect();
    let mut carry = agent.load_carry(tape, &states)?;
    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        let obs: Vec<&Observation> = trajectories.iter().map(|tr| &tr.observations[t]).collect();
        steps.push(agent.step_batch(tape, &mut cache, &mut carry, &mut states, &obs)?);
        for (s, tr) in states.iter_mut().zip(trajectories) {
            if tr.dones[t] {
                s.reset();
            }
        }
    }
    Ok(steps)
}

/// V-trace targets for every `(t, b)`, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub vs: Vec<Real>,
    pub advantages: Vec<Real>,
}

fn log_prob(logits: &[Real], a: usize) -> Real {
    logits[a] - log_sum_exp(logits)
}

/// Targets from the current values and policy recorded in `steps`.
pub fn compute_targets(tape: &Tape, steps: &[StepOutput], trajectories: &[Trajectory], w: &LossWeights) -> Result<Targets, LearnerError> {
    let (n, b) = (steps.len(), trajectories.len());
    let mut vs = vec![0.0; n * b];
    let mut adv = vec![0.0; n * b];
    for (i, tr) in trajectories.iter().enumerate() {
        if tr.len() != n {
            return Err(LearnerError::Config("trajectory length differs from the unroll".into()));
        }
        let target: Vec<Real> = (0..n).map(|t| log_prob(tape.value(steps[t].logits).row(i), tr.actions[t])).collect();
        let behavior: Vec<Real> = (0..n).map(|t| log_prob(&tr.behavior_logits[t], tr.actions[t])).collect();
        let values: Vec<Real> = (0..n).map(|t| tape.value(steps[t].value).get(i, 0)).collect();
        let v = vtrace(
            &behavior,
            &target,
            &tr.combined_rewards(w),
            &tr.discounts(w.discount),
            &values,
            tr.bootstrap_value,
            w.rho_clip,
            w.c_clip,
        )?;
        for t in 0..n {
            vs[t * b + i] = v.vs[t];
            adv[t * b + i] = v.advantages[t];
        }
    }
    Ok(Targets { vs, advantages: adv })
}

/// Per-sample means of the loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossMetrics {
    pub total: Real,
    /// `-mean(log pi(a|s) * advantage)`.
    pub policy: Real,
    /// `mean((v_s - V)^2)`.
    pub value: Real,
    /// Mean policy entropy.
    pub entropy: Real,
    /// Mean of vision plus language reconstruction losses.
    pub recon: Real,
}

fn stack(tape: &mut Tape, vars: &[Var], rows: usize) -> Result<Var, NumericsError> {
    let cols = tape.value(vars[0]).cols();
    let refs: Vec<(Var, usize)> = vars.iter().flat_map(|&v| (0..rows).map(move |r| (v, r))).collect();
    tape.gather_rows(&refs, cols)
}

/// Weighted sum of the policy, value, entropy and reconstruction terms,
/// each averaged over all `T x B` samples.
pub fn total_loss(
    agent: &Agent,
    tape: &mut Tape,
    steps: &[StepOutput],
    trajectories: &[Trajectory],
    targets: &Targets,
    w: &LossWeights,
) -> Result<(Var, LossMetrics), LearnerError> {
    let (n, b) = (steps.len(), trajectories.len());
    let count = n * b;
    if count == 0 || targets.vs.len() != count || targets.advantages.len() != count {
        return Err(LearnerError::Config("targets do not match the unroll".into()));
    }
    let inv = 1.0 / count as Real;
    let logits = stack(tape, &steps.iter().map(|s| s.logits).collect::<Vec<_>>(), b)?;
    let actions: Vec<usize> = (0..n).flat_map(|t| trajectories.iter().map(move |tr| tr.actions[t])).collect();
    let logp = tape.log_softmax_rows(logits)?;
    let picked = tape.pick_cols(logp, &actions)?;
    let adv = tape.constant(Tensor::new(count, 1, targets.advantages.clone())?);
    let weighted = tape.mul(picked, adv)?;
    let pg = tape.sum(weighted);
    let policy = tape.scale(pg, -inv);

    let probs = tape.softmax_rows(logits)?;
    let plogp = tape.mul(probs, logp)?;
    let neg_ent = tape.sum(plogp);
    let neg_entropy = tape.scale(neg_ent, inv);

    let values = stack(tape, &steps.iter().map(|s| s.value).collect::<Vec<_>>(), b)?;
    let vs = tape.constant(Tensor::new(count, 1, targets.vs.clone())?);
    let diff = tape.sub(values, vs)?;
    let sq = tape.mul(diff, diff)?;
    let sse = tape.sum(sq);
    let value = tape.scale(sse, inv);

    let mut parts = vec![tape.scale(policy, w.policy), tape.scale(value, w.ret), tape.scale(neg_entropy, w.entropy)];
    let mut recon_value = 0.0;
    if w.recon > 0.0 {
        let latents = stack(tape, &steps.iter().map(|s| s.recon_latent).collect::<Vec<_>>(), b)?;
        let dim = agent.config.encdec.vision_dim;
        let vision: Vec<Real> = (0..n).flat_map(|t| trajectories.iter().flat_map(move |tr| tr.observations[t].vision.iter().copied())).collect();
        let tokens: Vec<Vec<usize>> = (0..n).flat_map(|t| trajectories.iter().map(move |tr| tr.observations[t].tokens.clone())).collect();
        let (_, lv) = agent.net.decoders.vision.loss(tape, latents, &Tensor::new(count, dim, vision)?)?;
        let (_, ll) = agent.net.decoders.language.loss(tape, latents, &tokens)?;
        let both = tape.add(lv, ll)?;
        let recon = tape.scale(both, inv);
        recon_value = tape.value(recon).item();
        parts.push(tape.scale(recon, w.recon));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p)?;
    }
    let metrics = LossMetrics {
        total: tape.value(total).item(),
        policy: tape.value(policy).item(),
        value: tape.value(value).item(),
        entropy: -tape.value(neg_entropy).item(),
        recon: recon_value,
    };
    if !metrics.total.is_finite() {
        return Err(NumericsError::NonFinite("total loss".into()).into());
    }
    Ok((total, metrics))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub unroll: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub grad_clip: Real,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { unroll: 64, weights: LossWeights::default(), adam: AdamConfig::default(), grad_clip: 1.0 }
    }
}

/// What one update did.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainMetrics {
    pub step: u64,
    pub env_steps: u64,
    /// Success rate over episodes finished in this rollout; `None` if none
    /// finished.
    pub accuracy: Option<Real>,
    pub mean_return: Option<Real>,
    pub episodes: Vec<EpisodeStat>,
    pub loss: LossMetrics,
    pub ngu_lang: Real,
    pub ngu_im: Real,
    pub grad_norm: Real,
    /// The update was rejected because of non-finite gradients.
    pub skipped: bool,
}

pub struct Learner {
    pub agent: Agent,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub actors: Vec<Actor>,
    pub step: u64,
    pub env_steps: u64,
}

impl Learner {
    pub fn new(agent: Agent, actors: Vec<Actor>, config: TrainConfig) -> Result<Self, LearnerError> {
        config.weights.validate()?;
        if actors.is_empty() || config.unroll == 0 {
            return Err(LearnerError::Config("need at least one actor and a positive unroll".into()));
        }
        let adam = AdamState::new(config.adam, &agent.params);
        Ok(Self { agent, adam, config, actors, step: 0, env_steps: 0 })
    }

    /// Collect one rollout and apply one Adam update.
    pub fn train_step(&mut self) -> Result<TrainMetrics, LearnerError> {
        let w = self.config.weights;
        let Rollout { mut tape, steps, trajectories, episodes } = collect_rollout(&self.agent, &mut self.actors, self.config.unroll)?;
        let targets = compute_targets(&tape, &steps, &trajectories, &w)?;
        let (loss, lm) = total_loss(&self.agent, &mut tape, &steps, &trajectories, &targets, &w)?;
        let grads = tape.backward(loss)?;
        drop(tape);
        let mut g = self.agent.params.zeros_like();
        grads.accumulate_into(&mut g);
        let n = (steps.len() * trajectories.len()) as Real;
        let ngu_lang = trajectories.iter().flat_map(|t| &t.ngu_lang).sum::<Real>() / n;
        let ngu_im = trajectories.iter().flat_map(|t| &t.ngu_im).sum::<Real>() / n;
        let skipped = !g.is_finite();
        let grad_norm = if skipped { Real::NAN } else { g.clip_global_norm(self.config.grad_clip) };
        if !skipped {
            self.adam.step(Arc::make_mut(&mut self.agent.params), &g)?;
        }
        self.step += 1;
        self.env_steps += n as u64;
        let k = episodes.len();
        Ok(TrainMetrics {
            step: self.step,
            env_steps: self.env_steps,
            accuracy: (k > 0).then(|| episodes.iter().filter(|e| e.success).count() as Real / k as Real),
            mean_return: (k > 0).then(|| episodes.iter().map(|e| e.ret).sum::<Real>() / k as Real),
            episodes,
            loss: lm,
            ngu_lang,
            ngu_im,
            grad_norm,
            skipped,
        })
    }
}
