//! APSO-SAC: one PSO run played as a reinforcement-learning episode.
//!
//! Every iteration the agent observes swarm statistics and picks the
//! acceleration coefficients for the next [`pso::step`]; the inertia weight
//! follows the evolutionary factor as in adaptive PSO.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::apso::{adapt_inertia, factor_from_distances, mean_distances, EvolFactor};
use crate::cost::{CostModel, CostTable};
use crate::env::{generate_environment, EnvConfig, Environment, Ranges};
use crate::error::{Error, Result};
use crate::pso::{self, Coefficients, Objective, PsoParams, RunResult, SwarmState};
use crate::rng::{derive_seed, rng_from_seed, streams, Rng};
use crate::sac::{save_checkpoint, Checkpoint, Losses, ReplayBuffer, SacAgent, SacParams, TrainProgress, Transition};

pub const OBS_DIM: usize = 6;

/// Affine map from actions in `[-1, 1]` onto coefficient boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionMapping {
    pub c_min: f64,
    pub c_max: f64,
    /// Inertia box, used when the agent also sets `w`.
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for ActionMapping {
    fn default() -> Self {
        Self {
            c_min: 0.5,
            c_max: 2.5,
            w_min: 0.4,
            w_max: 0.9,
        }
    }
}

fn to_box(a: f64, lo: f64, hi: f64) -> f64 {
    (lo + (a.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo)).clamp(lo, hi)
}

fn from_box(x: f64, lo: f64, hi: f64) -> f64 {
    (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
}

impl ActionMapping {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.c_min && self.c_min < self.c_max && self.c_max.is_finite()) {
            return Err(Error::Config(format!(
                "coefficient box [{}, {}] is empty or invalid",
                self.c_min, self.c_max
            )));
        }
        if !(0.0 <= self.w_min && self.w_min < self.w_max && self.w_max.is_finite()) {
            return Err(Error::Config(format!(
                "inertia box [{}, {}] is empty or invalid",
                self.w_min, self.w_max
            )));
        }
        Ok(())
    }

    pub fn coefficient(&self, a: f64) -> f64 {
        to_box(a, self.c_min, self.c_max)
    }

    pub fn coefficient_inverse(&self, c: f64) -> f64 {
        from_box(c, self.c_min, self.c_max)
    }

    pub fn inertia(&self, a: f64) -> f64 {
        to_box(a, self.w_min, self.w_max)
    }
}

/// Source of the inertia weight during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InertiaSource {
    /// `adapt_inertia(f)` from the current evolutionary factor.
    #[default]
    Adaptive,
    /// A third action component mapped onto `[w_min, w_max]`.
    Agent,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerParams {
    pub pso: PsoParams,
    pub mapping: ActionMapping,
    pub inertia: InertiaSource,
    /// Coefficients reported in the first observation.
    pub c1_init: f64,
    pub c2_init: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        let pso = PsoParams::default();
        Self {
            pso,
            mapping: ActionMapping::default(),
            inertia: InertiaSource::Adaptive,
            c1_init: pso.c1,
            c2_init: pso.c2,
        }
    }
}

impl ControllerParams {
    pub fn act_dim(&self) -> usize {
        match self.inertia {
            InertiaSource::Agent => 3,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pso.validate()?;
        self.mapping.validate()?;
        if let InertiaSource::Fixed(w) = self.inertia {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("fixed inertia must be non-negative, got {w}")));
            }
        }
        for c in [self.c1_init, self.c2_init] {
            if !(self.mapping.c_min..=self.mapping.c_max).contains(&c) {
                return Err(Error::Config(format!(
                    "initial coefficient {c} outside [{}, {}]",
                    self.mapping.c_min, self.mapping.c_max
                )));
            }
        }
        Ok(())
    }

    /// Step coefficients for an action, given the current evolutionary factor.
    pub fn coefficients(&self, action: &[f64], f: EvolFactor) -> Result<Coefficients> {
        if action.len() != self.act_dim() {
            return Err(Error::Contract(format!(
                "action has {} components, controller expects {}",
                action.len(),
                self.act_dim()
            )));
        }
        if action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            return Err(Error::Contract(format!("action {action:?} outside [-1, 1]")));
        }
        let w = match self.inertia {
            InertiaSource::Adaptive => adapt_inertia(f),
            InertiaSource::Agent => self.mapping.inertia(action[2]),
            InertiaSource::Fixed(w) => w,
        };
        Ok(Coefficients {
            w,
            c1: self.mapping.coefficient(action[0]),
            c2: self.mapping.coefficient(action[1]),
        })
    }
}

/// Evolutionary factor, last improvement, diversity, progress, c1, c2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn evol_factor(&self) -> EvolFactor {
        EvolFactor::new(self.0[0])
    }

    pub fn improvement(&self) -> f64 {
        self.0[1]
    }

    pub fn diversity(&self) -> f64 {
        self.0[2]
    }

    pub fn progress(&self) -> f64 {
        self.0[3]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Swarm statistics for the agent. `current` holds the coefficients in use.
pub fn make_observation(
    swarm: &SwarmState,
    prev_best: f64,
    init_best: f64,
    current: Coefficients,
    params: &ControllerParams,
) -> Result<Observation> {
    if !(init_best > 0.0 && init_best.is_finite()) {
        return Err(Error::Domain(format!(
            "initial best cost must be positive and finite, got {init_best}"
        )));
    }
    if swarm.particles.len() < 2 {
        return Err(Error::Contract("observation needs at least two particles".into()));
    }
    let distances = mean_distances(swarm);
    let f = factor_from_distances(&distances, swarm.gbest_index).value();
    let mean_pairwise = distances.iter().sum::<f64>() / distances.len() as f64;
    let scale = swarm.n_servers as f64 * (swarm.n_devices() as f64).sqrt();
    let diversity = (mean_pairwise / scale).clamp(0.0, 1.0);
    let improvement = ((prev_best - swarm.gbest_cost) / init_best).clamp(0.0, 1.0);
    let max_iters = params.pso.max_iters;
    let progress = if max_iters == 0 {
        0.0
    } else {
        (swarm.iteration as f64 / max_iters as f64).min(1.0)
    };
    let m = &params.mapping;
    let obs = Observation([
        f,
        improvement,
        diversity,
        progress,
        m.coefficient_inverse(current.c1),
        m.coefficient_inverse(current.c2),
    ]);
    if !obs.0.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(format!("observation {:?}", obs.0)));
    }
    Ok(obs)
}

/// Relative improvement of the global best over one iteration.
pub fn compute_reward(prev_best: f64, new_best: f64, init_best: f64) -> f64 {
    (prev_best - new_best) / init_best
}

/// Chooses actions and receives the resulting transitions.
pub trait Driver {
    fn act(&mut self, observation: &Observation) -> Result<Vec<f64>>;

    /// Whether [`Driver::record`] needs the final transition's next state.
    fn wants_transitions(&self) -> bool {
        false
    }

    fn record(&mut self, _transition: Transition) -> Result<()> {
        Ok(())
    }
}

/// The agent's deterministic policy.
pub struct Greedy<'a>(pub &'a SacAgent);

impl Driver for Greedy<'_> {
    fn act(&mut self, observation: &Observation) -> Result<Vec<f64>> {
        // Deterministic actions draw no randomness; the generator is unused.
        let mut unused = rng_from_seed(0);
        self.0.select_action(observation.as_slice(), true, &mut unused)
    }
}

/// The same action every iteration.
pub struct FixedAction(pub Vec<f64>);

impl Driver for FixedAction {
    fn act(&mut self, _observation: &Observation) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub observation: Observation,
    pub action: Vec<f64>,
    pub coefficients: Coefficients,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub env_seed: u64,
    pub swarm_seed: u64,
    pub steps: Vec<EpisodeStep>,
    pub init_best: f64,
    pub final_best: f64,
    /// Best cost of fixed-coefficient PSO on the same environment and seed.
    pub baseline_cost: Option<f64>,
}

impl EpisodeRecord {
    pub fn episode_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// `(init_best - final_best) / init_best`, which the rewards sum to.
    pub fn relative_improvement(&self) -> f64 {
        (self.init_best - self.final_best) / self.init_best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub record: EpisodeRecord,
    pub run: RunResult,
    /// Seconds spent computing observations, included in `run.wall_time`.
    pub observation_time: f64,
}

/// Plays one episode on a prepared objective.
pub fn run_episode_on<O: Objective + ?Sized, D: Driver + ?Sized>(
    driver: &mut D,
    objective: &O,
    params: &ControllerParams,
    env_seed: u64,
    swarm_seed: u64,
) -> Result<Episode> {
    params.validate()?;
    let start = Instant::now();
    let mut observation_time = 0.0;
    let mut observe = |swarm: &SwarmState, prev: f64, init: f64, k: Coefficients| {
        let t = Instant::now();
        let obs = make_observation(swarm, prev, init, k, params);
        observation_time += t.elapsed().as_secs_f64();
        obs
    };

    let max_iters = params.pso.max_iters;
    let mut rng = rng_from_seed(swarm_seed);
    let mut swarm = pso::init_swarm(objective, &params.pso, &mut rng)?;
    let init_best = swarm.gbest_cost;
    let mut k = Coefficients {
        w: params.pso.w,
        c1: params.c1_init,
        c2: params.c2_init,
    };
    let mut curve = Vec::with_capacity(max_iters + 1);
    curve.push(init_best);
    let mut steps = Vec::with_capacity(max_iters);
    let mut trace = Vec::with_capacity(max_iters);
    let mut obs = if max_iters > 0 {
        Some(observe(&swarm, init_best, init_best, k)?)
    } else {
        None
    };

    for t in 0..max_iters {
        let current = obs.take().expect("observation for every iteration");
        let action = driver.act(&current)?;
        k = params.coefficients(&action, current.evol_factor())?;
        let before = swarm.gbest_cost;
        pso::step(&mut swarm, k, &params.pso, objective, &mut rng);
        let reward = compute_reward(before, swarm.gbest_cost, init_best);
        let done = t + 1 == max_iters;
        if !done || driver.wants_transitions() {
            let next = observe(&swarm, before, init_best, k)?;
            driver.record(Transition {
                state: current.0.to_vec(),
                action: action.clone(),
                reward,
                next_state: next.0.to_vec(),
                done,
            })?;
            obs = Some(next);
        }
        steps.push(EpisodeStep {
            observation: current,
            action,
            coefficients: k,
            reward,
        });
        trace.push(k);
        curve.push(swarm.gbest_cost);
    }
    let wall_time = start.elapsed().as_secs_f64();
    Ok(Episode {
        record: EpisodeRecord {
            env_seed,
            swarm_seed,
            steps,
            init_best,
            final_best: swarm.gbest_cost,
            baseline_cost: None,
        },
        run: RunResult {
            best_cost: swarm.gbest_cost,
            best_assignment: swarm.best_assignment(),
            curve,
            wall_time,
            coefficient_trace: trace,
        },
        observation_time,
    })
}

/// Deterministic-policy episode on `env` with swarm seed `seed`.
pub fn run_episode(
    agent: &SacAgent,
    env: &Environment,
    model: &CostModel,
    params: &ControllerParams,
    env_seed: u64,
    seed: u64,
) -> Result<Episode> {
    check_agent(agent, params)?;
    let table = CostTable::new(env, model)?;
    run_episode_on(&mut Greedy(agent), &table, params, env_seed, seed)
}

pub fn check_agent(agent: &SacAgent, params: &ControllerParams) -> Result<()> {
    if agent.obs_dim != OBS_DIM || agent.act_dim != params.act_dim() {
        return Err(Error::Contract(format!(
            "agent dimensions ({}, {}) do not match controller ({OBS_DIM}, {})",
            agent.obs_dim,
            agent.act_dim,
            params.act_dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub master_seed: u64,
    pub n_devices: usize,
    pub n_servers: usize,
    pub ranges: Ranges,
    pub cost: CostModel,
    pub controller: ControllerParams,
    pub sac: SacParams,
    /// Multiplier on rewards stored for learning; logged returns are unscaled.
    pub reward_scale: f64,
    /// Evaluate every this many episodes (0 disables periodic evaluation).
    pub eval_every: u64,
    pub eval_episodes: u64,
    /// Write a checkpoint every this many episodes (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            n_devices: 250,
            n_servers: 20,
            ranges: Ranges::default(),
            cost: CostModel::default(),
            controller: ControllerParams::default(),
            sac: SacParams::default(),
            reward_scale: 1.0,
            eval_every: 20,
            eval_episodes: 5,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.controller.validate()?;
        self.sac.validate()?;
        self.cost.validate()?;
        if self.controller.pso.max_iters == 0 {
            return Err(Error::Config("training needs max_iters >= 1".into()));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::Config(format!("reward_scale must be positive, got {}", self.reward_scale)));
        }
        EnvConfig {
            n_devices: self.n_devices,
            n_servers: self.n_servers,
            seed: 0,
            ranges: self.ranges,
        }
        .validate()
    }

    pub fn episodes(&self) -> u64 {
        let per = self.controller.pso.max_iters as u64;
        self.sac.total_train_steps.div_ceil(per)
    }

    pub fn env_config(&self, seed: u64) -> EnvConfig {
        EnvConfig {
            n_devices: self.n_devices,
            n_servers: self.n_servers,
            seed,
            ranges: self.ranges,
        }
    }

    /// Environment and swarm seeds of training episode `e`.
    pub fn train_seeds(&self, e: u64) -> (u64, u64) {
        (
            derive_seed(self.master_seed, streams::TRAIN_ENV, e),
            derive_seed(self.master_seed, streams::TRAIN_SWARM, e),
        )
    }

    /// Environment and swarm seeds of held-out evaluation episode `i`.
    pub fn eval_seeds(&self, i: u64) -> (u64, u64) {
        (
            derive_seed(self.master_seed, streams::EVAL_ENV, i),
            derive_seed(self.master_seed, streams::EVAL_SWARM, i),
        )
    }
}

/// One JSON line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub episode: u64,
    pub env_steps: u64,
    pub updates: u64,
    pub episode_return: f64,
    /// Global best after swarm initialization.
    pub init_best: f64,
    pub best_cost: f64,
    pub baseline_cost: f64,
    /// Percent below fixed-coefficient PSO on the same episode.
    pub improvement_vs_pso: f64,
    pub critic1_loss: Option<f64>,
    pub critic2_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub eval_return: Option<f64>,
    pub eval_improvement_vs_pso: Option<f64>,
    /// Largest `|return - relative improvement|` over evaluation episodes.
    pub eval_return_gap: Option<f64>,
}

#[derive(Default)]
struct LossMeans {
    n: u64,
    critic1: f64,
    critic2: f64,
    actor: f64,
}

impl LossMeans {
    fn add(&mut self, l: &Losses) {
        self.n += 1;
        self.critic1 += l.critic1;
        self.critic2 += l.critic2;
        self.actor += l.actor;
    }

    fn mean(&self, x: f64) -> Option<f64> {
        (self.n > 0).then(|| x / self.n as f64)
    }
}

struct Trainer<'a> {
    agent: &'a mut SacAgent,
    replay: &'a mut ReplayBuffer,
    rng: &'a mut Rng,
    env_steps: &'a mut u64,
    reward_scale: f64,
    losses: LossMeans,
}

impl Driver for Trainer<'_> {
    fn act(&mut self, observation: &Observation) -> Result<Vec<f64>> {
        if *self.env_steps < self.agent.params.warmup_steps {
            Ok((0..self.agent.act_dim)
                .map(|_| self.rng.random_range(-1.0..1.0))
                .collect())
        } else {
            self.agent.select_action(observation.as_slice(), false, self.rng)
        }
    }

    fn wants_transitions(&self) -> bool {
        true
    }

    fn record(&mut self, mut t: Transition) -> Result<()> {
        t.reward *= self.reward_scale;
        self.replay.store(t)?;
        *self.env_steps += 1;
        let p = &self.agent.params;
        if *self.env_steps >= p.warmup_steps
            && self.replay.len() >= p.batch_size
            && *self.env_steps % p.update_every == 0
        {
            for _ in 0..p.update_every {
                let l = self.agent.update_from(self.replay, self.rng)?;
                self.losses.add(&l);
            }
        }
        Ok(())
    }
}

/// Where training writes and resumes.
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub checkpoint_path: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier call.
    pub resume: Option<Checkpoint>,
    pub log: Option<&'a mut dyn Write>,
    /// Stop after this many episodes in total (simulates interruption).
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: SacAgent,
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogEntry>,
    pub episodes: u64,
    pub env_steps: u64,
}

fn baseline_cost(table: &CostTable, params: &ControllerParams, swarm_seed: u64) -> Result<f64> {
    Ok(pso::run_on(table, &params.pso, swarm_seed)?.best_cost)
}

fn percent_below(base: f64, other: f64) -> f64 {
    (base - other) / base * 100.0
}

/// Trains an agent over freshly generated environments, one update per
/// environment step after warmup.
pub fn train(cfg: &TrainConfig, mut opts: TrainOptions<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let metadata = serde_json::to_value(cfg).map_err(|e| Error::json("train config", e))?;
    let act_dim = cfg.controller.act_dim();

    let (mut agent, mut replay, mut rng, mut episode, mut env_steps) = match opts.resume.take() {
        Some(ck) => {
            if ck.metadata.as_ref() != Some(&metadata) {
                return Err(Error::Config(
                    "checkpoint was written by a different training configuration".into(),
                ));
            }
            let agent = ck.agent()?;
            let (Some(rng), Some(progress), Some(replay)) = (&ck.rng, ck.progress, ck.replay.clone()) else {
                return Err(Error::Config("checkpoint holds no resumable training state".into()));
            };
            (agent, replay, rng.restore()?, progress.episodes, progress.env_steps)
        }
        None => {
            let mut rng = rng_from_seed(derive_seed(cfg.master_seed, streams::AGENT, 0));
            let agent = SacAgent::new(OBS_DIM, act_dim, cfg.sac.clone(), &mut rng)?;
            let replay = ReplayBuffer::new(cfg.sac.replay_capacity, OBS_DIM, act_dim)?;
            (agent, replay, rng, 0, 0)
        }
    };

    let eval_sets: Vec<(CostTable, u64, u64, f64)> = (0..if cfg.eval_every > 0 { cfg.eval_episodes } else { 0 })
        .map(|i| {
            let (env_seed, swarm_seed) = cfg.eval_seeds(i);
            let table = CostTable::new(&generate_environment(&cfg.env_config(env_seed))?, &cfg.cost)?;
            let base = baseline_cost(&table, &cfg.controller, swarm_seed)?;
            Ok((table, env_seed, swarm_seed, base))
        })
        .collect::<Result<_>>()?;

    let total = cfg.episodes();
    let stop = opts.stop_after.map_or(total, |s| s.min(total));
    let mut log = Vec::new();
    let write_checkpoint = |agent: &SacAgent, rng: &Rng, replay: &ReplayBuffer, episodes: u64, env_steps: u64| {
        let mut ck = Checkpoint::from_agent(agent).with_training_state(
            rng,
            TrainProgress { episodes, env_steps },
            Some(replay),
        );
        ck.metadata = Some(metadata.clone());
        ck
    };

    while episode < stop {
        let (env_seed, swarm_seed) = cfg.train_seeds(episode);
        let table = CostTable::new(&generate_environment(&cfg.env_config(env_seed))?, &cfg.cost)?;
        let mut driver = Trainer {
            agent: &mut agent,
            replay: &mut replay,
            rng: &mut rng,
            env_steps: &mut env_steps,
            reward_scale: cfg.reward_scale,
            losses: LossMeans::default(),
        };
        let ep = run_episode_on(&mut driver, &table, &cfg.controller, env_seed, swarm_seed)?;
        let losses = driver.losses;
        let base = baseline_cost(&table, &cfg.controller, swarm_seed)?;
        episode += 1;

        let (mut eval_return, mut eval_improvement, mut eval_gap) = (None, None, None);
        if !eval_sets.is_empty() && (episode % cfg.eval_every == 0 || episode == total) {
            let (mut ret, mut imp, mut gap) = (0.0, 0.0, 0.0f64);
            for (table, env_seed, swarm_seed, base) in &eval_sets {
                let e = run_episode_on(&mut Greedy(&agent), table, &cfg.controller, *env_seed, *swarm_seed)?;
                ret += e.record.episode_return();
                imp += percent_below(*base, e.run.best_cost);
                gap = gap.max((e.record.episode_return() - e.record.relative_improvement()).abs());
            }
            let n = eval_sets.len() as f64;
            eval_return = Some(ret / n);
            eval_improvement = Some(imp / n);
            eval_gap = Some(gap);
        }

        let entry = TrainLogEntry {
            episode,
            env_steps,
            updates: agent.train_steps,
            episode_return: ep.record.episode_return(),
            init_best: ep.record.init_best,
            best_cost: ep.run.best_cost,
            baseline_cost: base,
            improvement_vs_pso: percent_below(base, ep.run.best_cost),
            critic1_loss: losses.mean(losses.critic1),
            critic2_loss: losses.mean(losses.critic2),
            actor_loss: losses.mean(losses.actor),
            alpha: agent.alpha(),
            eval_return,
            eval_improvement_vs_pso: eval_improvement,
            eval_return_gap: eval_gap,
        };
        if let Some(w) = opts.log.as_deref_mut() {
            let line = serde_json::to_string(&entry).map_err(|e| Error::json("training log", e))?;
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        log.push(entry);

        let periodic = cfg.checkpoint_every > 0 && episode % cfg.checkpoint_every == 0;
        if let Some(path) = &opts.checkpoint_path {
            if periodic || episode == stop {
                save_checkpoint(&write_checkpoint(&agent, &rng, &replay, episode, env_steps), path)?;
            }
        }
    }

    Ok(TrainOutcome {
        checkpoint: write_checkpoint(&agent, &rng, &replay, episode, env_steps),
        agent,
        log,
        episodes: episode,
        env_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;

    fn table(n: usize, k: usize, seed: u64) -> CostTable {
        let env = generate_environment(&EnvConfig::new(n, k, seed)).unwrap();
        CostTable::new(&env, &CostModel::default()).unwrap()
    }

    fn small_params() -> ControllerParams {
        ControllerParams {
            pso: PsoParams {
                n_particles: 8,
                max_iters: 12,
                ..PsoParams::default()
            },
            ..ControllerParams::default()
        }
    }

    #[test]
    fn mapping_round_trips() {
        let m = ActionMapping::default();
        for a in [-1.0, -0.3, 0.0, 0.77, 1.0] {
            assert!((m.coefficient_inverse(m.coefficient(a)) - a).abs() < 1e-15);
        }
        assert_eq!(m.coefficient(-1.0), 0.5);
        assert_eq!(m.coefficient(1.0), 2.5);
        assert_eq!(m.coefficient(0.0), 1.5);
    }

    #[test]
    fn reward_cases() {
        assert_eq!(compute_reward(80.0, 80.0, 100.0), 0.0);
        let rewards = [compute_reward(100.0, 90.0, 100.0), compute_reward(90.0, 58.5, 100.0)];
        assert!((rewards.iter().sum::<f64>() - 0.415).abs() < 1e-12);
    }

    #[test]
    fn non_positive_init_best_is_rejected() {
        let t = table(5, 3, 1);
        let p = small_params();
        let swarm = pso::init_swarm(&t, &p.pso, &mut rng_from_seed(0)).unwrap();
        let k = p.pso.coefficients();
        assert!(matches!(make_observation(&swarm, 1.0, 0.0, k, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn first_observation_has_no_improvement() {
        let t = table(5, 3, 1);
        let p = small_params();
        let swarm = pso::init_swarm(&t, &p.pso, &mut rng_from_seed(0)).unwrap();
        let obs = make_observation(&swarm, swarm.gbest_cost, swarm.gbest_cost, p.pso.coefficients(), &p).unwrap();
        assert_eq!(obs.improvement(), 0.0);
        assert_eq!(obs.progress(), 0.0);
    }

    #[test]
    fn converged_swarm_has_zero_spread() {
        let t = table(5, 3, 1);
        let p = small_params();
        let mut swarm = pso::init_swarm(&t, &p.pso, &mut rng_from_seed(0)).unwrap();
        let g = swarm.gbest_position.clone();
        for q in &mut swarm.particles {
            q.position = g.clone();
        }
        let obs = make_observation(&swarm, swarm.gbest_cost, swarm.gbest_cost, p.pso.coefficients(), &p).unwrap();
        assert_eq!(obs.evol_factor().value(), 0.0);
        assert_eq!(obs.diversity(), 0.0);
    }

    #[test]
    fn pinned_action_reduces_to_baseline() {
        let t = table(30, 5, 2);
        let mut p = small_params();
        p.inertia = InertiaSource::Fixed(p.pso.w);
        let action = vec![-0.2, 0.4];
        let ep = run_episode_on(&mut FixedAction(action.clone()), &t, &p, 0, 17).unwrap();
        let base_params = PsoParams {
            c1: p.mapping.coefficient(action[0]),
            c2: p.mapping.coefficient(action[1]),
            ..p.pso
        };
        let base = pso::run_on(&t, &base_params, 17).unwrap();
        assert_eq!(ep.run.best_cost, base.best_cost);
        assert_eq!(ep.run.curve, base.curve);
        assert_eq!(ep.run.best_assignment, base.best_assignment);
    }

    #[test]
    fn trace_matches_mapped_actions() {
        let t = table(20, 4, 3);
        let p = small_params();
        let ep = run_episode_on(&mut FixedAction(vec![0.5, -0.5]), &t, &p, 0, 1).unwrap();
        assert_eq!(ep.run.coefficient_trace.len(), p.pso.max_iters);
        for (k, s) in ep.run.coefficient_trace.iter().zip(&ep.record.steps) {
            assert_eq!(*k, s.coefficients);
            assert_eq!(k.c1, p.mapping.coefficient(s.action[0]));
            assert_eq!(k.w, adapt_inertia(s.observation.evol_factor()));
        }
    }

    #[test]
    fn rewards_telescope() {
        let t = table(20, 4, 3);
        let ep = run_episode_on(&mut FixedAction(vec![0.9, -0.9]), &t, &small_params(), 0, 5).unwrap();
        assert!((ep.record.episode_return() - ep.record.relative_improvement()).abs() < 1e-10);
        assert!(ep.record.steps.iter().all(|s| s.reward >= 0.0));
    }

    #[test]
    fn zero_iterations_is_initialization_only() {
        let t = table(10, 3, 3);
        let mut p = small_params();
        p.pso.max_iters = 0;
        let ep = run_episode_on(&mut FixedAction(vec![0.0, 0.0]), &t, &p, 0, 5).unwrap();
        assert_eq!(ep.run.curve.len(), 1);
        assert!(ep.record.steps.is_empty());
    }

    #[test]
    fn bad_actions_are_contract_errors() {
        let t = table(10, 3, 3);
        let p = small_params();
        assert!(matches!(
            run_episode_on(&mut FixedAction(vec![0.0]), &t, &p, 0, 5),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            run_episode_on(&mut FixedAction(vec![0.0, 1.5]), &t, &p, 0, 5),
            Err(Error::Contract(_))
        ));
    }

    struct Recorder(Vec<Transition>);

    impl Driver for Recorder {
        fn act(&mut self, _o: &Observation) -> Result<Vec<f64>> {
            Ok(vec![0.1, 0.2])
        }
        fn wants_transitions(&self) -> bool {
            true
        }
        fn record(&mut self, t: Transition) -> Result<()> {
            self.0.push(t);
            Ok(())
        }
    }

    #[test]
    fn one_transition_per_iteration_one_terminal() {
        let t = table(10, 3, 4);
        let p = small_params();
        let mut rec = Recorder(Vec::new());
        run_episode_on(&mut rec, &t, &p, 0, 9).unwrap();
        assert_eq!(rec.0.len(), p.pso.max_iters);
        assert_eq!(rec.0.iter().filter(|t| t.done).count(), 1);
        assert!(rec.0.last().unwrap().done);
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            n_devices: 12,
            n_servers: 3,
            controller: small_params(),
            sac: SacParams {
                hidden: vec![8, 8],
                batch_size: 16,
                replay_capacity: 1000,
                warmup_steps: 24,
                total_train_steps: 60,
                ..SacParams::default()
            },
            eval_every: 2,
            eval_episodes: 2,
            checkpoint_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn step_budget_accounting() {
        let cfg = tiny_train();
        let out = train(&cfg, TrainOptions::default()).unwrap();
        assert_eq!(out.episodes, 5);
        assert_eq!(out.env_steps, 60);
        assert_eq!(out.log.len(), 5);
        assert_eq!(out.agent.train_steps, 60 - 24 + 1);
        assert!(out.log.iter().all(|e| e.episode_return >= 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_train();
        let a = train(&cfg, TrainOptions::default()).unwrap();
        let b = train(&cfg, TrainOptions::default()).unwrap();
        assert_eq!(a.checkpoint.to_json().unwrap(), b.checkpoint.to_json().unwrap());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let cfg = tiny_train();
        let full = train(&cfg, TrainOptions::default()).unwrap();
        let first = train(&cfg, TrainOptions { stop_after: Some(2), ..Default::default() }).unwrap();
        let resumed = train(
            &cfg,
            TrainOptions {
                resume: Some(first.checkpoint.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(resumed.checkpoint.to_json().unwrap(), full.checkpoint.to_json().unwrap());
        assert_eq!([first.log, resumed.log].concat(), full.log);
    }

    #[test]
    fn resume_rejects_other_config() {
        let cfg = tiny_train();
        let first = train(&cfg, TrainOptions { stop_after: Some(1), ..Default::default() }).unwrap();
        let other = TrainConfig { master_seed: 7, ..cfg };
        let err = train(&other, TrainOptions { resume: Some(first.checkpoint), ..Default::default() });
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
