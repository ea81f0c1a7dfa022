//! Soft Actor-Critic with twin critics, target networks and optional
//! entropy-coefficient tuning.

mod checkpoint;
pub mod policy;
mod replay;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, NetworkRecord, TrainProgress, CHECKPOINT_FORMAT_VERSION,
};
pub use replay::{Batch, ReplayBuffer, Transition};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{mse_loss, AdamState, Gradients, Mlp};
use crate::rng::Rng;
use policy::{clamp_log_std, neg_correction_grad, squash, squashed_log_prob, LOG_STD_MAX, LOG_STD_MIN};

/// Scale applied to the actor's output layer at initialization.
pub const ACTOR_OUTPUT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacParams {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub replay_capacity: usize,
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Entropy coefficient, or its starting value when `auto_alpha` is set.
    pub alpha: f64,
    pub auto_alpha: bool,
    pub alpha_lr: f64,
    /// Entropy target for auto-tuning; `None` means minus the action dimension.
    pub target_entropy: Option<f64>,
    pub total_train_steps: u64,
    pub warmup_steps: u64,
    pub update_every: u64,
    pub hidden: Vec<usize>,
}

impl Default for SacParams {
    fn default() -> Self {
        Self {
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            replay_capacity: 1_000_000,
            tau: 5e-3,
            gamma: 0.99,
            batch_size: 256,
            alpha: 0.2,
            auto_alpha: false,
            alpha_lr: 3e-4,
            target_entropy: None,
            total_train_steps: 1_000_000,
            warmup_steps: 1_000,
            update_every: 1,
            hidden: vec![256, 256],
        }
    }
}

impl SacParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.auto_alpha && self.alpha <= 0.0 {
            return bad("auto_alpha needs a positive starting alpha".into());
        }
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return bad(format!(
                "batch_size {} must be in 1..=replay_capacity ({})",
                self.batch_size, self.replay_capacity
            ));
        }
        if self.update_every == 0 {
            return bad("update_every must be positive".into());
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("alpha_lr", self.alpha_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }
}

/// Losses from one gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha_loss: Option<f64>,
    pub alpha: f64,
}

/// Soft target `r + gamma (1 - done) (min_q - alpha_log_prob)`.
pub fn soft_target(reward: f64, done: bool, gamma: f64, min_next_q: f64, alpha_log_prob: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (min_next_q - alpha_log_prob)
    }
}

/// Mean squared error of `critic` against `targets` on the batch, with its
/// parameter gradient.
pub fn critic_loss_grad(critic: &Mlp, batch: &Batch, targets: &[f64]) -> Result<(f64, Gradients)> {
    let tape = critic.forward_batch(&batch.state_actions(), batch.len)?;
    let (loss, g) = mse_loss(tape.output(), targets)?;
    let (grads, _) = critic.backward_batch(&tape, &g)?;
    Ok((loss, grads))
}

fn in_network(name: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{name} {m}")),
        Error::Contract(m) => Error::Contract(format!("{name}: {m}")),
        other => other,
    }
}

/// Reparameterized samples from the squashed policy for a batch of states.
struct PolicySample {
    /// Actor outputs `[mu | raw log-std]` per row.
    raw: Vec<f64>,
    eps: Vec<f64>,
    u: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub params: SacParams,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub actor_opt: AdamState,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
    pub log_alpha: f64,
    pub alpha_opt: AdamState,
    /// Gradient steps taken so far.
    pub train_steps: u64,
}

impl SacAgent {
    pub fn new(obs_dim: usize, act_dim: usize, params: SacParams, rng: &mut Rng) -> Result<Self> {
        params.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::Config("observation and action dimensions must be positive".into()));
        }
        let actor = Mlp::new(&Self::actor_sizes(obs_dim, act_dim, &params.hidden), ACTOR_OUTPUT_SCALE, rng);
        let critic_sizes = Self::critic_sizes(obs_dim, act_dim, &params.hidden);
        let critic1 = Mlp::new(&critic_sizes, 1.0, rng);
        let critic2 = Mlp::new(&critic_sizes, 1.0, rng);
        Ok(Self {
            actor_opt: AdamState::for_net(&actor, params.actor_lr),
            critic1_opt: AdamState::for_net(&critic1, params.critic_lr),
            critic2_opt: AdamState::for_net(&critic2, params.critic_lr),
            alpha_opt: AdamState::new(1, params.alpha_lr),
            log_alpha: if params.alpha > 0.0 { params.alpha.ln() } else { f64::NEG_INFINITY },
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            params,
            obs_dim,
            act_dim,
            train_steps: 0,
        })
    }

    pub fn actor_sizes(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Vec<usize> {
        let mut s = vec![obs_dim];
        s.extend_from_slice(hidden);
        s.push(2 * act_dim);
        s
    }

    pub fn critic_sizes(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Vec<usize> {
        let mut s = vec![obs_dim + act_dim];
        s.extend_from_slice(hidden);
        s.push(1);
        s
    }

    pub fn alpha(&self) -> f64 {
        if self.params.auto_alpha {
            self.log_alpha.exp()
        } else {
            self.params.alpha
        }
    }

    pub fn target_entropy(&self) -> f64 {
        self.params.target_entropy.unwrap_or(-(self.act_dim as f64))
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.obs_dim {
            return Err(Error::Contract(format!(
                "state has {} components, agent expects {}",
                state.len(),
                self.obs_dim
            )));
        }
        Ok(())
    }

    /// Mean and clamped log-std for one state.
    pub fn policy_head(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_state(state)?;
        let out = self.actor.forward(state).map_err(in_network("actor"))?;
        let (mu, raw) = out.split_at(self.act_dim);
        Ok((mu.to_vec(), raw.iter().map(|&r| clamp_log_std(r)).collect()))
    }

    /// An action in `(-1, 1)^k`: `tanh(mu)` when deterministic, otherwise a
    /// squashed Gaussian sample.
    pub fn select_action(&self, state: &[f64], deterministic: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        let (mu, log_std) = self.policy_head(state)?;
        Ok(if deterministic {
            mu.iter().map(|&m| squash(m)).collect()
        } else {
            mu.iter()
                .zip(&log_std)
                .map(|(&m, &ls)| {
                    let e: f64 = rng.sample(StandardNormal);
                    squash(m + ls.exp() * e)
                })
                .collect()
        })
    }

    /// Log-density of `tanh(u)` for pre-squash action `u` in `state`.
    pub fn log_prob(&self, state: &[f64], u: &[f64]) -> Result<f64> {
        if u.len() != self.act_dim {
            return Err(Error::Contract(format!(
                "pre-squash action has {} components, agent expects {}",
                u.len(),
                self.act_dim
            )));
        }
        let (mu, log_std) = self.policy_head(state)?;
        Ok(squashed_log_prob(&mu, &log_std, u))
    }

    fn sample_batch(&self, raw: Vec<f64>, rows: usize, rng: &mut Rng) -> PolicySample {
        let k = self.act_dim;
        let mut s = PolicySample {
            eps: Vec::with_capacity(rows * k),
            u: Vec::with_capacity(rows * k),
            actions: Vec::with_capacity(rows * k),
            log_probs: Vec::with_capacity(rows),
            raw,
        };
        let mut log_std = vec![0.0; k];
        for r in 0..rows {
            let row = &s.raw[r * 2 * k..(r + 1) * 2 * k];
            let mu = &row[..k];
            for (d, ls) in log_std.iter_mut().enumerate() {
                *ls = clamp_log_std(row[k + d]);
            }
            let start = s.u.len();
            for d in 0..k {
                let e: f64 = rng.sample(StandardNormal);
                let u = mu[d] + log_std[d].exp() * e;
                s.eps.push(e);
                s.u.push(u);
                s.actions.push(squash(u));
            }
            s.log_probs.push(squashed_log_prob(mu, &log_std, &s.u[start..]));
        }
        s
    }

    /// Soft Bellman targets for a batch, with freshly sampled next actions.
    pub fn critic_targets(&self, batch: &Batch, rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let n = batch.len;
        let tape = self.actor.forward_batch(&batch.next_states, n).map_err(in_network("actor"))?;
        let next = self.sample_batch(tape.output().to_vec(), n, rng);
        let sa = replay::concat_rows(&batch.next_states, self.obs_dim, &next.actions, self.act_dim);
        let q1 = self.target1.forward_batch(&sa, n).map_err(in_network("target1"))?;
        let q2 = self.target2.forward_batch(&sa, n).map_err(in_network("target2"))?;
        let alpha = self.alpha();
        Ok((0..n)
            .map(|i| {
                let min_q = q1.output()[i].min(q2.output()[i]);
                soft_target(batch.rewards[i], batch.dones[i], self.params.gamma, min_q, alpha * next.log_probs[i])
            })
            .collect())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.obs_dim != self.obs_dim || batch.act_dim != self.act_dim || batch.len == 0 {
            return Err(Error::Contract(format!(
                "batch of {} rows with dims ({}, {}) does not fit agent ({}, {})",
                batch.len, batch.obs_dim, batch.act_dim, self.obs_dim, self.act_dim
            )));
        }
        Ok(())
    }

    /// Samples a minibatch from `replay` and applies [`SacAgent::update`].
    pub fn update_from(&mut self, replay: &ReplayBuffer, rng: &mut Rng) -> Result<Losses> {
        let needed = self.params.batch_size;
        if replay.len() < needed {
            return Err(Error::InsufficientData { size: replay.len(), needed });
        }
        let batch = replay.sample(needed, rng)?;
        self.update(&batch, rng)
    }

    /// One gradient step: both critics, then the actor, then alpha, then the
    /// target networks.
    pub fn update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<Losses> {
        self.check_batch(batch)?;
        let n = batch.len;
        let alpha = self.alpha();
        let targets = self.critic_targets(batch, rng)?;

        let (l1, g1) = critic_loss_grad(&self.critic1, batch, &targets).map_err(in_network("critic1"))?;
        let (l2, g2) = critic_loss_grad(&self.critic2, batch, &targets).map_err(in_network("critic2"))?;
        for (name, l) in [("critic1", l1), ("critic2", l2)] {
            if !l.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{name} loss at train step {} (alpha {alpha})",
                    self.train_steps
                )));
            }
        }
        self.critic1_opt.step_net(&mut self.critic1, &g1).map_err(in_network("critic1"))?;
        self.critic2_opt.step_net(&mut self.critic2, &g2).map_err(in_network("critic2"))?;

        let (actor_loss, actor_grads, log_probs) = self.actor_loss_grad(batch, alpha, rng)?;
        if !actor_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "actor loss at train step {} (alpha {alpha})",
                self.train_steps
            )));
        }
        self.actor_opt.step_net(&mut self.actor, &actor_grads).map_err(in_network("actor"))?;

        let alpha_loss = if self.params.auto_alpha {
            let h = self.target_entropy();
            let mean = log_probs.iter().map(|lp| lp + h).sum::<f64>() / n as f64;
            let mut p = [self.log_alpha];
            self.alpha_opt.step(&mut p, &[-mean])?;
            let loss = -self.log_alpha * mean;
            self.log_alpha = p[0];
            Some(loss)
        } else {
            None
        };

        self.target1.soft_update_from(&self.critic1, self.params.tau);
        self.target2.soft_update_from(&self.critic2, self.params.tau);
        self.train_steps += 1;
        Ok(Losses {
            critic1: l1,
            critic2: l2,
            actor: actor_loss,
            alpha_loss,
            alpha: self.alpha(),
        })
    }

    /// Loss `mean(alpha log pi - min Q)` over reparameterized actions, with
    /// its gradient with respect to the actor's parameters.
    fn actor_loss_grad(&self, batch: &Batch, alpha: f64, rng: &mut Rng) -> Result<(f64, Gradients, Vec<f64>)> {
        let n = batch.len;
        let k = self.act_dim;
        let tape = self.actor.forward_batch(&batch.states, n).map_err(in_network("actor"))?;
        let s = self.sample_batch(tape.output().to_vec(), n, rng);
        let sa = replay::concat_rows(&batch.states, self.obs_dim, &s.actions, k);
        let t1 = self.critic1.forward_batch(&sa, n).map_err(in_network("critic1"))?;
        let t2 = self.critic2.forward_batch(&sa, n).map_err(in_network("critic2"))?;
        let mut up1 = vec![0.0; n];
        let mut up2 = vec![0.0; n];
        let mut loss = 0.0;
        for i in 0..n {
            let (q1, q2) = (t1.output()[i], t2.output()[i]);
            if q1 <= q2 {
                up1[i] = 1.0;
            } else {
                up2[i] = 1.0;
            }
            loss += alpha * s.log_probs[i] - q1.min(q2);
        }
        loss /= n as f64;
        let dq1 = self.critic1.input_gradient(&t1, &up1).map_err(in_network("critic1"))?;
        let dq2 = self.critic2.input_gradient(&t2, &up2).map_err(in_network("critic2"))?;

        let width = self.obs_dim + k;
        let inv_n = 1.0 / n as f64;
        let mut upstream = vec![0.0; n * 2 * k];
        for i in 0..n {
            for d in 0..k {
                let j = i * k + d;
                let a = s.u[j].tanh();
                let jac = 1.0 - a * a;
                let dq_da = dq1[i * width + self.obs_dim + d] + dq2[i * width + self.obs_dim + d];
                let g = neg_correction_grad(s.u[j]);
                let dq_du = dq_da * jac;
                upstream[i * 2 * k + d] = inv_n * (alpha * g - dq_du);
                let raw = s.raw[i * 2 * k + k + d];
                if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                    let sigma_eps = raw.exp() * s.eps[j];
                    upstream[i * 2 * k + k + d] = inv_n * (alpha * (-1.0 + g * sigma_eps) - dq_du * sigma_eps);
                }
            }
        }
        let (grads, _) = self.actor.backward_batch(&tape, &upstream).map_err(in_network("actor"))?;
        Ok((loss, grads, s.log_probs))
    }
}
