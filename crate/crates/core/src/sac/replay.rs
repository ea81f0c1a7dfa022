use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// A sampled minibatch, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        let first = ts
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (obs_dim, act_dim) = (first.state.len(), first.action.len());
        let mut b = Batch {
            len: 0,
            obs_dim,
            act_dim,
            states: Vec::with_capacity(ts.len() * obs_dim),
            actions: Vec::with_capacity(ts.len() * act_dim),
            rewards: Vec::with_capacity(ts.len()),
            next_states: Vec::with_capacity(ts.len() * obs_dim),
            dones: Vec::with_capacity(ts.len()),
        };
        for t in ts {
            check_transition(t, obs_dim, act_dim)?;
            b.states.extend_from_slice(&t.state);
            b.actions.extend_from_slice(&t.action);
            b.rewards.push(t.reward);
            b.next_states.extend_from_slice(&t.next_state);
            b.dones.push(t.done);
            b.len += 1;
        }
        Ok(b)
    }

    /// `[state | action]` rows for the critics.
    pub fn state_actions(&self) -> Vec<f64> {
        concat_rows(&self.states, self.obs_dim, &self.actions, self.act_dim)
    }
}

pub(crate) fn concat_rows(a: &[f64], da: usize, b: &[f64], db: usize) -> Vec<f64> {
    let rows = if da > 0 { a.len() / da } else { b.len() / db };
    let mut out = Vec::with_capacity(rows * (da + db));
    for r in 0..rows {
        out.extend_from_slice(&a[r * da..(r + 1) * da]);
        out.extend_from_slice(&b[r * db..(r + 1) * db]);
    }
    out
}

fn check_transition(t: &Transition, obs_dim: usize, act_dim: usize) -> Result<()> {
    if t.state.len() != obs_dim || t.next_state.len() != obs_dim || t.action.len() != act_dim {
        return Err(Error::Contract(format!(
            "transition dimensions ({}, {}, {}) do not match ({obs_dim}, {act_dim}, {obs_dim})",
            t.state.len(),
            t.action.len(),
            t.next_state.len()
        )));
    }
    if t.action.iter().any(|a| !(-1.0..=1.0).contains(a)) {
        return Err(Error::Contract("transition action outside [-1, 1]".into()));
    }
    let finite = t
        .state
        .iter()
        .chain(&t.next_state)
        .chain(&t.action)
        .all(|x| x.is_finite())
        && t.reward.is_finite();
    if !finite {
        return Err(Error::NonFinite("transition".into()));
    }
    Ok(())
}

/// Fixed-capacity FIFO ring of transitions, stored column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    /// Next slot to write once the buffer is full.
    cursor: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            obs_dim,
            act_dim,
            cursor: 0,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.obs_dim, self.act_dim)
    }

    pub fn store(&mut self, t: Transition) -> Result<()> {
        check_transition(&t, self.obs_dim, self.act_dim)?;
        let (o, a) = (self.obs_dim, self.act_dim);
        if self.len() < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_states.extend_from_slice(&t.next_state);
            self.dones.push(t.done);
        } else {
            let i = self.cursor;
            self.states[i * o..(i + 1) * o].copy_from_slice(&t.state);
            self.actions[i * a..(i + 1) * a].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.next_states[i * o..(i + 1) * o].copy_from_slice(&t.next_state);
            self.dones[i] = t.done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// The transition in physical slot `i`.
    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len() {
            return None;
        }
        let (o, a) = (self.obs_dim, self.act_dim);
        Some(Transition {
            state: self.states[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * o..(i + 1) * o].to_vec(),
            done: self.dones[i],
        })
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = Transition> + '_ {
        let start = if self.len() < self.capacity { 0 } else { self.cursor };
        (0..self.len()).map(move |k| self.get((start + k) % self.len()).expect("slot in range"))
    }

    /// Slot indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::InsufficientData { size: 0, needed: n.max(1) });
        }
        let len = self.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut b = Batch {
            len: n,
            obs_dim: o,
            act_dim: a,
            states: Vec::with_capacity(n * o),
            actions: Vec::with_capacity(n * a),
            rewards: Vec::with_capacity(n),
            next_states: Vec::with_capacity(n * o),
            dones: Vec::with_capacity(n),
        };
        for i in idx {
            b.states.extend_from_slice(&self.states[i * o..(i + 1) * o]);
            b.actions.extend_from_slice(&self.actions[i * a..(i + 1) * a]);
            b.rewards.push(self.rewards[i]);
            b.next_states.extend_from_slice(&self.next_states[i * o..(i + 1) * o]);
            b.dones.push(self.dones[i]);
        }
        Ok(b)
    }

    /// Checks internal consistency after deserialization.
    pub fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        let ok = self.capacity > 0
            && n <= self.capacity
            && self.cursor < self.capacity
            && self.states.len() == n * self.obs_dim
            && self.next_states.len() == n * self.obs_dim
            && self.actions.len() == n * self.act_dim
            && self.dones.len() == n;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("replay buffer arrays are inconsistent".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn t(x: f64) -> Transition {
        Transition {
            state: vec![x],
            action: vec![0.0],
            reward: x,
            next_state: vec![x + 1.0],
            done: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(3, 1, 1).unwrap();
        for i in 0..4 {
            buf.store(t(i as f64)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = buf.iter_oldest_first().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut buf = ReplayBuffer::new(10, 1, 1).unwrap();
        for i in 0..10 {
            buf.store(t(i as f64)).unwrap();
        }
        let a = buf.sample(32, &mut rng_from_seed(3)).unwrap();
        let b = buf.sample(32, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_sample_errors() {
        let buf = ReplayBuffer::new(4, 1, 1).unwrap();
        assert!(matches!(
            buf.sample(2, &mut rng_from_seed(0)),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn rejects_bad_transitions() {
        let mut buf = ReplayBuffer::new(4, 1, 1).unwrap();
        let mut bad = t(0.0);
        bad.action = vec![1.5];
        assert!(buf.store(bad).is_err());
        let mut bad = t(0.0);
        bad.state = vec![1.0, 2.0];
        assert!(buf.store(bad).is_err());
        let mut bad = t(0.0);
        bad.reward = f64::NAN;
        assert!(buf.store(bad).is_err());
        assert!(buf.is_empty());
    }

    #[test]
    fn batch_rows_concatenate() {
        let b = Batch::from_transitions(&[t(1.0), t(2.0)]).unwrap();
        assert_eq!(b.state_actions(), vec![1.0, 0.0, 2.0, 0.0]);
    }
}
