//! JSON checkpoints: network shapes with row-major flattened parameters,
//! optimizer moments, counters and, optionally, the full training state.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ReplayBuffer, SacAgent, SacParams};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Mlp};
use crate::rng::{Rng, RngState};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl NetworkRecord {
    pub fn from_net(net: &Mlp) -> Self {
        Self {
            layer_sizes: net.layer_sizes(),
            params: net.params_flat(),
        }
    }

    fn to_net(&self, name: &str, expected: &[usize]) -> Result<Mlp> {
        if self.layer_sizes != expected {
            return Err(Error::Shape {
                network: name.into(),
                message: format!("layer sizes {:?}, expected {:?}", self.layer_sizes, expected),
            });
        }
        let mut net = Mlp::zeros(expected);
        net.set_params_flat(&self.params).map_err(|_| Error::Shape {
            network: name.into(),
            message: format!("{} parameters, expected {}", self.params.len(), net.n_params()),
        })?;
        if !net.is_finite() {
            return Err(Error::NonFinite(format!("{name} parameters")));
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecords {
    pub actor: AdamState,
    pub critic1: AdamState,
    pub critic2: AdamState,
    pub alpha: AdamState,
}

/// Where an interrupted training run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub episodes: u64,
    pub env_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub params: SacParams,
    pub actor: NetworkRecord,
    pub critic1: NetworkRecord,
    pub critic2: NetworkRecord,
    pub target1: NetworkRecord,
    pub target2: NetworkRecord,
    pub log_alpha: f64,
    pub alpha: f64,
    pub optimizers: OptimizerRecords,
    pub train_steps: u64,
    #[serde(default)]
    pub rng: Option<RngState>,
    #[serde(default)]
    pub progress: Option<TrainProgress>,
    #[serde(default)]
    pub replay: Option<ReplayBuffer>,
    /// Caller-defined context, such as the training configuration.
    #[serde(default)]
    pub metadata: Option<serde_json::Value>,
}

impl Checkpoint {
    /// Agent-only checkpoint.
    pub fn from_agent(agent: &SacAgent) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            obs_dim: agent.obs_dim,
            act_dim: agent.act_dim,
            params: agent.params.clone(),
            actor: NetworkRecord::from_net(&agent.actor),
            critic1: NetworkRecord::from_net(&agent.critic1),
            critic2: NetworkRecord::from_net(&agent.critic2),
            target1: NetworkRecord::from_net(&agent.target1),
            target2: NetworkRecord::from_net(&agent.target2),
            // A fixed zero alpha has log -inf, which JSON cannot carry.
            log_alpha: if agent.log_alpha.is_finite() { agent.log_alpha } else { f64::MIN },
            alpha: agent.alpha(),
            optimizers: OptimizerRecords {
                actor: agent.actor_opt.clone(),
                critic1: agent.critic1_opt.clone(),
                critic2: agent.critic2_opt.clone(),
                alpha: agent.alpha_opt.clone(),
            },
            train_steps: agent.train_steps,
            rng: None,
            progress: None,
            replay: None,
            metadata: None,
        }
    }

    /// Attaches everything needed to resume training exactly.
    pub fn with_training_state(mut self, rng: &Rng, progress: TrainProgress, replay: Option<&ReplayBuffer>) -> Self {
        self.rng = Some(RngState::capture(rng));
        self.progress = Some(progress);
        self.replay = replay.cloned();
        self
    }

    pub fn agent(&self) -> Result<SacAgent> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        self.params.validate()?;
        let (o, a, h) = (self.obs_dim, self.act_dim, &self.params.hidden);
        let actor_sizes = SacAgent::actor_sizes(o, a, h);
        let critic_sizes = SacAgent::critic_sizes(o, a, h);
        let actor = self.actor.to_net("actor", &actor_sizes)?;
        let critic1 = self.critic1.to_net("critic1", &critic_sizes)?;
        let critic2 = self.critic2.to_net("critic2", &critic_sizes)?;
        let target1 = self.target1.to_net("target1", &critic_sizes)?;
        let target2 = self.target2.to_net("target2", &critic_sizes)?;
        let opt = &self.optimizers;
        for (name, state, n) in [
            ("actor optimizer", &opt.actor, actor.n_params()),
            ("critic1 optimizer", &opt.critic1, critic1.n_params()),
            ("critic2 optimizer", &opt.critic2, critic2.n_params()),
            ("alpha optimizer", &opt.alpha, 1),
        ] {
            if state.m.len() != n || state.v.len() != n {
                return Err(Error::Shape {
                    network: name.into(),
                    message: format!("moments of length {}/{}, expected {n}", state.m.len(), state.v.len()),
                });
            }
        }
        if let Some(replay) = &self.replay {
            replay.validate()?;
            if replay.dims() != (o, a) {
                return Err(Error::Shape {
                    network: "replay".into(),
                    message: format!("dimensions {:?}, expected {:?}", replay.dims(), (o, a)),
                });
            }
        }
        let log_alpha = if self.log_alpha == f64::MIN { f64::NEG_INFINITY } else { self.log_alpha };
        Ok(SacAgent {
            params: self.params.clone(),
            obs_dim: o,
            act_dim: a,
            actor,
            critic1,
            critic2,
            target1,
            target2,
            actor_opt: opt.actor.clone(),
            critic1_opt: opt.critic1.clone(),
            critic2_opt: opt.critic2.clone(),
            log_alpha,
            alpha_opt: opt.alpha.clone(),
            train_steps: self.train_steps,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("checkpoint", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::json("checkpoint", e))?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse {
                field: "format_version".into(),
                message: "missing or not an unsigned integer".into(),
            })?;
        if found != u64::from(CHECKPOINT_FORMAT_VERSION) {
            return Err(Error::Version {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::json("checkpoint", e))
    }
}

/// Writes `checkpoint` atomically (temporary file, then rename).
pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, checkpoint).map_err(|e| Error::json("checkpoint", e))?;
    w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn agent() -> SacAgent {
        let params = SacParams { hidden: vec![4, 3], ..SacParams::default() };
        SacAgent::new(3, 2, params, &mut rng_from_seed(1)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let a = agent();
        let back = Checkpoint::from_json(&Checkpoint::from_agent(&a).to_json().unwrap())
            .unwrap()
            .agent()
            .unwrap();
        assert_eq!(back, a);
        let s = [0.3, -0.1, 0.7];
        assert_eq!(
            back.select_action(&s, true, &mut rng_from_seed(0)).unwrap(),
            a.select_action(&s, true, &mut rng_from_seed(0)).unwrap()
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/agent.json");
        let a = agent();
        save_checkpoint(&Checkpoint::from_agent(&a), &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().agent().unwrap(), a);
    }

    #[test]
    fn zero_alpha_survives() {
        let params = SacParams { hidden: vec![2], alpha: 0.0, ..SacParams::default() };
        let a = SacAgent::new(1, 1, params, &mut rng_from_seed(1)).unwrap();
        let back = Checkpoint::from_json(&Checkpoint::from_agent(&a).to_json().unwrap()).unwrap();
        assert_eq!(back.agent().unwrap(), a);
    }

    #[test]
    fn version_mismatch() {
        let mut c = Checkpoint::from_agent(&agent());
        c.format_version = 7;
        let text = serde_json::to_string(&c).unwrap();
        assert!(matches!(
            Checkpoint::from_json(&text),
            Err(Error::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn shape_mismatch_names_network() {
        let mut c = Checkpoint::from_agent(&agent());
        c.critic2.layer_sizes = vec![6, 4, 3, 1];
        match c.agent() {
            Err(Error::Shape { network, .. }) => assert_eq!(network, "critic2"),
            other => panic!("unexpected {other:?}"),
        }
        let mut c = Checkpoint::from_agent(&agent());
        c.target1.params.pop();
        match c.agent() {
            Err(Error::Shape { network, .. }) => assert_eq!(network, "target1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupt_file_is_parse_error() {
        let text = Checkpoint::from_agent(&agent()).to_json().unwrap();
        assert!(matches!(
            Checkpoint::from_json(&text[..text.len() / 2]),
            Err(Error::Parse { .. })
        ));
    }
}
