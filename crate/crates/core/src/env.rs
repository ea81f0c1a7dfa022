//! Seeded generation of simulated edge-computing environments.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng, RNG_ALGORITHM};

pub const ENV_FORMAT_VERSION: u32 = 1;

/// A device with a task to offload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Device {
    /// Megabytes.
    pub data_size: f64,
    /// Million instructions.
    pub completion_req: f64,
    /// Gigabytes.
    pub ram_req: f64,
    /// Megabits per second.
    pub network_speed: f64,
}

/// An edge server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Server {
    /// Million instructions per second.
    pub speed: f64,
    /// Currency per second.
    pub cost_rate: f64,
    /// Gigabytes.
    pub ram: f64,
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Sampling interval for every device and server attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    pub data_size: Interval,
    pub completion_req: Interval,
    pub ram_req: Interval,
    pub network_speed: Interval,
    pub server_speed: Interval,
    pub server_cost: Interval,
    pub server_ram: Interval,
}

impl Default for Ranges {
    fn default() -> Self {
        Self {
            data_size: Interval::new(50.0, 150.0),
            completion_req: Interval::new(20.0, 40.0),
            ram_req: Interval::new(1.0, 2.0),
            network_speed: Interval::new(60.0, 900.0),
            server_speed: Interval::new(10.0, 200.0),
            server_cost: Interval::new(0.02, 0.06),
            server_ram: Interval::new(2.0, 8.0),
        }
    }
}

impl Ranges {
    fn named(&self) -> [(&'static str, Interval); 7] {
        [
            ("data_size", self.data_size),
            ("completion_req", self.completion_req),
            ("ram_req", self.ram_req),
            ("network_speed", self.network_speed),
            ("server_speed", self.server_speed),
            ("server_cost", self.server_cost),
            ("server_ram", self.server_ram),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_devices: usize,
    pub n_servers: usize,
    pub seed: u64,
    #[serde(default)]
    pub ranges: Ranges,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_devices: 250,
            n_servers: 20,
            seed: 42,
            ranges: Ranges::default(),
        }
    }
}

impl EnvConfig {
    pub fn new(n_devices: usize, n_servers: usize, seed: u64) -> Self {
        Self {
            n_devices,
            n_servers,
            seed,
            ranges: Ranges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_devices > 0 && self.n_servers == 0 {
            return Err(Error::Config(format!(
                "{} devices but no servers",
                self.n_devices
            )));
        }
        for (name, r) in self.ranges.named() {
            if !(r.lo.is_finite() && r.hi.is_finite()) {
                return Err(Error::Config(format!("range {name} is not finite")));
            }
            if r.lo > r.hi {
                return Err(Error::Config(format!(
                    "range {name} has lower bound {} above upper bound {}",
                    r.lo, r.hi
                )));
            }
            if r.lo <= 0.0 {
                return Err(Error::Config(format!(
                    "range {name} must be strictly positive, got lower bound {}",
                    r.lo
                )));
            }
        }
        Ok(())
    }
}

/// A static fleet of devices and pool of servers. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub config: EnvConfig,
    pub devices: Vec<Device>,
    pub servers: Vec<Server>,
}

impl Environment {
    pub fn n_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn n_servers(&self) -> usize {
        self.servers.len()
    }

    /// Checks the structural and positivity invariants, naming the first
    /// offending field.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.devices.len() != self.config.n_devices {
            return Err(Error::Validation(format!(
                "devices: expected {} entries, found {}",
                self.config.n_devices,
                self.devices.len()
            )));
        }
        if self.servers.len() != self.config.n_servers {
            return Err(Error::Validation(format!(
                "servers: expected {} entries, found {}",
                self.config.n_servers,
                self.servers.len()
            )));
        }
        for (j, d) in self.devices.iter().enumerate() {
            for (name, v) in [
                ("data_size", d.data_size),
                ("completion_req", d.completion_req),
                ("ram_req", d.ram_req),
                ("network_speed", d.network_speed),
            ] {
                positive(v, || format!("devices[{j}].{name}"))?;
            }
        }
        for (s, srv) in self.servers.iter().enumerate() {
            for (name, v) in [
                ("speed", srv.speed),
                ("cost_rate", srv.cost_rate),
                ("ram", srv.ram),
            ] {
                positive(v, || format!("servers[{s}].{name}"))?;
            }
        }
        Ok(())
    }
}

fn positive(v: f64, field: impl FnOnce() -> String) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{} must be finite and strictly positive, got {v}",
            field()
        )))
    }
}

/// Draws every attribute uniformly from its interval. Devices come first in
/// index order (data size, completion, RAM, network speed), then servers
/// (speed, cost rate, RAM), so seeds are portable.
pub fn generate_environment(config: &EnvConfig) -> Result<Environment> {
    config.validate()?;
    let r = &config.ranges;
    let mut rng = rng_from_seed(config.seed);
    let devices = (0..config.n_devices)
        .map(|_| Device {
            data_size: r.data_size.sample(&mut rng),
            completion_req: r.completion_req.sample(&mut rng),
            ram_req: r.ram_req.sample(&mut rng),
            network_speed: r.network_speed.sample(&mut rng),
        })
        .collect();
    let servers = (0..config.n_servers)
        .map(|_| Server {
            speed: r.server_speed.sample(&mut rng),
            cost_rate: r.server_cost.sample(&mut rng),
            ram: r.server_ram.sample(&mut rng),
        })
        .collect();
    Ok(Environment {
        config: config.clone(),
        devices,
        servers,
    })
}

#[derive(Serialize, Deserialize)]
struct Snapshot<E> {
    format_version: u32,
    rng: String,
    #[serde(flatten)]
    env: E,
}

pub fn environment_to_json(env: &Environment) -> String {
    let snap = Snapshot {
        format_version: ENV_FORMAT_VERSION,
        rng: RNG_ALGORITHM.to_string(),
        env,
    };
    serde_json::to_string_pretty(&snap).expect("environment serializes")
}

pub fn environment_from_json(text: &str) -> Result<Environment> {
    let snap: Snapshot<Environment> =
        serde_json::from_str(text).map_err(|e| Error::json("environment", e))?;
    if snap.format_version != ENV_FORMAT_VERSION {
        return Err(Error::Version {
            found: snap.format_version,
            expected: ENV_FORMAT_VERSION,
        });
    }
    snap.env.validate()?;
    Ok(snap.env)
}

pub fn save_environment(env: &Environment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, environment_to_json(env)).map_err(|e| Error::io(path, e))
}

pub fn load_environment(path: impl AsRef<Path>) -> Result<Environment> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    environment_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_attributes_within_default_ranges() {
        let env = generate_environment(&EnvConfig::new(250, 20, 42)).unwrap();
        let r = Ranges::default();
        assert_eq!(env.n_devices(), 250);
        assert_eq!(env.n_servers(), 20);
        for d in &env.devices {
            assert!(r.data_size.contains(d.data_size));
            assert!(r.completion_req.contains(d.completion_req));
            assert!(r.ram_req.contains(d.ram_req));
            assert!(r.network_speed.contains(d.network_speed));
        }
        for s in &env.servers {
            assert!(r.server_speed.contains(s.speed));
            assert!(r.server_cost.contains(s.cost_rate));
            assert!(r.server_ram.contains(s.ram));
        }
    }

    #[test]
    fn empty_fleet() {
        let env = generate_environment(&EnvConfig::new(0, 5, 1)).unwrap();
        assert!(env.devices.is_empty());
        assert_eq!(env.servers.len(), 5);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_environment(&EnvConfig::new(30, 4, 7)).unwrap();
        let b = generate_environment(&EnvConfig::new(30, 4, 7)).unwrap();
        assert_eq!(environment_to_json(&a), environment_to_json(&b));
        let c = generate_environment(&EnvConfig::new(30, 4, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn inverted_range_is_rejected() {
        let mut cfg = EnvConfig::new(3, 2, 0);
        cfg.ranges.server_speed = Interval::new(5.0, 1.0);
        assert!(matches!(generate_environment(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn devices_without_servers_is_rejected() {
        assert!(matches!(
            generate_environment(&EnvConfig::new(3, 0, 0)),
            Err(Error::Config(_))
        ));
        assert!(generate_environment(&EnvConfig::new(0, 0, 0)).is_ok());
    }

    #[test]
    fn degenerate_interval_yields_constant() {
        let mut cfg = EnvConfig::new(5, 1, 3);
        cfg.ranges.ram_req = Interval::new(1.5, 1.5);
        let env = generate_environment(&cfg).unwrap();
        assert!(env.devices.iter().all(|d| d.ram_req == 1.5));
    }

    #[test]
    fn uniform_mean_near_midpoint() {
        let env = generate_environment(&EnvConfig::new(10_000, 1, 99)).unwrap();
        let r = Ranges::default();
        let mean = |f: fn(&Device) -> f64| {
            env.devices.iter().map(f).sum::<f64>() / env.devices.len() as f64
        };
        for (m, iv) in [
            (mean(|d| d.data_size), r.data_size),
            (mean(|d| d.completion_req), r.completion_req),
            (mean(|d| d.ram_req), r.ram_req),
            (mean(|d| d.network_speed), r.network_speed),
        ] {
            let mid = iv.midpoint();
            assert!((m - mid).abs() <= 0.02 * mid, "mean {m} vs midpoint {mid}");
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        let env = generate_environment(&EnvConfig::new(12, 3, 5)).unwrap();
        save_environment(&env, &path).unwrap();
        assert_eq!(load_environment(&path).unwrap(), env);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let env = generate_environment(&EnvConfig::new(4, 2, 5)).unwrap();
        let text = environment_to_json(&env);
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            environment_from_json(cut),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn negative_server_speed_is_a_validation_error() {
        let mut env = generate_environment(&EnvConfig::new(4, 2, 5)).unwrap();
        env.servers[1].speed = -3.0;
        let err = environment_from_json(&environment_to_json(&env)).unwrap_err();
        match err {
            Error::Validation(msg) => assert!(msg.contains("servers[1].speed"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_names_it() {
        let env = generate_environment(&EnvConfig::new(1, 1, 5)).unwrap();
        let text = environment_to_json(&env).replace("\"cost_rate\"", "\"costrate\"");
        match environment_from_json(&text).unwrap_err() {
            Error::Parse { message, .. } => assert!(message.contains("cost_rate"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
