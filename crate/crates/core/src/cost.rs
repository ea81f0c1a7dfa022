//! The offloading objective: weighted computational cost plus latency.

use serde::{Deserialize, Serialize};

use crate::env::{Device, Environment, Server};
use crate::error::{Error, Result};

/// Data sizes are megabytes while link speeds are megabits per second.
pub const MEGABITS_PER_MEGABYTE: f64 = 8.0;

/// Default enumeration cap for [`brute_force_optimum`].
pub const DEFAULT_ORACLE_CAP: u64 = 1_000_000;

/// How data size is converted before dividing by network speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataUnits {
    /// Megabytes are converted to megabits (x8).
    #[default]
    Megabits,
    /// Megabytes divided by megabits per second as-is.
    Literal,
}

impl DataUnits {
    pub fn factor(self) -> f64 {
        match self {
            DataUnits::Megabits => MEGABITS_PER_MEGABYTE,
            DataUnits::Literal => 1.0,
        }
    }
}

/// Device-to-server mapping, `server_of[j]` is the server of device `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub server_of: Vec<usize>,
}

impl Assignment {
    pub fn new(server_of: Vec<usize>) -> Self {
        Self { server_of }
    }

    pub fn len(&self) -> usize {
        self.server_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.server_of.is_empty()
    }

    pub fn check(&self, env: &Environment) -> Result<()> {
        if self.server_of.len() != env.n_devices() {
            return Err(Error::Contract(format!(
                "assignment covers {} devices, environment has {}",
                self.server_of.len(),
                env.n_devices()
            )));
        }
        if let Some((j, &s)) = self
            .server_of
            .iter()
            .enumerate()
            .find(|(_, &s)| s >= env.n_servers())
        {
            return Err(Error::Contract(format!(
                "device {j} assigned to server {s}, only {} servers",
                env.n_servers()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    /// Weight on computational cost.
    pub m: f64,
    /// Weight on latency.
    pub n: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { m: 10.0, n: 1e-2 }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        if !(self.m >= 0.0 && self.n >= 0.0) || (self.m == 0.0 && self.n == 0.0) {
            return Err(Error::Config(format!(
                "weights must be non-negative and not both zero, got m={} n={}",
                self.m, self.n
            )));
        }
        Ok(())
    }
}

/// Treatment of devices whose RAM requirement exceeds their server's RAM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityMode {
    /// Infeasible devices contribute zero computational cost and nothing else.
    PaperLiteral,
    /// Infeasible devices additionally add a fixed penalty to the total.
    Penalty { penalty_per_violation: f64 },
}

impl Default for FeasibilityMode {
    fn default() -> Self {
        FeasibilityMode::Penalty {
            penalty_per_violation: 1e3,
        }
    }
}

impl FeasibilityMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FeasibilityMode::Penalty {
                penalty_per_violation,
            } if !(penalty_per_violation > 0.0 && penalty_per_violation.is_finite()) => {
                Err(Error::Config(format!(
                    "penalty_per_violation must be positive, got {penalty_per_violation}"
                )))
            }
            _ => Ok(()),
        }
    }

    fn penalty(&self) -> f64 {
        match *self {
            FeasibilityMode::PaperLiteral => 0.0,
            FeasibilityMode::Penalty {
                penalty_per_violation,
            } => penalty_per_violation,
        }
    }
}

/// Weights, feasibility treatment and unit convention of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostModel {
    pub weights: Weights,
    pub mode: FeasibilityMode,
    #[serde(default)]
    pub units: DataUnits,
}

impl CostModel {
    pub fn new(weights: Weights, mode: FeasibilityMode) -> Self {
        Self {
            weights,
            mode,
            units: DataUnits::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.mode.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    pub per_device_time: Vec<f64>,
    pub per_device_cost: Vec<f64>,
    pub infeasible_count: usize,
}

/// Transfer plus processing time in seconds, with megabyte to megabit conversion.
pub fn device_time(device: &Device, server: &Server) -> Result<f64> {
    device_time_in(device, server, DataUnits::Megabits)
}

pub fn device_time_in(device: &Device, server: &Server, units: DataUnits) -> Result<f64> {
    if !(device.network_speed > 0.0) {
        return Err(Error::Domain(format!(
            "network speed must be positive, got {}",
            device.network_speed
        )));
    }
    if !(server.speed > 0.0) {
        return Err(Error::Domain(format!(
            "server speed must be positive, got {}",
            server.speed
        )));
    }
    Ok(device.data_size * units.factor() / device.network_speed
        + device.completion_req / server.speed)
}

pub fn is_feasible(device: &Device, server: &Server) -> bool {
    device.ram_req <= server.ram
}

/// Computational cost of running `device` on `server`. Infeasible placements
/// cost zero here in both modes; the penalty lives at the total level.
pub fn device_comp_cost(device: &Device, server: &Server, mode: FeasibilityMode) -> Result<f64> {
    device_comp_cost_in(device, server, mode, DataUnits::Megabits)
}

pub fn device_comp_cost_in(
    device: &Device,
    server: &Server,
    _mode: FeasibilityMode,
    units: DataUnits,
) -> Result<f64> {
    let t = device_time_in(device, server, units)?;
    Ok(if is_feasible(device, server) {
        server.cost_rate * t
    } else {
        0.0
    })
}

/// Weighted total over all devices. Summation runs in device index order.
pub fn total_cost(env: &Environment, assignment: &Assignment, model: &CostModel) -> Result<CostBreakdown> {
    assignment.check(env)?;
    let n = env.n_devices();
    let mut per_device_time = Vec::with_capacity(n);
    let mut per_device_cost = Vec::with_capacity(n);
    let mut infeasible_count = 0;
    let mut sum = 0.0;
    for (device, &s) in env.devices.iter().zip(&assignment.server_of) {
        let server = &env.servers[s];
        let t = device_time_in(device, server, model.units)?;
        let c = device_comp_cost_in(device, server, model.mode, model.units)?;
        if !is_feasible(device, server) {
            infeasible_count += 1;
        }
        sum += model.weights.m * c + model.weights.n * t;
        per_device_time.push(t);
        per_device_cost.push(c);
    }
    let total = sum + model.mode.penalty() * infeasible_count as f64;
    Ok(CostBreakdown {
        total,
        per_device_time,
        per_device_cost,
        infeasible_count,
    })
}

/// Precomputed per-(device, server) contributions for fast repeated
/// evaluation. [`CostTable::cost`] is bit-identical to
/// `total_cost(..).total` because it sums the same terms in the same order.
#[derive(Debug, Clone)]
pub struct CostTable {
    n_servers: usize,
    term: Vec<f64>,
    infeasible: Vec<bool>,
    penalty: f64,
}

impl CostTable {
    pub fn new(env: &Environment, model: &CostModel) -> Result<Self> {
        model.validate()?;
        let n_servers = env.n_servers();
        let mut term = Vec::with_capacity(env.n_devices() * n_servers);
        let mut infeasible = Vec::with_capacity(term.capacity());
        for device in &env.devices {
            for server in &env.servers {
                let t = device_time_in(device, server, model.units)?;
                let c = device_comp_cost_in(device, server, model.mode, model.units)?;
                term.push(model.weights.m * c + model.weights.n * t);
                infeasible.push(!is_feasible(device, server));
            }
        }
        Ok(Self {
            n_servers,
            term,
            infeasible,
            penalty: model.mode.penalty(),
        })
    }

    pub fn n_devices(&self) -> usize {
        if self.n_servers == 0 {
            0
        } else {
            self.term.len() / self.n_servers
        }
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    /// Total for an assignment given as raw server indices. Indices must be
    /// in range; callers decode positions before calling.
    pub fn cost(&self, server_of: &[usize]) -> f64 {
        let mut sum = 0.0;
        let mut violations = 0usize;
        for (j, &s) in server_of.iter().enumerate() {
            let k = j * self.n_servers + s;
            sum += self.term[k];
            violations += self.infeasible[k] as usize;
        }
        sum + self.penalty * violations as f64
    }
}

/// Exhaustive minimum over all `n_servers^n_devices` assignments. Ties go to
/// the lexicographically smallest assignment.
pub fn brute_force_optimum(env: &Environment, model: &CostModel, cap: u64) -> Result<(Assignment, f64)> {
    let n = env.n_devices();
    let k = env.n_servers();
    let space = (k as f64).powi(n as i32);
    if space > cap as f64 {
        return Err(Error::OracleRefused {
            assignments: space,
            cap,
        });
    }
    let table = CostTable::new(env, model)?;
    let mut current = vec![0usize; n];
    let mut best = current.clone();
    let mut best_cost = table.cost(&current);
    // Odometer over assignments in lexicographic order, last device fastest.
    loop {
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok((Assignment::new(best), best_cost));
            }
            pos -= 1;
            current[pos] += 1;
            if current[pos] < k {
                break;
            }
            current[pos] = 0;
        }
        let c = table.cost(&current);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&current);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_environment, EnvConfig};

    fn device() -> Device {
        Device {
            data_size: 100.0,
            completion_req: 30.0,
            ram_req: 2.0,
            network_speed: 100.0,
        }
    }

    fn server() -> Server {
        Server {
            speed: 15.0,
            cost_rate: 0.03,
            ram: 4.0,
        }
    }

    fn single(d: Device, s: Vec<Server>) -> Environment {
        Environment {
            config: EnvConfig::new(1, s.len(), 0),
            devices: vec![d],
            servers: s,
        }
    }

    #[test]
    fn hand_evaluated_time() {
        // (100 * 8) / 100 + 30 / 15
        assert_eq!(device_time(&device(), &server()).unwrap(), 10.0);
        assert_eq!(
            device_time_in(&device(), &server(), DataUnits::Literal).unwrap(),
            3.0
        );
    }

    #[test]
    fn zero_work_is_pure_transfer() {
        let d = Device {
            completion_req: 0.0,
            ..device()
        };
        assert_eq!(device_time(&d, &server()).unwrap(), 8.0);
    }

    #[test]
    fn time_decreases_toward_transfer_time() {
        let mut prev = f64::INFINITY;
        for speed in [1.0, 10.0, 1e3, 1e6, 1e12] {
            let t = device_time(&device(), &Server { speed, ..server() }).unwrap();
            assert!(t < prev && t > 8.0);
            prev = t;
        }
    }

    #[test]
    fn non_positive_speed_is_domain_error() {
        let s = Server {
            speed: 0.0,
            ..server()
        };
        assert!(matches!(device_time(&device(), &s), Err(Error::Domain(_))));
        let d = Device {
            network_speed: -1.0,
            ..device()
        };
        assert!(matches!(device_time(&d, &server()), Err(Error::Domain(_))));
    }

    #[test]
    fn comp_cost_cases() {
        let c = device_comp_cost(&device(), &server(), FeasibilityMode::default()).unwrap();
        assert!((c - 0.30).abs() < 1e-15);
        let small = Server {
            ram: 1.5,
            ..server()
        };
        assert_eq!(
            device_comp_cost(&device(), &small, FeasibilityMode::PaperLiteral).unwrap(),
            0.0
        );
        let free = Server {
            cost_rate: 0.0,
            ..server()
        };
        assert_eq!(
            device_comp_cost(&device(), &free, FeasibilityMode::PaperLiteral).unwrap(),
            0.0
        );
    }

    #[test]
    fn single_device_total() {
        let env = single(device(), vec![server()]);
        let b = total_cost(&env, &Assignment::new(vec![0]), &CostModel::default()).unwrap();
        // 10 * 0.30 + 0.01 * 10.0
        assert!((b.total - 3.1).abs() < 1e-12);
        assert_eq!(b.infeasible_count, 0);
    }

    #[test]
    fn empty_environment_costs_nothing() {
        let env = generate_environment(&EnvConfig::new(0, 3, 0)).unwrap();
        let b = total_cost(&env, &Assignment::new(vec![]), &CostModel::default()).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(b.per_device_time.is_empty());
    }

    #[test]
    fn three_device_fixture_matches_spreadsheet() {
        let env = Environment {
            config: EnvConfig::new(3, 2, 0),
            devices: vec![
                Device { data_size: 50.0, completion_req: 20.0, ram_req: 1.0, network_speed: 200.0 },
                Device { data_size: 120.0, completion_req: 40.0, ram_req: 2.0, network_speed: 600.0 },
                Device { data_size: 80.0, completion_req: 25.0, ram_req: 1.5, network_speed: 80.0 },
            ],
            servers: vec![
                Server { speed: 50.0, cost_rate: 0.05, ram: 4.0 },
                Server { speed: 100.0, cost_rate: 0.02, ram: 2.0 },
            ],
        };
        // Rows evaluated by hand:
        //   d0 -> s1: T = 400/200 + 20/100 = 2.2,  C = 0.02*2.2 = 0.044
        //   d1 -> s0: T = 960/600 + 40/50  = 2.4,  C = 0.05*2.4 = 0.12
        //   d2 -> s1: T = 640/80 + 25/100  = 8.25, C = 0.02*8.25 = 0.165
        // total = 10*(0.044+0.12+0.165) + 0.01*(2.2+2.4+8.25) = 3.29 + 0.1285
        let b = total_cost(&env, &Assignment::new(vec![1, 0, 1]), &CostModel::default()).unwrap();
        assert!((b.total - 3.4185).abs() < 1e-12, "{}", b.total);
        assert!((b.per_device_time[2] - 8.25).abs() < 1e-12);
    }

    #[test]
    fn penalty_counts_violations() {
        let small = Server {
            ram: 1.0,
            ..server()
        };
        let env = single(device(), vec![small]);
        let a = Assignment::new(vec![0]);
        let lit = total_cost(&env, &a, &CostModel::new(Weights::default(), FeasibilityMode::PaperLiteral)).unwrap();
        let pen = total_cost(&env, &a, &CostModel::default()).unwrap();
        assert_eq!(lit.infeasible_count, 1);
        // latency only: 0.01 * 10
        assert!((lit.total - 0.1).abs() < 1e-15);
        assert_eq!(pen.total, lit.total + 1e3);
    }

    #[test]
    fn bad_assignment_is_contract_violation() {
        let env = single(device(), vec![server()]);
        let m = CostModel::default();
        assert!(matches!(total_cost(&env, &Assignment::new(vec![]), &m), Err(Error::Contract(_))));
        assert!(matches!(total_cost(&env, &Assignment::new(vec![1]), &m), Err(Error::Contract(_))));
    }

    #[test]
    fn table_is_bit_identical_to_total_cost() {
        let env = generate_environment(&EnvConfig::new(40, 6, 11)).unwrap();
        let mut env2 = env.clone();
        env2.servers[2].ram = 1.2;
        for e in [&env, &env2] {
            for model in [
                CostModel::default(),
                CostModel::new(Weights::default(), FeasibilityMode::PaperLiteral),
            ] {
                let table = CostTable::new(e, &model).unwrap();
                let a: Vec<usize> = (0..40).map(|j| (j * 7 + 3) % 6).collect();
                let direct = total_cost(e, &Assignment::new(a.clone()), &model).unwrap().total;
                assert_eq!(table.cost(&a).to_bits(), direct.to_bits());
            }
        }
    }

    #[test]
    fn oracle_single_device_is_argmin() {
        let servers = vec![
            Server { speed: 20.0, cost_rate: 0.05, ram: 4.0 },
            Server { speed: 150.0, cost_rate: 0.03, ram: 4.0 },
            Server { speed: 100.0, cost_rate: 0.02, ram: 4.0 },
        ];
        let env = single(device(), servers);
        let m = CostModel::default();
        let (a, c) = brute_force_optimum(&env, &m, DEFAULT_ORACLE_CAP).unwrap();
        let costs: Vec<f64> = (0..3)
            .map(|s| total_cost(&env, &Assignment::new(vec![s]), &m).unwrap().total)
            .collect();
        let best = (0..3).min_by(|&x, &y| costs[x].total_cmp(&costs[y])).unwrap();
        assert_eq!(a.server_of, vec![best]);
        assert_eq!(c, costs[best]);
    }

    #[test]
    fn oracle_ties_break_lexicographically() {
        let env = Environment {
            config: EnvConfig::new(3, 3, 0),
            devices: vec![device(); 3],
            servers: vec![server(); 3],
        };
        let (a, _) = brute_force_optimum(&env, &CostModel::default(), DEFAULT_ORACLE_CAP).unwrap();
        assert_eq!(a.server_of, vec![0, 0, 0]);
    }

    #[test]
    fn oracle_refuses_above_cap() {
        let env = generate_environment(&EnvConfig::new(12, 4, 0)).unwrap();
        assert!(matches!(
            brute_force_optimum(&env, &CostModel::default(), DEFAULT_ORACLE_CAP),
            Err(Error::OracleRefused { .. })
        ));
        let env = generate_environment(&EnvConfig::new(12, 2, 0)).unwrap();
        assert!(brute_force_optimum(&env, &CostModel::default(), DEFAULT_ORACLE_CAP).is_ok());
    }
}
