//! Seeded experiments comparing the optimizers on shared environments, plus
//! report emission.

mod report;
mod stats;

pub use report::{emit_report, render_svg, summary_csv};
pub use stats::{mean, paired_stats, sign_test_p, std_dev, PairedStats, MIN_PAIRS};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apso::{run_apso_on, ApsoParams};
use crate::controller::{check_agent, run_episode_on, ControllerParams, Greedy};
use crate::cost::{CostModel, CostTable};
use crate::env::{generate_environment, load_environment, EnvConfig, Ranges};
use crate::error::{Error, Result};
use crate::pso::{self, PsoParams};
use crate::rng::{derive_seed, streams, RNG_ALGORITHM};
use crate::sac::SacAgent;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pso,
    Apso,
    Apsosac,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pso, Method::Apso, Method::Apsosac];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pso => "pso",
            Method::Apso => "apso",
            Method::Apsosac => "apsosac",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pso" => Ok(Method::Pso),
            "apso" => Ok(Method::Apso),
            "apsosac" | "apso-sac" => Ok(Method::Apsosac),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected pso, apso or apsosac)"
            ))),
        }
    }
}

/// One comparison experiment. `pso` sets the swarm size, horizon and velocity
/// handling for every method; `apso` and `controller` add their own knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub devices: usize,
    pub servers: usize,
    pub ranges: Ranges,
    /// Environment snapshot to use instead of generating from seeds.
    pub env_file: Option<PathBuf>,
    /// Environment seeds; empty means the master seed alone.
    pub env_seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub cost: CostModel,
    pub runs: usize,
    /// Master seed from which swarm seeds are derived.
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub output: PathBuf,
    pub pso: PsoParams,
    pub apso: ApsoParams,
    pub controller: ControllerParams,
    /// When false, wall times are written as missing so outputs are
    /// byte-stable across re-runs.
    pub record_wall_time: bool,
    /// Worker threads across runs; 0 picks one per core. Results do not
    /// depend on it, so it is left out of the echoed configuration.
    #[serde(skip_serializing)]
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            devices: 250,
            servers: 20,
            ranges: Ranges::default(),
            env_file: None,
            env_seeds: Vec::new(),
            methods: vec![Method::Pso, Method::Apso],
            cost: CostModel::default(),
            runs: 10,
            seed: 42,
            checkpoint: None,
            output: PathBuf::from("results"),
            pso: PsoParams::default(),
            apso: ApsoParams::default(),
            controller: ControllerParams::default(),
            record_wall_time: true,
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.methods.contains(&Method::Apsosac) && self.checkpoint.is_none() {
            return Err(Error::Config("apsosac needs a checkpoint path".into()));
        }
        self.cost.validate()?;
        self.pso.validate()?;
        self.apso_params().validate()?;
        self.controller_params().validate()?;
        if self.env_file.is_some() {
            return Ok(());
        }
        self.env_config(0).validate()
    }

    /// Cost tables for every environment, keyed by environment seed.
    pub fn cost_tables(&self) -> Result<Vec<(u64, CostTable)>> {
        if let Some(path) = &self.env_file {
            let env = load_environment(path)?;
            return Ok(vec![(env.config.seed, CostTable::new(&env, &self.cost)?)]);
        }
        self.env_seeds()
            .into_iter()
            .map(|s| Ok((s, CostTable::new(&generate_environment(&self.env_config(s))?, &self.cost)?)))
            .collect()
    }

    pub fn env_seeds(&self) -> Vec<u64> {
        if self.env_seeds.is_empty() {
            vec![self.seed]
        } else {
            self.env_seeds.clone()
        }
    }

    pub fn env_config(&self, seed: u64) -> EnvConfig {
        EnvConfig {
            n_devices: self.devices,
            n_servers: self.servers,
            seed,
            ranges: self.ranges,
        }
    }

    /// Swarm seed shared by every method in run `r`.
    pub fn swarm_seed(&self, run: usize) -> u64 {
        derive_seed(self.seed, streams::SWARM, run as u64)
    }

    pub fn apso_params(&self) -> ApsoParams {
        ApsoParams {
            base: self.pso,
            ..self.apso
        }
    }

    pub fn controller_params(&self) -> ControllerParams {
        ControllerParams {
            pso: self.pso,
            ..self.controller
        }
    }

    /// Methods in canonical order without duplicates.
    pub fn method_list(&self) -> Vec<Method> {
        Method::ALL
            .into_iter()
            .filter(|m| self.methods.contains(m))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub env_seed: u64,
    pub run: usize,
    pub swarm_seed: u64,
    pub best_cost: f64,
    pub wall_time: Option<f64>,
    /// Share of `wall_time` spent building observations (apsosac only).
    pub observation_time: Option<f64>,
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub mean_best_cost: f64,
    pub std_best_cost: f64,
    pub min_best_cost: f64,
    pub max_best_cost: f64,
    pub mean_wall_time: Option<f64>,
    pub mean_wall_time_excl_observation: Option<f64>,
    /// `(mean_pso - mean) / mean_pso * 100`.
    pub improvement_vs_pso: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub base: Method,
    pub other: Method,
    /// `(mean_base - mean_other) / mean_base * 100`.
    pub improvement_pct: f64,
    /// Differences `base - other` over paired runs; `None` below
    /// [`MIN_PAIRS`] pairs.
    pub stats: Option<PairedStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub method: Method,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRatios {
    pub apso_over_pso: Option<f64>,
    pub apsosac_over_pso: Option<f64>,
    /// APSO-SAC without the observation cost.
    pub apsosac_excl_observation_over_pso: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub env_seeds: Vec<u64>,
    pub swarm_seeds: Vec<u64>,
    pub rng_algorithm: String,
    /// Every method ran on exactly the same (environment, swarm) seed pairs.
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    pub max_iters: usize,
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<PairedComparison>,
    pub runtime: RuntimeRatios,
    pub pairing: Pairing,
    pub curves: Vec<CurveSummary>,
    pub runs: Vec<RunRecord>,
}

impl ComparisonReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == method)
    }

    pub fn comparison(&self, base: Method, other: Method) -> Option<&PairedComparison> {
        self.comparisons
            .iter()
            .find(|c| c.base == base && c.other == other)
    }

    pub fn costs(&self, method: Method) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.best_cost)
            .collect()
    }
}

/// Runs every selected method on every (environment seed, run) pair.
/// `agent` is required when APSO-SAC is selected.
pub fn run_experiment(cfg: &ExperimentConfig, agent: Option<&SacAgent>) -> Result<ComparisonReport> {
    cfg.validate()?;
    let methods = cfg.method_list();
    let controller = cfg.controller_params();
    let apso = cfg.apso_params();
    if methods.contains(&Method::Apsosac) {
        let agent = agent.ok_or_else(|| Error::Config("apsosac selected without an agent".into()))?;
        check_agent(agent, &controller)?;
    }
    let tables = cfg.cost_tables()?;
    let jobs: Vec<(usize, usize)> = (0..tables.len())
        .flat_map(|e| (0..cfg.runs).map(move |r| (e, r)))
        .collect();

    let run_job = |&(e, r): &(usize, usize)| -> Result<Vec<RunRecord>> {
        let (env_seed, table) = (&tables[e].0, &tables[e].1);
        let swarm_seed = cfg.swarm_seed(r);
        methods
            .iter()
            .map(|&m| {
                let (result, observation_time) = match m {
                    Method::Pso => (pso::run_on(table, &cfg.pso, swarm_seed)?, None),
                    Method::Apso => (run_apso_on(table, &apso, swarm_seed)?, None),
                    Method::Apsosac => {
                        let agent = agent.expect("checked above");
                        let ep = run_episode_on(&mut Greedy(agent), table, &controller, *env_seed, swarm_seed)?;
                        (ep.run, Some(ep.observation_time))
                    }
                };
                Ok(RunRecord {
                    method: m,
                    env_seed: *env_seed,
                    run: r,
                    swarm_seed,
                    best_cost: result.best_cost,
                    wall_time: cfg.record_wall_time.then_some(result.wall_time),
                    observation_time: observation_time.filter(|_| cfg.record_wall_time),
                    curve: result.curve,
                })
            })
            .collect()
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_job: Vec<Vec<RunRecord>> = pool.install(|| jobs.par_iter().map(run_job).collect::<Result<_>>())?;

    // Method-major order: all pso runs, then all apso runs, ...
    let mut runs = Vec::with_capacity(per_job.len() * methods.len());
    for (i, _) in methods.iter().enumerate() {
        runs.extend(per_job.iter().map(|recs| recs[i].clone()));
    }
    build_report(cfg, &methods, runs)
}

/// Aggregates per-run records into a report.
pub fn build_report(cfg: &ExperimentConfig, methods: &[Method], runs: Vec<RunRecord>) -> Result<ComparisonReport> {
    let of = |m: Method| runs.iter().filter(move |r| r.method == m);
    let costs = |m: Method| of(m).map(|r| r.best_cost).collect::<Vec<_>>();
    let mean_of = |xs: Vec<f64>| (!xs.is_empty()).then(|| mean(&xs));
    let wall = |m: Method| -> Option<f64> { of(m).map(|r| r.wall_time).collect::<Option<Vec<_>>>().and_then(mean_of) };
    let wall_excl = |m: Method| -> Option<f64> {
        of(m)
            .map(|r| Some(r.wall_time? - r.observation_time.unwrap_or(0.0)))
            .collect::<Option<Vec<_>>>()
            .and_then(mean_of)
    };
    let pso_mean = methods.contains(&Method::Pso).then(|| mean(&costs(Method::Pso)));

    let summaries: Vec<MethodSummary> = methods
        .iter()
        .map(|&m| {
            let c = costs(m);
            let mean_cost = mean(&c);
            MethodSummary {
                method: m,
                runs: c.len(),
                mean_best_cost: mean_cost,
                std_best_cost: std_dev(&c),
                min_best_cost: c.iter().copied().fold(f64::INFINITY, f64::min),
                max_best_cost: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_wall_time: wall(m),
                mean_wall_time_excl_observation: if m == Method::Apsosac { wall_excl(m) } else { wall(m) },
                improvement_vs_pso: pso_mean.map(|p| (p - mean_cost) / p * 100.0),
            }
        })
        .collect();

    let mut comparisons = Vec::new();
    for (i, &base) in methods.iter().enumerate() {
        for &other in &methods[i + 1..] {
            let (cb, co) = (costs(base), costs(other));
            let mb = mean(&cb);
            comparisons.push(PairedComparison {
                base,
                other,
                improvement_pct: (mb - mean(&co)) / mb * 100.0,
                stats: if cb.len() >= MIN_PAIRS { Some(paired_stats(&cb, &co)?) } else { None },
            });
        }
    }

    let curves = methods
        .iter()
        .map(|&m| {
            let cs: Vec<&Vec<f64>> = of(m).map(|r| &r.curve).collect();
            let len = cs.first().map_or(0, |c| c.len());
            let col = |t: usize| cs.iter().map(move |c| c[t]);
            CurveSummary {
                method: m,
                mean: (0..len).map(|t| col(t).sum::<f64>() / cs.len() as f64).collect(),
                min: (0..len).map(|t| col(t).fold(f64::INFINITY, f64::min)).collect(),
                max: (0..len).map(|t| col(t).fold(f64::NEG_INFINITY, f64::max)).collect(),
            }
        })
        .collect();

    let ratio = |m: Method, excl: bool| -> Option<f64> {
        let base = wall(Method::Pso)?;
        let t = if excl { wall_excl(m)? } else { wall(m)? };
        (base > 0.0).then(|| t / base)
    };
    let runtime = RuntimeRatios {
        apso_over_pso: ratio(Method::Apso, false),
        apsosac_over_pso: ratio(Method::Apsosac, false),
        apsosac_excl_observation_over_pso: ratio(Method::Apsosac, true),
    };

    let key = |m: Method| of(m).map(|r| (r.env_seed, r.swarm_seed)).collect::<Vec<_>>();
    let first = methods.first().map(|&m| key(m)).unwrap_or_default();
    let shared = methods.iter().all(|&m| key(m) == first);
    let mut swarm_seeds: Vec<u64> = (0..cfg.runs).map(|r| cfg.swarm_seed(r)).collect();
    swarm_seeds.dedup();

    Ok(ComparisonReport {
        format_version: REPORT_FORMAT_VERSION,
        max_iters: cfg.pso.max_iters,
        methods: summaries,
        comparisons,
        runtime,
        pairing: Pairing {
            env_seeds: tables_seeds(&runs),
            swarm_seeds,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            shared,
        },
        curves,
        runs,
    })
}

fn tables_seeds(runs: &[RunRecord]) -> Vec<u64> {
    let mut seeds: Vec<u64> = Vec::new();
    for r in runs {
        if !seeds.contains(&r.env_seed) {
            seeds.push(r.env_seed);
        }
    }
    seeds
}

/// Deterministic-policy evaluation of `agent` against PSO and APSO on the
/// configured environments and swarm seeds.
pub fn evaluate(agent: &SacAgent, cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let mut cfg = cfg.clone();
    cfg.methods = Method::ALL.to_vec();
    if cfg.checkpoint.is_none() {
        cfg.checkpoint = Some(PathBuf::from("<in-memory agent>"));
    }
    run_experiment(&cfg, Some(agent))
}
