//! Command-line front end: environment generation, single-optimizer runs,
//! agent training and evaluation, full comparisons and brute-force optima.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mec_swarm::controller::{train, TrainConfig, TrainOptions};
use mec_swarm::cost::{brute_force_optimum, CostTable, DEFAULT_ORACLE_CAP};
use mec_swarm::env::{environment_to_json, generate_environment, EnvConfig};
use mec_swarm::harness::{emit_report, run_experiment, ExperimentConfig, Method};
use mec_swarm::sac::{load_checkpoint, save_checkpoint, SacAgent};
use mec_swarm::{pso, CostModel};

#[derive(Parser)]
#[command(name = "mec-swarm", version, about = "Swarm optimizers for edge task offloading")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an environment snapshot.
    GenEnv(GenEnvArgs),
    /// Run one optimizer and write a report.
    Run {
        #[arg(long)]
        method: Method,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Train the coefficient controller.
    Train(TrainArgs),
    /// Compare a trained agent against PSO and APSO.
    Evaluate(ExperimentArgs),
    /// Full comparison of the selected methods.
    Bench(ExperimentArgs),
    /// Exhaustive optimum of a small instance.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenEnvArgs {
    #[arg(long, default_value_t = 250)]
    devices: usize,
    #[arg(long, default_value_t = 20)]
    servers: usize,
    #[arg(long, env = "MEC_SWARM_SEED", default_value_t = 42)]
    seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Flags shared by `run`, `evaluate` and `bench`; each overrides the
/// matching field of `--config`.
#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    servers: Option<usize>,
    /// Environment snapshot written by `gen-env`.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    env_seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, env = "MEC_SWARM_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Omit wall times so outputs are byte-identical across re-runs.
    #[arg(long)]
    no_wall_time: bool,
    #[arg(long, env = "MEC_SWARM_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "MEC_SWARM_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    servers: Option<usize>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long, default_value = "checkpoint.json")]
    checkpoint: PathBuf,
    /// JSON-lines training log; standard output when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from the checkpoint at `--checkpoint`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 8)]
    devices: usize,
    #[arg(long, default_value_t = 2)]
    servers: usize,
    #[arg(long, env = "MEC_SWARM_SEED", default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
    cap: u64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl ExperimentArgs {
    fn resolve(self, default_methods: Option<Vec<Method>>) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig = match &self.config {
            Some(path) => read_json(path)?,
            None => ExperimentConfig::default(),
        };
        if self.config.is_none() {
            if let Some(m) = default_methods {
                cfg.methods = m;
            }
        }
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag { $field = v; })*
            };
        }
        set!(
            devices => cfg.devices,
            servers => cfg.servers,
            env_seeds => cfg.env_seeds,
            methods => cfg.methods,
            runs => cfg.runs,
            seed => cfg.seed,
            output => cfg.output,
            particles => cfg.pso.n_particles,
            max_iters => cfg.pso.max_iters,
            threads => cfg.threads,
        );
        if self.env.is_some() {
            cfg.env_file = self.env;
        }
        if self.checkpoint.is_some() {
            cfg.checkpoint = self.checkpoint;
        }
        if self.no_wall_time {
            cfg.record_wall_time = false;
        }
        Ok(cfg)
    }
}

/// Loads the agent when APSO-SAC is selected. The controller settings it was
/// trained with replace the configured ones so actions map identically.
fn load_agent(cfg: &mut ExperimentConfig) -> Result<Option<SacAgent>> {
    if !cfg.methods.contains(&Method::Apsosac) {
        return Ok(None);
    }
    let Some(path) = &cfg.checkpoint else {
        bail!("apsosac needs --checkpoint");
    };
    let ck = load_checkpoint(path)?;
    if let Some(meta) = &ck.metadata {
        if let Ok(trained) = serde_json::from_value::<TrainConfig>(meta.clone()) {
            cfg.controller = trained.controller;
        }
    }
    Ok(Some(ck.agent()?))
}

fn experiment(mut cfg: ExperimentConfig) -> Result<()> {
    let agent = load_agent(&mut cfg)?;
    let report = run_experiment(&cfg, agent.as_ref())?;
    emit_report(&report, &cfg, &cfg.output)?;
    let mut out = io::stdout().lock();
    for s in &report.methods {
        writeln!(
            out,
            "{:<8} mean {:.4} std {:.4} improvement vs pso {}",
            s.method,
            s.mean_best_cost,
            s.std_best_cost,
            s.improvement_vs_pso.map_or("NA".into(), |v| format!("{v:.2}%")),
        )?;
    }
    writeln!(out, "report written to {}", cfg.output.display())?;
    Ok(())
}

fn gen_env(args: GenEnvArgs) -> Result<()> {
    let env = generate_environment(&EnvConfig::new(args.devices, args.servers, args.seed))?;
    let text = environment_to_json(&env);
    match args.output {
        Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = args.devices {
        cfg.n_devices = v;
    }
    if let Some(v) = args.servers {
        cfg.n_servers = v;
    }
    if let Some(v) = args.steps {
        cfg.sac.total_train_steps = v;
    }
    if let Some(v) = args.hidden {
        cfg.sac.hidden = v;
    }
    if let Some(v) = args.max_iters {
        cfg.controller.pso.max_iters = v;
    }
    if let Some(v) = args.particles {
        cfg.controller.pso.n_particles = v;
    }
    let resume = if args.resume { Some(load_checkpoint(&args.checkpoint)?) } else { None };
    let mut sink: Box<dyn Write> = match &args.log {
        Some(path) => {
            let file = if resume.is_some() {
                fs::OpenOptions::new().append(true).create(true).open(path)
            } else {
                fs::File::create(path)
            };
            Box::new(BufWriter::new(file.with_context(|| format!("opening {}", path.display()))?))
        }
        None => Box::new(io::stdout().lock()),
    };
    let outcome = train(
        &cfg,
        TrainOptions {
            checkpoint_path: Some(args.checkpoint.clone()),
            resume,
            log: Some(&mut *sink),
            stop_after: None,
        },
    )?;
    sink.flush()?;
    drop(sink);
    save_checkpoint(&outcome.checkpoint, &args.checkpoint)?;
    eprintln!(
        "trained {} episodes, {} environment steps; checkpoint {}",
        outcome.episodes,
        outcome.env_steps,
        args.checkpoint.display()
    );
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let env = generate_environment(&EnvConfig::new(args.devices, args.servers, args.seed))?;
    let model = CostModel::default();
    let (assignment, optimum) = brute_force_optimum(&env, &model, args.cap)?;
    let table = CostTable::new(&env, &model)?;
    let swarm = pso::run_on(&table, &pso::PsoParams::default(), args.seed)?;
    let out = serde_json::json!({
        "devices": args.devices,
        "servers": args.servers,
        "seed": args.seed,
        "assignments": (args.servers as f64).powi(args.devices as i32),
        "optimum": optimum,
        "optimal_assignment": assignment.server_of,
        "pso_best_cost": swarm.best_cost,
        "pso_reaches_optimum": swarm.best_cost == optimum,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenEnv(a) => gen_env(a),
        Command::Run { method, exp } => {
            let mut cfg = exp.resolve(None)?;
            cfg.methods = vec![method];
            experiment(cfg)
        }
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(exp) => experiment(exp.resolve(Some(Method::ALL.to_vec()))?),
        Command::Bench(exp) => experiment(exp.resolve(None)?),
        Command::Oracle(a) => oracle(a),
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            eprintln!("{}", one_line(&first));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
