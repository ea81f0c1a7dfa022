//! Global-best particle swarm optimization over device-to-server assignments.
//!
//! Each particle holds one continuous coordinate per device in
//! `[0, n_servers - POSITION_EPS]`; [`decode`] rounds it to a server index.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cost::{Assignment, CostModel, CostTable};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

/// Gap kept between the position upper bound and `n_servers`.
pub const POSITION_EPS: f64 = 1e-6;

/// Anything a swarm can minimize: a cost over decoded assignments.
pub trait Objective {
    fn n_devices(&self) -> usize;
    fn n_servers(&self) -> usize;
    fn cost(&self, server_of: &[usize]) -> f64;
}

impl Objective for CostTable {
    fn n_devices(&self) -> usize {
        CostTable::n_devices(self)
    }

    fn n_servers(&self) -> usize {
        CostTable::n_servers(self)
    }

    fn cost(&self, server_of: &[usize]) -> f64 {
        CostTable::cost(self, server_of)
    }
}

/// How the `U(a, b)` factors in the velocity update are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    /// Fresh `r1`, `r2` for every particle and dimension.
    #[default]
    PerDimension,
    /// One `r1`, `r2` pair per particle, shared across dimensions.
    PerParticle,
}

/// Inertia and acceleration coefficients for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub w: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsoParams {
    pub w: f64,
    pub c1: f64,
    pub c2: f64,
    pub n_particles: usize,
    pub max_iters: usize,
    pub u_low: f64,
    pub u_high: f64,
    /// Per-dimension velocity clamp; `None` means `0.2 * n_servers`.
    #[serde(default)]
    pub v_max: Option<f64>,
    #[serde(default)]
    pub draw_mode: DrawMode,
}

impl Default for PsoParams {
    fn default() -> Self {
        Self {
            w: 0.729,
            c1: 1.49445,
            c2: 1.49445,
            n_particles: 30,
            max_iters: 50,
            u_low: 0.0,
            u_high: 1.0,
            v_max: None,
            draw_mode: DrawMode::PerDimension,
        }
    }
}

impl PsoParams {
    pub fn coefficients(&self) -> Coefficients {
        Coefficients {
            w: self.w,
            c1: self.c1,
            c2: self.c2,
        }
    }

    pub fn v_max_for(&self, n_servers: usize) -> f64 {
        self.v_max.unwrap_or(0.2 * n_servers as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_particles < 2 {
            return bad(format!("n_particles must be at least 2, got {}", self.n_particles));
        }
        if !(self.u_low <= self.u_high) {
            return bad(format!("u_low {} exceeds u_high {}", self.u_low, self.u_high));
        }
        if let Some(v) = self.v_max {
            if !(v > 0.0) {
                return bad(format!("v_max must be positive, got {v}"));
            }
        }
        if !(self.w >= 0.0 && self.c1 >= 0.0 && self.c2 >= 0.0) {
            return bad(format!(
                "w, c1, c2 must be non-negative, got {}, {}, {}",
                self.w, self.c1, self.c2
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub pbest_position: Vec<f64>,
    pub pbest_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub particles: Vec<Particle>,
    pub gbest_position: Vec<f64>,
    pub gbest_cost: f64,
    /// Particle whose personal best is the global best.
    pub gbest_index: usize,
    pub iteration: usize,
    pub n_servers: usize,
}

impl SwarmState {
    pub fn position_upper(&self) -> f64 {
        position_upper(self.n_servers)
    }

    pub fn n_devices(&self) -> usize {
        self.gbest_position.len()
    }

    pub fn best_assignment(&self) -> Assignment {
        decode(&self.gbest_position, self.n_servers)
    }
}

/// Per-iteration record of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_cost: f64,
    pub best_assignment: Assignment,
    /// Global best after initialization and after every iteration.
    pub curve: Vec<f64>,
    /// Seconds of optimizer work, excluding environment setup.
    pub wall_time: f64,
    pub coefficient_trace: Vec<Coefficients>,
}

pub fn position_upper(n_servers: usize) -> f64 {
    n_servers as f64 - POSITION_EPS
}

fn decode_coord(x: f64, n_servers: usize) -> usize {
    let r = (x + 0.5).floor();
    if r <= 0.0 {
        0
    } else {
        (r as usize).min(n_servers - 1)
    }
}

/// Rounds each coordinate half-up and clamps it into `[0, n_servers - 1]`.
pub fn decode(position: &[f64], n_servers: usize) -> Assignment {
    let mut out = vec![0; position.len()];
    decode_into(position, n_servers, &mut out);
    Assignment::new(out)
}

pub fn decode_into(position: &[f64], n_servers: usize, out: &mut [usize]) {
    for (o, &x) in out.iter_mut().zip(position) {
        *o = decode_coord(x, n_servers);
    }
}

/// One coordinate of the velocity update, before clamping.
#[inline]
pub fn velocity_update(v: f64, x: f64, pbest: f64, gbest: f64, k: Coefficients, r1: f64, r2: f64) -> f64 {
    k.w * v + k.c1 * r1 * (pbest - x) + k.c2 * r2 * (gbest - x)
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn init_swarm<O: Objective + ?Sized>(objective: &O, params: &PsoParams, rng: &mut Rng) -> Result<SwarmState> {
    params.validate()?;
    let dims = objective.n_devices();
    let n_servers = objective.n_servers();
    if dims == 0 || n_servers == 0 {
        return Err(Error::Contract(
            "cannot optimize an environment without devices or servers".into(),
        ));
    }
    let upper = position_upper(n_servers);
    let v_max = params.v_max_for(n_servers);
    let mut decoded = vec![0; dims];
    let mut particles = Vec::with_capacity(params.n_particles);
    for _ in 0..params.n_particles {
        let position: Vec<f64> = (0..dims).map(|_| upper * rng.random::<f64>()).collect();
        let velocity: Vec<f64> = (0..dims).map(|_| uniform(rng, -v_max, v_max)).collect();
        decode_into(&position, n_servers, &mut decoded);
        let cost = objective.cost(&decoded);
        particles.push(Particle {
            pbest_position: position.clone(),
            position,
            velocity,
            pbest_cost: cost,
        });
    }
    let mut gbest_index = 0;
    for (i, p) in particles.iter().enumerate() {
        if p.pbest_cost < particles[gbest_index].pbest_cost {
            gbest_index = i;
        }
    }
    Ok(SwarmState {
        gbest_position: particles[gbest_index].pbest_position.clone(),
        gbest_cost: particles[gbest_index].pbest_cost,
        gbest_index,
        particles,
        iteration: 0,
        n_servers,
    })
}

/// Draws every `(r1, r2)` needed for one step, in particle then dimension order.
fn draw_factors(rng: &mut Rng, params: &PsoParams, n_particles: usize, dims: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = (params.u_low, params.u_high);
    match params.draw_mode {
        DrawMode::PerDimension => (0..n_particles * dims)
            .map(|_| (uniform(rng, lo, hi), uniform(rng, lo, hi)))
            .collect(),
        DrawMode::PerParticle => (0..n_particles)
            .map(|_| (uniform(rng, lo, hi), uniform(rng, lo, hi)))
            .collect(),
    }
}

/// Moves every particle once with coefficients `k`, then refreshes personal
/// and global bests on strict improvement.
pub fn step<O: Objective + ?Sized>(
    swarm: &mut SwarmState,
    k: Coefficients,
    params: &PsoParams,
    objective: &O,
    rng: &mut Rng,
) {
    let dims = swarm.n_devices();
    let n_servers = swarm.n_servers;
    let upper = position_upper(n_servers);
    let v_max = params.v_max_for(n_servers);
    let factors = draw_factors(rng, params, swarm.particles.len(), dims);
    let per_particle = params.draw_mode == DrawMode::PerParticle;
    let mut decoded = vec![0; dims];

    for (i, p) in swarm.particles.iter_mut().enumerate() {
        for d in 0..dims {
            let (r1, r2) = if per_particle {
                factors[i]
            } else {
                factors[i * dims + d]
            };
            let x = p.position[d];
            let v = velocity_update(
                p.velocity[d],
                x,
                p.pbest_position[d],
                swarm.gbest_position[d],
                k,
                r1,
                r2,
            )
            .clamp(-v_max, v_max);
            p.velocity[d] = v;
            p.position[d] = (x + v).clamp(0.0, upper);
        }
        decode_into(&p.position, n_servers, &mut decoded);
        let cost = objective.cost(&decoded);
        if cost < p.pbest_cost {
            p.pbest_cost = cost;
            p.pbest_position.copy_from_slice(&p.position);
        }
    }
    refresh_gbest(swarm);
    swarm.iteration += 1;
}

/// Adopts the first personal best that strictly beats the global best.
pub(crate) fn refresh_gbest(swarm: &mut SwarmState) {
    let mut best = None;
    let mut best_cost = swarm.gbest_cost;
    for (i, p) in swarm.particles.iter().enumerate() {
        if p.pbest_cost < best_cost {
            best_cost = p.pbest_cost;
            best = Some(i);
        }
    }
    if let Some(i) = best {
        swarm.gbest_cost = best_cost;
        swarm.gbest_index = i;
        swarm.gbest_position.copy_from_slice(&swarm.particles[i].pbest_position);
    }
}

/// Baseline PSO with fixed coefficients.
pub fn run(env: &Environment, params: &PsoParams, model: &CostModel, seed: u64) -> Result<RunResult> {
    let table = CostTable::new(env, model)?;
    run_on(&table, params, seed)
}

pub fn run_on<O: Objective + ?Sized>(objective: &O, params: &PsoParams, seed: u64) -> Result<RunResult> {
    let start = Instant::now();
    let mut rng = rng_from_seed(seed);
    let mut swarm = init_swarm(objective, params, &mut rng)?;
    let k = params.coefficients();
    let mut curve = Vec::with_capacity(params.max_iters + 1);
    curve.push(swarm.gbest_cost);
    for _ in 0..params.max_iters {
        step(&mut swarm, k, params, objective, &mut rng);
        curve.push(swarm.gbest_cost);
    }
    let wall_time = start.elapsed().as_secs_f64();
    Ok(RunResult {
        best_cost: swarm.gbest_cost,
        best_assignment: swarm.best_assignment(),
        curve,
        wall_time,
        coefficient_trace: vec![k; params.max_iters],
    })
}
