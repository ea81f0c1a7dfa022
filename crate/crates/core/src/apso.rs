//! Adaptive PSO: evolutionary-state estimation and coefficient adaptation
//! layered on the baseline stepper.

use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cost::{CostModel, CostTable};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::pso::{self, decode, Coefficients, Objective, PsoParams, RunResult, SwarmState};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionaryState {
    Exploration,
    Exploitation,
    Convergence,
    JumpingOut,
}

/// Normalized position of the global-best particle within the swarm's
/// spread of mean distances. Always in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct EvolFactor(f64);

impl EvolFactor {
    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn new(f: f64) -> Self {
        if f.is_nan() {
            EvolFactor(0.0)
        } else {
            EvolFactor(f.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApsoParams {
    pub base: PsoParams,
    /// Coefficients at iteration 0.
    pub c1_init: f64,
    pub c2_init: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub c_sum_max: f64,
    pub delta_range: (f64, f64),
    /// When false every step uses the fixed coefficients of `base`.
    pub adaptive: bool,
    pub els_enabled: bool,
    pub els_sigma_range: (f64, f64),
}

impl Default for ApsoParams {
    fn default() -> Self {
        Self {
            base: PsoParams::default(),
            c1_init: 2.0,
            c2_init: 2.0,
            c_min: 1.5,
            c_max: 2.5,
            c_sum_max: 4.0,
            delta_range: (0.05, 0.1),
            adaptive: true,
            els_enabled: false,
            els_sigma_range: (0.1, 1.0),
        }
    }
}

impl ApsoParams {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0 < self.c_min && self.c_min < self.c_max) {
            return bad(format!(
                "need 0 < c_min < c_max, got {} and {}",
                self.c_min, self.c_max
            ));
        }
        let (lo, hi) = self.delta_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return bad(format!("delta_range ({lo}, {hi}) must lie inside (0, 1)"));
        }
        if !(self.c_sum_max >= 2.0 * self.c_min) {
            return bad(format!(
                "c_sum_max {} below 2 * c_min {}",
                self.c_sum_max, self.c_min
            ));
        }
        let (slo, shi) = self.els_sigma_range;
        if !(0.0 <= slo && slo <= shi) {
            return bad(format!("els_sigma_range ({slo}, {shi}) is not an interval"));
        }
        Ok(())
    }
}

/// Mean Euclidean distance from each particle's position to every other.
pub fn mean_distances(swarm: &SwarmState) -> Vec<f64> {
    let n = swarm.particles.len();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        let a = &swarm.particles[i].position;
        for j in (i + 1)..n {
            let d = euclidean(a, &swarm.particles[j].position);
            sums[i] += d;
            sums[j] += d;
        }
    }
    let denom = (n.max(2) - 1) as f64;
    sums.iter().map(|s| s / denom).collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Evolutionary factor from a precomputed [`mean_distances`] vector.
pub fn factor_from_distances(distances: &[f64], gbest_index: usize) -> EvolFactor {
    let d_g = distances[gbest_index];
    let d_min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if d_max == d_min {
        EvolFactor(0.0)
    } else {
        EvolFactor::new((d_g - d_min) / (d_max - d_min))
    }
}

pub fn evolutionary_factor(swarm: &SwarmState) -> Result<EvolFactor> {
    if swarm.particles.len() < 2 {
        return Err(Error::Contract(
            "evolutionary factor needs at least two particles".into(),
        ));
    }
    Ok(factor_from_distances(
        &mean_distances(swarm),
        swarm.gbest_index,
    ))
}

/// Crisp quarter intervals of `f`. `prev` is reserved for hysteresis variants.
pub fn classify_state(f: EvolFactor, _prev: EvolutionaryState) -> EvolutionaryState {
    match f.value() {
        x if x < 0.25 => EvolutionaryState::Convergence,
        x if x < 0.5 => EvolutionaryState::Exploitation,
        x if x < 0.75 => EvolutionaryState::Exploration,
        _ => EvolutionaryState::JumpingOut,
    }
}

/// Applies one state rule with explicit adjustment magnitudes, then clamps
/// into `[c_min, c_max]` and rescales onto `c_sum_max` when the sum exceeds it.
pub fn adapt_coefficients_with(
    state: EvolutionaryState,
    c1: f64,
    c2: f64,
    delta1: f64,
    delta2: f64,
    params: &ApsoParams,
) -> (f64, f64) {
    use EvolutionaryState::*;
    let (a, b) = match state {
        Exploration => (c1 + delta1, c2 - delta2),
        Exploitation => (c1 + 0.5 * delta1, c2 - 0.5 * delta2),
        Convergence => (c1 + 0.5 * delta1, c2 + 0.5 * delta2),
        JumpingOut => (c1 - delta1, c2 + delta2),
    };
    let mut a = a.clamp(params.c_min, params.c_max);
    let mut b = b.clamp(params.c_min, params.c_max);
    let cap = params.c_sum_max;
    if a + b > cap {
        let scale = cap / (a + b);
        a = (a * scale).max(params.c_min);
        b = (cap - a).max(params.c_min);
        if a + b > cap {
            a = cap - b;
        }
        // Rounding can leave the sum an ulp above the cap.
        while a + b > cap {
            if a >= b {
                a = a.next_down();
            } else {
                b = b.next_down();
            }
        }
    }
    (a, b)
}

/// Draws `delta1`, `delta2` uniformly from `delta_range` and applies the rule
/// for `state`.
pub fn adapt_coefficients(
    state: EvolutionaryState,
    c1: f64,
    c2: f64,
    rng: &mut Rng,
    params: &ApsoParams,
) -> (f64, f64) {
    let (lo, hi) = params.delta_range;
    let d1 = lo + (hi - lo) * rng.random::<f64>();
    let d2 = lo + (hi - lo) * rng.random::<f64>();
    adapt_coefficients_with(state, c1, c2, d1, d2, params)
}

/// Sigmoid inertia map, increasing from 0.4 at `f = 0` to about 0.9 at `f = 1`.
pub fn adapt_inertia(f: EvolFactor) -> f64 {
    1.0 / (1.0 + 1.5 * (-2.6 * f.value()).exp())
}

/// Gaussian step scale at `iteration`, linear from the upper to the lower
/// end of `els_sigma_range`.
pub fn els_sigma(iteration: usize, max_iters: usize, params: &ApsoParams) -> f64 {
    let (lo, hi) = params.els_sigma_range;
    if max_iters == 0 {
        return hi;
    }
    let t = iteration.min(max_iters) as f64 / max_iters as f64;
    lo * t + hi * (1.0 - t)
}

/// Perturbs one random dimension of a copy of the global best and lets it
/// replace the worst particle if it beats that particle's personal best.
/// Returns whether the copy was accepted.
pub fn elitist_learning<O: Objective + ?Sized>(
    swarm: &mut SwarmState,
    rng: &mut Rng,
    params: &ApsoParams,
    objective: &O,
) -> bool {
    let dims = swarm.n_devices();
    let d = rng.random_range(0..dims);
    let sigma = els_sigma(swarm.iteration, params.base.max_iters, params);
    let z: f64 = StandardNormal.sample(rng);
    let mut candidate = swarm.gbest_position.clone();
    candidate[d] = (candidate[d] + sigma * z).clamp(0.0, swarm.position_upper());
    let cost = objective.cost(&decode(&candidate, swarm.n_servers).server_of);

    let mut worst = 0;
    for (i, p) in swarm.particles.iter().enumerate() {
        if p.pbest_cost > swarm.particles[worst].pbest_cost {
            worst = i;
        }
    }
    let p = &mut swarm.particles[worst];
    if cost < p.pbest_cost {
        p.position.copy_from_slice(&candidate);
        p.pbest_position.copy_from_slice(&candidate);
        p.pbest_cost = cost;
        pso::refresh_gbest(swarm);
        true
    } else {
        false
    }
}

pub fn run_apso(
    env: &Environment,
    params: &ApsoParams,
    model: &CostModel,
    seed: u64,
) -> Result<RunResult> {
    let table = CostTable::new(env, model)?;
    run_apso_on(&table, params, seed)
}

pub fn run_apso_on<O: Objective + ?Sized>(
    objective: &O,
    params: &ApsoParams,
    seed: u64,
) -> Result<RunResult> {
    params.validate()?;
    let start = Instant::now();
    let base = &params.base;
    let mut rng = rng_from_seed(seed);
    let mut swarm = pso::init_swarm(objective, base, &mut rng)?;
    let mut curve = Vec::with_capacity(base.max_iters + 1);
    let mut trace = Vec::with_capacity(base.max_iters);
    curve.push(swarm.gbest_cost);

    let (mut c1, mut c2) = (params.c1_init, params.c2_init);
    let mut state = EvolutionaryState::Exploration;
    for _ in 0..base.max_iters {
        let k = if params.adaptive {
            let f = evolutionary_factor(&swarm)?;
            state = classify_state(f, state);
            (c1, c2) = adapt_coefficients(state, c1, c2, &mut rng, params);
            Coefficients {
                w: adapt_inertia(f),
                c1,
                c2,
            }
        } else {
            base.coefficients()
        };
        pso::step(&mut swarm, k, base, objective, &mut rng);
        if params.els_enabled {
            elitist_learning(&mut swarm, &mut rng, params, objective);
        }
        trace.push(k);
        curve.push(swarm.gbest_cost);
    }
    let wall_time = start.elapsed().as_secs_f64();
    Ok(RunResult {
        best_cost: swarm.gbest_cost,
        best_assignment: swarm.best_assignment(),
        curve,
        wall_time,
        coefficient_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_environment, EnvConfig};
    use crate::pso::{init_swarm, Particle};
    use proptest::prelude::*;

    fn line_swarm(xs: &[f64], gbest_index: usize) -> SwarmState {
        let particles = xs
            .iter()
            .map(|&x| Particle {
                position: vec![x],
                velocity: vec![0.0],
                pbest_position: vec![x],
                pbest_cost: 1.0,
            })
            .collect();
        SwarmState {
            particles,
            gbest_position: vec![xs[gbest_index]],
            gbest_cost: 1.0,
            gbest_index,
            iteration: 0,
            n_servers: 5,
        }
    }

    #[test]
    fn identical_particles_give_zero() {
        let s = line_swarm(&[1.5, 1.5, 1.5], 1);
        assert_eq!(evolutionary_factor(&s).unwrap().value(), 0.0);
    }

    #[test]
    fn three_on_a_line() {
        let s = line_swarm(&[0.0, 1.0, 2.0], 0);
        assert_eq!(mean_distances(&s), vec![1.5, 1.0, 1.5]);
        assert_eq!(evolutionary_factor(&s).unwrap().value(), 1.0);
        let s = line_swarm(&[0.0, 1.0, 2.0], 1);
        assert_eq!(evolutionary_factor(&s).unwrap().value(), 0.0);
    }

    #[test]
    fn single_particle_is_an_error() {
        assert!(evolutionary_factor(&line_swarm(&[0.0], 0)).is_err());
    }

    #[test]
    fn state_intervals() {
        let prev = EvolutionaryState::Exploration;
        let cases = [
            (0.0, EvolutionaryState::Convergence),
            (0.2499, EvolutionaryState::Convergence),
            (0.25, EvolutionaryState::Exploitation),
            (0.5, EvolutionaryState::Exploration),
            (0.75, EvolutionaryState::JumpingOut),
            (1.0, EvolutionaryState::JumpingOut),
        ];
        for (f, want) in cases {
            assert_eq!(classify_state(EvolFactor::new(f), prev), want, "f = {f}");
        }
    }

    #[test]
    fn convergence_rescales_to_cap() {
        let p = ApsoParams::default();
        let mut rng = rng_from_seed(1);
        let (a, b) = adapt_coefficients(EvolutionaryState::Convergence, 2.0, 2.0, &mut rng, &p);
        assert_eq!(a + b, 4.0);
    }

    #[test]
    fn jumping_out_clamps_at_c_min() {
        let p = ApsoParams::default();
        let mut rng = rng_from_seed(1);
        let (a, _) = adapt_coefficients(EvolutionaryState::JumpingOut, 1.5, 2.0, &mut rng, &p);
        assert_eq!(a, 1.5);
    }

    #[test]
    fn exploration_hand_case() {
        let p = ApsoParams::default();
        let (a, b) =
            adapt_coefficients_with(EvolutionaryState::Exploration, 1.8, 2.2, 0.08, 0.08, &p);
        assert!((a - 1.88).abs() < 1e-12 && (b - 2.12).abs() < 1e-12);
        // untouched by the rescale: identical to the bare clamp
        assert_eq!((a, b), (1.8 + 0.08, 2.2 - 0.08));
    }

    #[test]
    fn inertia_endpoints_and_monotonicity() {
        assert_eq!(adapt_inertia(EvolFactor::new(0.0)), 1.0 / 2.5);
        let top = 1.0 / (1.0 + 1.5 * (-2.6f64).exp());
        assert_eq!(adapt_inertia(EvolFactor::new(1.0)), top);
        assert!((top - 0.8998).abs() < 1e-4);
        let mut prev = 0.0;
        for i in 0..=100 {
            let w = adapt_inertia(EvolFactor::new(i as f64 / 100.0));
            assert!(w > prev);
            prev = w;
        }
    }

    #[test]
    fn sigma_schedule_endpoints() {
        let p = ApsoParams::default();
        assert_eq!(els_sigma(0, 50, &p), 1.0);
        assert_eq!(els_sigma(50, 50, &p), 0.1);
    }

    fn small() -> (CostTable, ApsoParams) {
        let env = generate_environment(&EnvConfig::new(8, 4, 3)).unwrap();
        (
            CostTable::new(&env, &CostModel::default()).unwrap(),
            ApsoParams::default(),
        )
    }

    #[test]
    fn els_rejects_worse_candidate() {
        let (t, p) = small();
        let mut rng = rng_from_seed(2);
        let mut swarm = init_swarm(&t, &p.base, &mut rng).unwrap();
        for q in &mut swarm.particles {
            q.pbest_cost = f64::NEG_INFINITY;
        }
        let before = swarm.clone();
        assert!(!elitist_learning(&mut swarm, &mut rng, &p, &t));
        assert_eq!(swarm, before);
    }

    #[test]
    fn els_accepts_better_candidate() {
        let (t, p) = small();
        let mut rng = rng_from_seed(2);
        let mut swarm = init_swarm(&t, &p.base, &mut rng).unwrap();
        for q in &mut swarm.particles {
            q.pbest_cost = f64::INFINITY;
        }
        swarm.gbest_cost = f64::INFINITY;
        assert!(elitist_learning(&mut swarm, &mut rng, &p, &t));
        assert!(swarm.gbest_cost.is_finite());
    }

    #[test]
    fn adaptation_changes_coefficients() {
        let env = generate_environment(&EnvConfig::new(30, 6, 3)).unwrap();
        let r = run_apso(&env, &ApsoParams::default(), &CostModel::default(), 1).unwrap();
        let first = r.coefficient_trace[0];
        assert!(r.coefficient_trace.iter().any(|k| *k != first));
        assert!(r.curve.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn disabled_adaptation_matches_baseline() {
        let env = generate_environment(&EnvConfig::new(30, 6, 3)).unwrap();
        let params = ApsoParams {
            adaptive: false,
            ..ApsoParams::default()
        };
        let m = CostModel::default();
        let a = run_apso(&env, &params, &m, 9).unwrap();
        let b = pso::run(&env, &params.base, &m, 9).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.best_assignment, b.best_assignment);
        assert_eq!(a.coefficient_trace, b.coefficient_trace);
    }

    #[test]
    fn els_run_keeps_monotone_curve() {
        let env = generate_environment(&EnvConfig::new(30, 6, 3)).unwrap();
        let params = ApsoParams {
            els_enabled: true,
            ..ApsoParams::default()
        };
        let r = run_apso(&env, &params, &CostModel::default(), 4).unwrap();
        assert!(r.curve.windows(2).all(|w| w[1] <= w[0]));
    }

    proptest! {
        #[test]
        fn adapted_coefficients_stay_in_bounds(
            c1 in 1.5f64..=2.5,
            c2 in 1.5f64..=2.5,
            d1 in 0.05f64..0.1,
            d2 in 0.05f64..0.1,
            s in 0usize..4,
        ) {
            let p = ApsoParams::default();
            let state = [
                EvolutionaryState::Exploration,
                EvolutionaryState::Exploitation,
                EvolutionaryState::Convergence,
                EvolutionaryState::JumpingOut,
            ][s];
            let (a, b) = adapt_coefficients_with(state, c1, c2, d1, d2, &p);
            prop_assert!((p.c_min..=p.c_max).contains(&a));
            prop_assert!((p.c_min..=p.c_max).contains(&b));
            prop_assert!(a + b <= p.c_sum_max);
        }

        #[test]
        fn inertia_inside_open_range(f in 1e-9f64..0.999_999) {
            let w = adapt_inertia(EvolFactor::new(f));
            prop_assert!(w > 0.4 && w < 0.9);
        }
    }
}
