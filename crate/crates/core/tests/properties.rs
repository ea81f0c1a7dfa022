use mec_swarm::apso::{adapt_inertia, EvolFactor};
use mec_swarm::controller::{ActionMapping, ControllerParams, InertiaSource};
use mec_swarm::cost::{brute_force_optimum, total_cost, DEFAULT_ORACLE_CAP};
use mec_swarm::env::{Interval, Ranges};
use mec_swarm::error::Error;
use mec_swarm::nn::Mlp;
use mec_swarm::rng::rng_from_seed;
use mec_swarm::{
    generate_environment, pso, Assignment, CostModel, EnvConfig, Environment, FeasibilityMode, PsoParams, Weights,
};
use proptest::prelude::*;

fn assignment_for(env: &Environment, picks: &[usize]) -> Assignment {
    Assignment::new(picks.iter().take(env.n_devices()).map(|p| p % env.n_servers()).collect())
}

fn tight_ram() -> Ranges {
    Ranges {
        ram_req: Interval::new(1.0, 7.0),
        ..Ranges::default()
    }
}

proptest! {
    #[test]
    fn generated_attributes_lie_in_their_intervals(seed in any::<u64>(), n in 0usize..60, k in 1usize..25) {
        let env = generate_environment(&EnvConfig::new(n, k, seed)).unwrap();
        let r = Ranges::default();
        for d in &env.devices {
            prop_assert!(r.data_size.contains(d.data_size));
            prop_assert!(r.completion_req.contains(d.completion_req));
            prop_assert!(r.ram_req.contains(d.ram_req));
            prop_assert!(r.network_speed.contains(d.network_speed));
        }
        for s in &env.servers {
            prop_assert!(r.server_speed.contains(s.speed));
            prop_assert!(r.server_cost.contains(s.cost_rate));
            prop_assert!(r.server_ram.contains(s.ram));
        }
        prop_assert_eq!(generate_environment(&EnvConfig::new(n, k, seed)).unwrap(), env);
    }

    #[test]
    fn penalty_grows_with_violations(seed in 0u64..5000, picks in proptest::collection::vec(0usize..100, 8)) {
        let env = generate_environment(&EnvConfig { n_devices: 8, n_servers: 4, seed, ranges: tight_ram() }).unwrap();
        let a = assignment_for(&env, &picks);
        let literal = total_cost(&env, &a, &CostModel { mode: FeasibilityMode::PaperLiteral, ..CostModel::default() }).unwrap();
        let penalized = total_cost(&env, &a, &CostModel::default()).unwrap();
        prop_assert_eq!(literal.infeasible_count, penalized.infeasible_count);
        prop_assert!(penalized.total >= literal.total);
        let bigger = CostModel { mode: FeasibilityMode::Penalty { penalty_per_violation: 2e3 }, ..CostModel::default() };
        let doubled = total_cost(&env, &a, &bigger).unwrap().total;
        if penalized.infeasible_count > 0 {
            prop_assert!(doubled > penalized.total);
        } else {
            prop_assert_eq!(doubled, penalized.total);
        }
    }

    #[test]
    fn raising_a_cost_rate_never_lowers_the_total(
        seed in 0u64..5000,
        picks in proptest::collection::vec(0usize..100, 10),
        server in 0usize..5,
        bump in 0.0f64..0.1,
    ) {
        let mut env = generate_environment(&EnvConfig::new(10, 5, seed)).unwrap();
        let a = assignment_for(&env, &picks);
        let m = CostModel::default();
        let before = total_cost(&env, &a, &m).unwrap().total;
        env.servers[server].cost_rate += bump;
        prop_assert!(total_cost(&env, &a, &m).unwrap().total >= before);
    }

    #[test]
    fn literal_mode_never_charges_for_infeasibility(seed in 0u64..5000, device in 0usize..6, picks in proptest::collection::vec(0usize..100, 6)) {
        let mut env = generate_environment(&EnvConfig::new(6, 3, seed)).unwrap();
        let a = assignment_for(&env, &picks);
        let m = CostModel { mode: FeasibilityMode::PaperLiteral, ..CostModel::default() };
        let before = total_cost(&env, &a, &m).unwrap();
        prop_assert_eq!(before.infeasible_count, 0);
        env.devices[device].ram_req = 100.0;
        let after = total_cost(&env, &a, &m).unwrap();
        prop_assert_eq!(after.infeasible_count, 1);
        prop_assert!(after.total <= before.total);
    }

    #[test]
    fn cost_is_linear_in_the_weights(seed in 0u64..5000, picks in proptest::collection::vec(0usize..100, 9), m in 0.5f64..20.0, n in 0.001f64..1.0) {
        let env = generate_environment(&EnvConfig::new(9, 4, seed)).unwrap();
        let a = assignment_for(&env, &picks);
        let b = total_cost(&env, &a, &CostModel { weights: Weights { m, n }, ..CostModel::default() }).unwrap();
        let sum_c: f64 = b.per_device_cost.iter().sum();
        let sum_t: f64 = b.per_device_time.iter().sum();
        prop_assert!((b.total - (m * sum_c + n * sum_t)).abs() <= 1e-9 * b.total);
        let only_c = total_cost(&env, &a, &CostModel { weights: Weights { m, n: 0.0 }, ..CostModel::default() }).unwrap().total;
        let double_c = total_cost(&env, &a, &CostModel { weights: Weights { m: 2.0 * m, n: 0.0 }, ..CostModel::default() }).unwrap().total;
        prop_assert_eq!(double_c, 2.0 * only_c);
    }

    #[test]
    fn nothing_beats_the_oracle(seed in 0u64..5000, devices in 1usize..7, servers in 1usize..4, picks in proptest::collection::vec(0usize..100, 7)) {
        let env = generate_environment(&EnvConfig { n_devices: devices, n_servers: servers, seed, ranges: tight_ram() }).unwrap();
        let m = CostModel::default();
        let (_, best) = brute_force_optimum(&env, &m, DEFAULT_ORACLE_CAP).unwrap();
        prop_assert!(total_cost(&env, &assignment_for(&env, &picks), &m).unwrap().total >= best);
        let params = PsoParams { n_particles: 5, max_iters: 10, ..PsoParams::default() };
        prop_assert!(pso::run(&env, &params, &m, seed).unwrap().best_cost >= best);
    }

    #[test]
    fn adaptive_inertia_inside_its_range(f in 0.0f64..=1.0) {
        let w = adapt_inertia(EvolFactor::new(f));
        prop_assert!((0.4..=0.9).contains(&w));
        if f > 0.0 && f < 1.0 {
            prop_assert!(w > 0.4 && w < 0.9);
        }
    }

    #[test]
    fn mapped_coefficients_inside_bounds(
        action in proptest::collection::vec(-1.0f64..=1.0, 3),
        f in 0.0f64..=1.0,
        agent_inertia in any::<bool>(),
    ) {
        let params = ControllerParams {
            inertia: if agent_inertia { InertiaSource::Agent } else { InertiaSource::Adaptive },
            ..ControllerParams::default()
        };
        let m: ActionMapping = params.mapping;
        let k = params.coefficients(&action[..params.act_dim()], EvolFactor::new(f)).unwrap();
        prop_assert!((m.c_min..=m.c_max).contains(&k.c1));
        prop_assert!((m.c_min..=m.c_max).contains(&k.c2));
        prop_assert!((0.4..=0.9).contains(&k.w));
    }

    #[test]
    fn network_passes_are_pure(seed in any::<u64>(), x in proptest::collection::vec(-3.0f64..3.0, 4)) {
        let net = Mlp::new(&[4, 6, 2], 1.0, &mut rng_from_seed(seed));
        prop_assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        let up = [0.3, -1.2];
        prop_assert_eq!(net.backward(&x, &up).unwrap(), net.backward(&x, &up).unwrap());
    }
}

#[test]
fn non_finite_values_name_the_layer() {
    let mut net = Mlp::new(&[2, 3, 1], 1.0, &mut rng_from_seed(1));
    net.layers[1].weight[0] = f64::INFINITY;
    net.layers[0].bias.iter_mut().for_each(|b| *b = 1.0);
    net.layers[0].weight.iter_mut().for_each(|w| *w = 0.0);
    match net.forward(&[0.5, 0.5]) {
        Err(Error::NonFinite(m)) => assert!(m.contains("layer 1"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
    let net = Mlp::new(&[2, 3, 1], 1.0, &mut rng_from_seed(1));
    assert!(matches!(net.forward(&[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    assert!(matches!(net.backward(&[0.1, 0.2], &[f64::NAN]), Err(Error::NonFinite(_))));
}
