//! The benchmarked workloads run cleanly and repeat exactly.

use mec_swarm::apso::{run_apso_on, ApsoParams};
use mec_swarm::{generate_environment, pso, CostModel, CostTable, EnvConfig, PsoParams};

#[test]
fn full_scale_runs_repeat() {
    let env = generate_environment(&EnvConfig::new(250, 20, 42)).unwrap();
    let table = CostTable::new(&env, &CostModel::default()).unwrap();
    let a = pso::run_on(&table, &PsoParams::default(), 7).unwrap();
    let b = pso::run_on(&table, &PsoParams::default(), 7).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.curve.len(), PsoParams::default().max_iters + 1);
    let apso = run_apso_on(&table, &ApsoParams::default(), 7).unwrap();
    assert!(apso.best_cost <= apso.curve[0]);
}
