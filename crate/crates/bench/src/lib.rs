//! Shared fixtures for the criterion benchmarks in `benches/`.

use std::collections::BTreeMap;

use semilin_core::fixedpoint::FpScheme;
use semilin_core::networks::{Arch, InputScaler, Network, NetworkSpec};
use semilin_core::pdes::{make_problem, Problem};

/// `osc_square` in dimension `d`.
pub fn problem(d: usize) -> Problem {
    make_problem("osc_square", d, &BTreeMap::new()).expect("osc_square exists")
}

/// Network, scaler and problem for one DBSDE architecture.
pub fn dbsde_fixture(arch: Arch, d: usize, n_steps: usize) -> (Problem, Network, InputScaler) {
    let p = problem(d);
    let net = Network::build(NetworkSpec::new(arch, d, 2, 2 * d, n_steps), 1).expect("network builds");
    let scaler = InputScaler::fit(p.as_ref(), n_steps, 200, 2).expect("scaler fits");
    (p, net, scaler)
}

/// Network, scaler and problem for one fixed-point scheme.
pub fn fp_fixture(scheme: FpScheme, d: usize) -> (Problem, Network, InputScaler) {
    let p = problem(d);
    let net = Network::build(NetworkSpec::new(scheme.arch(), d, 3, 2 * d, 100), 1).expect("network builds");
    let scaler = InputScaler::fit(p.as_ref(), 100, 200, 2).expect("scaler fits");
    (p, net, scaler)
}
