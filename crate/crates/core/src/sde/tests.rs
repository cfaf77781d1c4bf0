use std::collections::BTreeMap;
use std::sync::Arc;

use super::*;
use crate::autodiff::{AdError, Tape, Tensor, Var};
use crate::pdes::{make_problem, Diffusion, PdeProblem, ZeroDriver};
use crate::rng;

#[derive(Debug)]
struct Toy {
    d: usize,
    mu: f64,
    sigma: f64,
    params: BTreeMap<String, f64>,
    x0: Vec<f64>,
}

impl Toy {
    fn new(d: usize, mu: f64, sigma: f64) -> Self {
        Self {
            d,
            mu,
            sigma,
            params: BTreeMap::new(),
            x0: vec![0.0; d],
        }
    }
}

impl PdeProblem for Toy {
    fn id(&self) -> &str {
        "toy"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn maturity(&self) -> f64 {
        1.0
    }
    fn x0(&self) -> &[f64] {
        &self.x0
    }
    fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }
    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = self.mu);
    }
    fn diffusion(&self, _t: f64, _x: &[f64]) -> Diffusion {
        Diffusion::Scaled(self.sigma)
    }
    fn constant_coefficients(&self) -> bool {
        true
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        x.iter().sum()
    }
    fn driver(&self, tape: &mut Tape, t: &[f64], _x: &Tensor, _y: Var, _du: Var) -> Result<Var, AdError> {
        Ok(tape.constant(Tensor::zeros(t.len(), 1)))
    }
}

fn none() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

#[test]
fn euler_degenerate_and_brownian() {
    let still = Toy::new(2, 0.0, 0.0);
    let path = euler_path(&still, &[1.0, 2.0], &[0.0, 0.5, 1.0], &[0.3, 0.1, -0.2, 0.4]).unwrap();
    assert_eq!(path, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    let bm = Toy::new(1, 0.0, 1.0);
    let path = euler_path(&bm, &[0.0], &[0.0, 0.5, 1.0], &[0.1, -0.2]).unwrap();
    assert_eq!(path[0], 0.0);
    assert!((path[1] - 0.1).abs() < 1e-15 && (path[2] + 0.1).abs() < 1e-15);
    assert!(euler_path(&bm, &[0.0], &[0.0, 1.0], &[0.1, 0.2]).is_err());
}

#[test]
fn euler_gbm_converges_to_exact_step() {
    let mut o = none();
    o.insert("mu_bar".into(), 0.02);
    o.insert("sigma_bar".into(), 0.2);
    let p = make_problem("bs_default", 1, &o).unwrap();
    let n = 10_000;
    let dt = 1.0 / n as f64;
    let grid = uniform_grid(1.0, n);
    let mut r = rng::stream(1, "gbm", 0);
    let noise: Vec<f64> = (0..n).map(|_| dt.sqrt() * rng::normal(&mut r)).collect();
    let path = euler_path(p.as_ref(), &[100.0], &grid, &noise).unwrap();
    let total: f64 = noise.iter().sum();
    let exact = exact_step(p.as_ref(), &[100.0], 0.0, 1.0, &[total]).unwrap();
    assert!((path[n] - exact[0]).abs() / exact[0] < 1e-2);

    // pathwise error shrinks at order 1/2
    let err = |n: usize| {
        let grid = uniform_grid(1.0, n);
        let dt = 1.0 / n as f64;
        let paths = 20_000;
        let mut acc = 0.0;
        for k in 0..paths {
            let mut r = rng::stream(2, "gbm.weak", k);
            let noise: Vec<f64> = (0..n).map(|_| dt.sqrt() * rng::normal(&mut r)).collect();
            let total: f64 = noise.iter().sum();
            let e = euler_path(p.as_ref(), &[100.0], &grid, &noise).unwrap()[n];
            let x = exact_step(p.as_ref(), &[100.0], 0.0, 1.0, &[total]).unwrap()[0];
            acc += (e - x).abs();
        }
        acc / paths as f64
    };
    let (e1, e2) = (err(5), err(20));
    let ratio = e1 / e2;
    assert!(ratio > 1.5 && ratio < 2.7, "{e1} {e2}");
}

#[test]
fn exponential_sampling() {
    let s = TimeSampler::exponential(0.5).unwrap();
    assert!((s.sample(0.5).unwrap() - 2f64.ln() / 0.5).abs() < 1e-12);
    let tiny = TimeSampler::exponential(1.0).unwrap().sample(1e-300).unwrap();
    assert!(tiny > 0.0 && tiny < 1e-299);
    assert!(s.sample(0.0).is_err() && s.sample(1.0).is_err());
    let mut r = rng::stream(3, "tau", 0);
    let n = 1_000_000;
    let mean: f64 = (0..n).map(|_| s.sample(rng::uniform_open(&mut r)).unwrap()).sum::<f64>() / n as f64;
    assert!((mean - 2.0).abs() < 0.01, "{mean}");
    for k in 1..100 {
        let u = k as f64 / 100.0;
        assert!((s.cdf(s.sample(u).unwrap()) - u).abs() < 1e-12);
        assert!(s.sample(u).unwrap() < s.sample(u + 0.001).unwrap());
    }
}

#[test]
fn densities_integrate_to_one() {
    for (u, l) in [(1.0, 0.5), (2.5, 1.3), (1.0, 3.0)] {
        let s = TimeSampler::new(u, l).unwrap();
        let h = 1e-3;
        let n = 200_000;
        let mut acc = 0.0;
        for k in 0..n {
            let x = (k as f64 + 0.5) * h;
            acc += s.density(x) * h;
        }
        assert!((acc - 1.0).abs() < 1e-5, "u={u} l={l} {acc}");
        assert!((s.cdf(1.7) + s.survival(1.7) - 1.0).abs() < 1e-12);
        let x = s.sample(0.3).unwrap();
        assert!((s.cdf(x) - 0.3).abs() < 1e-9);
    }
}

#[test]
fn constant_coefficient_pairs_are_mirrored() {
    let p = make_problem("osc_square", 3, &none()).unwrap();
    let s = TimeSampler::exponential(0.5).unwrap();
    let mut mu = vec![0.0; 3];
    p.drift(0.0, p.x0(), &mut mu);
    for k in 0..200 {
        let mut r = rng::stream(4, "pairs", k);
        let t = 0.3;
        let pair = sample_path_pair(p.as_ref(), p.x0(), t, 0.01, &s, &mut r).unwrap();
        let h = pair.times.last().unwrap() - t;
        assert_eq!(pair.times.len(), 2);
        for j in 0..3 {
            let a = pair.x_path[1][j] - p.x0()[j] - mu[j] * h;
            let b = pair.x_hat_path[1][j] - p.x0()[j] - mu[j] * h;
            assert!((a + b).abs() < 1e-14);
        }
        if pair.hit_maturity {
            assert_eq!(*pair.times.last().unwrap(), 1.0);
        } else {
            assert_eq!(*pair.times.last().unwrap(), t + pair.tau);
        }
    }
}

#[test]
fn pure_brownian_pair_flips_sign() {
    let p = Toy::new(2, 0.0, 1.0);
    let mut x = [0.0; 2];
    let mut xh = [0.0; 2];
    let mut w = [0.0; 2];
    pair_endpoints(&p, &[0.0, 0.0], 0.0, 0.25, 0.1, &[0.4, -1.2], &mut x, &mut xh, &mut w).unwrap();
    assert_eq!(x, [0.2, -0.6]);
    assert_eq!(xh, [-0.2, 0.6]);
    assert!((w[0] - 0.2 / 0.25).abs() < 1e-15);
}

#[test]
fn euler_pairs_flip_only_first_increment() {
    let p = make_problem("cir_osc", 2, &none()).unwrap();
    let dt = 0.1;
    let normals = [0.5, -0.3, 1.0, 0.2, -0.7, 0.4, 0.0, 0.0];
    let mut x = [0.0; 2];
    let mut xh = [0.0; 2];
    let mut w = [0.0; 2];
    let end = pair_endpoints(p.as_ref(), &[0.3, 0.3], 0.0, 0.25, dt, &normals, &mut x, &mut xh, &mut w).unwrap();
    assert!(!end.hit_maturity);
    assert_eq!(end.t_end, 0.25);
    // three steps: 0.1, 0.1, 0.05
    let grid = [0.0, 0.1, 0.2, 0.25];
    let sizes = [0.1f64, 0.1, 0.05];
    let noise: Vec<f64> = (0..6).map(|k| sizes[k / 2].sqrt() * normals[k]).collect();
    let path = euler_path(p.as_ref(), &[0.3, 0.3], &grid, &noise).unwrap();
    assert!((path[6] - x[0]).abs() < 1e-15 && (path[7] - x[1]).abs() < 1e-15);
    let mut flipped = noise.clone();
    flipped[0] = -flipped[0];
    flipped[1] = -flipped[1];
    let path = euler_path(p.as_ref(), &[0.3, 0.3], &grid, &flipped).unwrap();
    assert!((path[6] - xh[0]).abs() < 1e-15 && (path[7] - xh[1]).abs() < 1e-15);
    // weight over the first dt only
    let s = 0.2 * 0.3f64.sqrt();
    assert!((w[0] - 0.1f64.sqrt() * 0.5 / s / 0.1).abs() < 1e-12);

    // tau < dt: single local step
    let end = pair_endpoints(p.as_ref(), &[0.3, 0.3], 0.0, 0.04, dt, &normals, &mut x, &mut xh, &mut w).unwrap();
    assert_eq!(end.t_end, 0.04);
    assert!((w[0] - 0.04f64.sqrt() * 0.5 / s / 0.04).abs() < 1e-12);
}

#[test]
fn cir_pairs_stay_positive() {
    let p = make_problem("cir_osc", 2, &none()).unwrap();
    let s = TimeSampler::exponential(0.5).unwrap();
    for k in 0..100_000 {
        let mut r = rng::stream(5, "cir", k);
        let pair = sample_path_pair(p.as_ref(), &[0.3, 0.3], 0.0, 0.01, &s, &mut r).unwrap();
        for st in pair.x_path.iter().chain(&pair.x_hat_path) {
            assert!(st.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn malliavin_weight_examples() {
    let w = malliavin_weight(&Diffusion::Scaled(2.0), &[0.1, -0.3], 0.04, 1.0, 0.1).unwrap();
    assert!((w[0] - 0.1 / (2.0 * 0.04)).abs() < 1e-15);
    assert!((w[1] + 0.3 / (2.0 * 0.04)).abs() < 1e-15);
    let z = malliavin_weight(&Diffusion::Scaled(2.0), &[0.0, 0.0], 0.5, 1.0, 0.1).unwrap();
    assert_eq!(z, vec![0.0, 0.0]);
    assert!(malliavin_weight(&Diffusion::Scaled(0.0), &[1.0], 0.5, 1.0, 0.1).is_err());
}

#[test]
fn malliavin_estimator_recovers_heat_gradient() {
    let hjb = make_problem("hjb", 2, &none()).unwrap();
    let p: Arc<dyn PdeProblem> = Arc::new(ZeroDriver::new(hjb.clone()));
    let s = TimeSampler::exponential(0.5).unwrap();
    let x0 = [0.5, -0.2];
    let n = 1_000_000;
    let fbar = s.survival(1.0);
    let mut acc = [0.0; 2];
    let mut acc2 = [0.0; 2];
    let mut xa = [0.0; 2];
    let mut xb = [0.0; 2];
    let mut w = [0.0; 2];
    for k in 0..n {
        let mut r = rng::stream(6, "malliavin", k);
        let tau = s.sample(rng::uniform_open(&mut r)).unwrap();
        let normals = [rng::normal(&mut r), rng::normal(&mut r)];
        let end = pair_endpoints(p.as_ref(), &x0, 0.0, tau, 0.01, &normals, &mut xa, &mut xb, &mut w).unwrap();
        let (pa, pb) = if end.hit_maturity {
            (p.terminal(&xa) / fbar, p.terminal(&xb) / fbar)
        } else {
            (0.0, 0.0)
        };
        for j in 0..2 {
            let v = 0.5 * (pa - pb) * w[j];
            acc[j] += v;
            acc2[j] += v * v;
        }
    }
    // oracle: E[Dg(x + sqrt(2) B_1)]
    let mut oracle = [0.0; 2];
    let mut o2 = [0.0; 2];
    let m = 1_000_000;
    let mut g = [0.0; 2];
    for k in 0..m {
        let mut r = rng::stream(7, "oracle", k);
        let x = [
            x0[0] + 2f64.sqrt() * rng::normal(&mut r),
            x0[1] + 2f64.sqrt() * rng::normal(&mut r),
        ];
        hjb.terminal_gradient(&x, &mut g);
        for j in 0..2 {
            oracle[j] += g[j];
            o2[j] += g[j] * g[j];
        }
    }
    for j in 0..2 {
        let est = acc[j] / n as f64;
        let se = ((acc2[j] / n as f64 - est * est) / n as f64).sqrt();
        let om = oracle[j] / m as f64;
        let ose = ((o2[j] / m as f64 - om * om) / m as f64).sqrt();
        let comb = (se * se + ose * ose).sqrt();
        assert!((est - om).abs() < 3.0 * comb, "j={j} est {est} oracle {om} se {comb}");
    }
}

#[test]
fn bank_ranges_match_full_bank() {
    let p = make_problem("cir_osc", 2, &none()).unwrap();
    let s = TimeSampler::exponential(0.5).unwrap();
    let full = InnerSampleBank::build(p.as_ref(), s, 0.01, 50, 9).unwrap();
    let part = InnerSampleBank::build_range(p.as_ref(), s, 0.01, 9, 20, 30).unwrap();
    for i in 0..10 {
        assert_eq!(full.tau(20 + i), part.tau(i));
        assert_eq!(full.normals(20 + i), part.normals(i));
    }
    for i in 0..50 {
        let cap = ((full.tau(i) / 0.01).floor() as usize).min(100) + 1;
        assert_eq!(full.normals(i).len(), cap * 2);
    }
    let again = InnerSampleBank::build(p.as_ref(), s, 0.01, 50, 9).unwrap();
    assert_eq!(again.taus(), full.taus());
}

#[test]
fn batch_simulation_uses_exact_steps() {
    let p = make_problem("bs_barenblatt", 2, &none()).unwrap();
    let b = PathBatch::simulate(p.as_ref(), 4, 3, 1, "paths", 0).unwrap();
    assert_eq!(b.state(1, 0), p.x0());
    for r in 0..3 {
        let mut x = p.x0().to_vec();
        for i in 0..4 {
            x = exact_step(p.as_ref(), &x, b.grid[i], b.grid[i + 1], b.increment(r, i)).unwrap();
        }
        assert_eq!(b.state(r, 4), &x[..]);
    }
    let again = PathBatch::simulate(p.as_ref(), 4, 1, 1, "paths", 2).unwrap();
    assert_eq!(again.state(0, 4), b.state(2, 4));
}
