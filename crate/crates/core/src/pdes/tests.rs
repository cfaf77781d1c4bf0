use super::*;
use crate::rng;

fn none() -> BTreeMap<String, f64> {
    BTreeMap::new()
}

fn random_point(problem: &dyn PdeProblem, k: u64) -> (f64, Vec<f64>) {
    let mut r = rng::stream(11, "pde.points", k);
    let t = rng::uniform_open(&mut r) * problem.maturity() * 0.95;
    let x = problem
        .x0()
        .iter()
        .map(|&x0| {
            let u = rng::uniform_open(&mut r);
            if problem.id() == "cir_osc" {
                0.05 + 0.6 * u
            } else {
                x0 + (u - 0.5) * 1.5
            }
        })
        .collect();
    (t, x)
}

#[test]
fn exact_solutions_satisfy_the_pde() {
    for id in ["bs_barenblatt", "osc_square", "cir_osc", "osc_inverse"] {
        for d in [1, 3] {
            let p = make_problem(id, d, &none()).unwrap();
            for k in 0..20 {
                let (t, x) = random_point(p.as_ref(), k);
                let r = pde_residual(p.as_ref(), t, &x).unwrap();
                assert!(r < 1e-6, "{id} d={d} t={t} x={x:?} residual {r}");
            }
        }
    }
}

#[test]
fn terminal_consistency() {
    for id in ["bs_barenblatt", "osc_square", "cir_osc", "osc_inverse"] {
        let p = make_problem(id, 4, &none()).unwrap();
        for k in 0..10 {
            let (_, x) = random_point(p.as_ref(), k);
            let u = p.exact_solution(p.maturity(), &x).unwrap();
            assert!((u - p.terminal(&x)).abs() < 1e-12, "{id}");
        }
    }
}

#[test]
fn osc_square_clamp_is_inactive_at_the_solution() {
    let p = OscSquare::new(5, &none()).unwrap();
    for k in 0..50 {
        let (t, x) = random_point(&p, k);
        let u = p.exact_solution(t, &x).unwrap();
        let mut g = vec![0.0; 5];
        p.exact_gradient(t, &x, &mut g);
        let v = u * g.iter().sum::<f64>() / 5.0;
        assert!(v.abs() <= p.bound(t));
    }
}

#[test]
fn documented_examples() {
    let hjb = make_problem("hjb", 3, &none()).unwrap();
    let z = [1.0, 0.0, 0.0];
    // |z|^2 = 2 with z = sqrt(2) Du  =>  Du = (1, 0, 0)
    let f = driver_value(hjb.as_ref(), 0.0, &[0.0; 3], 0.0, &z).unwrap();
    assert!((f + 1.0).abs() < 1e-15);

    let bb = make_problem("bs_barenblatt", 2, &none()).unwrap();
    assert_eq!(bb.x0(), &[1.0, 0.5]);
    let u = bb.exact_solution(0.0, bb.x0()).unwrap();
    assert!((u - 0.21f64.exp() * 1.25).abs() < 1e-12);

    let os = make_problem("osc_square", 1, &none()).unwrap();
    assert_eq!(os.exact_solution(1.0, &[0.0]).unwrap(), 1.0);
    assert_eq!(os.terminal(&[0.0]), 1.0);

    let oi = make_problem("osc_inverse", 2, &none()).unwrap();
    let x = [0.3, -0.7];
    assert_eq!(oi.exact_solution(1.0, &x).unwrap(), oi.terminal(&x));
}

#[test]
fn exact_steps() {
    let bs = make_problem("bs_default", 1, &none()).unwrap();
    let mut out = [0.0];
    bs.exact_step(&[100.0], 0.0, 1.0, &[0.0], &mut out).unwrap();
    assert!((out[0] - 100.0).abs() < 1e-12);
    bs.exact_step(&[42.0], 0.3, 0.3, &[0.0], &mut out).unwrap();
    assert_eq!(out[0], 42.0);
    let bb = make_problem("bs_barenblatt", 1, &none()).unwrap();
    bb.exact_step(&[1.0], 0.0, 1.0, &[0.0], &mut out).unwrap();
    assert!((out[0] - 0.9231163).abs() < 1e-7);
    let hjb = make_problem("hjb", 1, &none()).unwrap();
    assert!(matches!(
        hjb.exact_step(&[1.0], 0.0, 1.0, &[0.0], &mut out),
        Err(Error::NoExactStep(_))
    ));
}

#[test]
fn bs_default_driver_is_continuous_piecewise_linear() {
    let p = BsDefault::new(2, &none()).unwrap();
    let f = |y: f64| driver_value(&p, 0.0, &[100.0, 100.0], y, &[0.0, 0.0]).unwrap();
    for bp in [50.0, 70.0] {
        let (l, r) = (f(bp - 1e-9), f(bp + 1e-9));
        assert!((l - r).abs() < 1e-8);
    }
    assert!((p.intensity(40.0) - 0.2).abs() < 1e-15);
    assert!((p.intensity(80.0) - 0.02).abs() < 1e-15);
    assert!((p.intensity(60.0) - 0.11).abs() < 1e-12);
    let mut g = [0.0; 3];
    p.terminal_gradient(&[3.0, 1.0, 1.0], &mut g);
    assert_eq!(g, [0.0, 1.0, 0.0]);
}

#[test]
fn construction_errors() {
    assert!(matches!(make_problem("nope", 2, &none()), Err(Error::UnknownProblem(_))));
    let mut o = none();
    o.insert("zeta".into(), 1.0);
    assert!(matches!(make_problem("hjb", 2, &o), Err(Error::UnknownParam { .. })));
    let mut o = none();
    o.insert("sigma_hat".into(), 0.5);
    assert!(matches!(make_problem("cir_osc", 2, &o), Err(Error::InvalidParam(_))));
    let mut o = none();
    o.insert("T".into(), 2.0);
    assert_eq!(make_problem("hjb", 2, &o).unwrap().maturity(), 2.0);
}

#[test]
fn osc_inverse_guard_keeps_driver_finite() {
    let p = make_problem("osc_inverse", 2, &none()).unwrap();
    let f = driver_value(p.as_ref(), 0.0, &[0.1, 0.2], 1.0, &[0.5, -0.5]).unwrap();
    assert!(f.is_finite());
}

#[test]
fn dense_diffusion_solve() {
    let m = Tensor::from_rows(&[vec![2.0, 1.0], vec![0.5, 3.0]]).unwrap();
    let s = Diffusion::Dense(m.clone());
    let w = [1.0, -2.0];
    let mut v = [0.0; 2];
    s.solve_transpose(&w, &mut v).unwrap();
    let mut back = [0.0; 2];
    s.apply_transpose(&v, &mut back);
    assert!((back[0] - w[0]).abs() < 1e-12 && (back[1] - w[1]).abs() < 1e-12);
    let sing = Diffusion::Dense(Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap());
    assert!(matches!(sing.solve_transpose(&w, &mut v), Err(Error::SingularDiffusion)));
}

#[test]
fn hjb_conditional_reference_is_self_consistent() {
    let p = make_problem("hjb", 2, &none()).unwrap();
    let a = mc_conditional(p.as_ref(), 0.5, &[0.5, 0.0], REFERENCE_SAMPLES, 1).unwrap();
    let b = mc_conditional(p.as_ref(), 0.5, &[0.5, 0.0], REFERENCE_SAMPLES, 2).unwrap();
    let se = (a.y_se.powi(2) + b.y_se.powi(2)).sqrt();
    assert!((a.y - b.y).abs() < 3.0 * se, "{} vs {} se {se}", a.y, b.y);
    assert!(a.y_se > 0.0);
}

#[test]
fn hjb_small_lambda_matches_plain_expectation() {
    let mut o = none();
    o.insert("lambda".into(), 1e-4);
    let p = make_problem("hjb", 2, &o).unwrap();
    let est = mc_conditional(p.as_ref(), 0.0, &[0.0, 0.0], 200_000, 5).unwrap();
    // direct mean of g(sqrt(2) B_1) with independent draws
    let mut r = rng::stream(6, "direct", 0);
    let n = 200_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let x = [
            std::f64::consts::SQRT_2 * rng::normal(&mut r),
            std::f64::consts::SQRT_2 * rng::normal(&mut r),
        ];
        let g = p.terminal(&x);
        s += g;
        s2 += g * g;
    }
    let m = s / n as f64;
    let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
    let comb = (se * se + est.y_se * est.y_se).sqrt();
    assert!((est.y - m).abs() < 3.0 * comb + 1e-3, "{} vs {m}", est.y);
}

#[test]
fn baseline_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    let p = make_problem("nonlip", 2, &none()).unwrap();
    let mut c = BaselineCache::open(&path).unwrap();
    let a = c.get_or_compute(p.as_ref(), 1000, 3).unwrap();
    let c2 = BaselineCache::open(&path).unwrap();
    assert_eq!(c2.get(p.as_ref(), 1000, 3), Some(&a));
    assert!(c2.get(p.as_ref(), 1000, 4).is_none());
}

#[test]
fn reference_trajectory_exact_and_missing() {
    let p = make_problem("osc_square", 3, &none()).unwrap();
    let path = vec![vec![0.1, 0.2, 0.3], vec![0.0, 0.5, -0.1]];
    let (y, z) = reference_trajectory(p.as_ref(), &path, &[0.0, 0.5], 10, 0).unwrap();
    let s: f64 = 0.6;
    assert!((y[0] - s.cos() * 0.5f64.exp()).abs() < 1e-14);
    assert!((z[0][1] + s.sin() * 0.5f64.exp()).abs() < 1e-14);
    let bs = make_problem("bs_default", 3, &none()).unwrap();
    assert!(matches!(
        reference_trajectory(bs.as_ref(), &path, &[0.0, 0.5], 10, 0),
        Err(Error::NoReference(_))
    ));
}
