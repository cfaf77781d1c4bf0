//! Fixed-point Feynman-Kac solver: randomized horizons, antithetic pairs and
//! Malliavin weights turn a candidate `(u, v)` into estimates `(u_bar, v_bar)`;
//! training minimizes the gap on a frozen inner bank.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::PathValues;
use crate::networks::{Arch, InputScaler, Network, NetworkSpec};
use crate::pdes::{driver_value, PdeProblem};
use crate::rng;
use crate::sde::{pair_endpoints, step, InnerSampleBank, PairEnd, PathBatch, TimeSampler};
use crate::training::{train_loop, Objective, TrainOutcome, TrainingConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FpScheme {
    A,
    B,
    C,
    CBis,
}

impl FpScheme {
    pub fn arch(self) -> Arch {
        match self {
            FpScheme::A => Arch::FpSeparated,
            FpScheme::B => Arch::FpShared,
            FpScheme::C | FpScheme::CBis => Arch::FpAutoDiff,
        }
    }

    /// `Du` comes from input differentiation of `u`.
    pub fn autodiff(self) -> bool {
        matches!(self, FpScheme::C | FpScheme::CBis)
    }

    /// The loss contains a gradient term.
    pub fn with_v(self) -> bool {
        self != FpScheme::CBis
    }
}

impl fmt::Display for FpScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FpScheme::A => "A",
            FpScheme::B => "B",
            FpScheme::C => "C",
            FpScheme::CBis => "C-bis",
        })
    }
}

impl FromStr for FpScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "A" => FpScheme::A,
            "B" => FpScheme::B,
            "C" => FpScheme::C,
            "C-bis" | "C_bis" | "Cbis" => FpScheme::CBis,
            other => return Err(Error::Config(format!("unknown fixed-point scheme `{other}`"))),
        })
    }
}

/// Solver settings besides the shared training schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpSettings {
    pub n_inner: usize,
    pub lambda: f64,
    /// Euler steps over `[0, T]` for inner and outer simulation.
    pub euler_steps: usize,
}

impl Default for FpSettings {
    fn default() -> Self {
        Self {
            n_inner: 10_000,
            lambda: 0.5,
            euler_steps: 100,
        }
    }
}

impl FpSettings {
    pub fn sampler(&self) -> Result<TimeSampler> {
        TimeSampler::exponential(self.lambda)
    }

    pub fn dt(&self, maturity: f64) -> f64 {
        maturity / self.euler_steps.max(1) as f64
    }
}

/// `1{t >= T} g(x) / F_bar(T - s) + 1{t < T} f(t, x, y, z) / rho(t - s)`.
#[allow(clippy::too_many_arguments)]
pub fn phi(
    problem: &dyn PdeProblem,
    sampler: &TimeSampler,
    s: f64,
    t: f64,
    x: &[f64],
    y: f64,
    z: &[f64],
) -> Result<f64> {
    if t < s {
        return Err(Error::InvalidInput(format!("phi needs s <= t, got s={s}, t={t}")));
    }
    let maturity = problem.maturity();
    if t >= maturity {
        return Ok(problem.terminal(x) / sampler.survival(maturity - s));
    }
    let rho = sampler.density(t - s);
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(format!("density {rho} at {}", t - s)));
    }
    Ok(driver_value(problem, t, x, y, z)? / rho)
}

/// Outer evaluation points `(t_k, x_k)`, `x` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterPoints {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub d: usize,
}

impl OuterPoints {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.x[k * self.d..(k + 1) * self.d]
    }

    pub fn single(t: f64, x: &[f64]) -> Self {
        Self {
            t: vec![t],
            x: x.to_vec(),
            d: x.len(),
        }
    }
}

/// `zeta ~ U[0, T]` and `X_zeta` simulated from `X0`; point `k` uses stream
/// `(seed, tag, first + k)`.
pub fn sample_outer(
    problem: &dyn PdeProblem,
    n: usize,
    dt: f64,
    seed: u64,
    tag: &str,
    first: u64,
) -> Result<OuterPoints> {
    let d = problem.dim();
    let maturity = problem.maturity();
    let single = problem.constant_coefficients() || problem.has_exact_step();
    let rows: Vec<Result<(f64, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, tag, first + k as u64);
            let zeta = rng::uniform_open(&mut r) * maturity;
            let mut x = problem.x0().to_vec();
            let mut next = vec![0.0; d];
            let mut dw = vec![0.0; d];
            let full = if single { 0 } else { (zeta / dt).floor() as usize };
            let mut knots: Vec<f64> = (0..=full).map(|k| k as f64 * dt).collect();
            if zeta > *knots.last().unwrap() {
                knots.push(zeta);
            }
            for w in knots.windows(2) {
                let sq = (w[1] - w[0]).sqrt();
                dw.iter_mut().for_each(|v| *v = sq * rng::normal(&mut r));
                step(problem, &x, w[0], w[1], &dw, &mut next)?;
                std::mem::swap(&mut x, &mut next);
            }
            Ok((zeta, x))
        })
        .collect();
    let mut out = OuterPoints {
        t: Vec::with_capacity(n),
        x: Vec::with_capacity(n * d),
        d,
    };
    for r in rows {
        let (t, x) = r?;
        out.t.push(t);
        out.x.extend_from_slice(&x);
    }
    Ok(out)
}

/// Network `u` and its gradient slot at the given rows: `v` for `A`/`B`,
/// input-differentiated `Du` for `C`/`C-bis` (only when `need_z`).
pub fn eval_net(
    net: &mut Network,
    scaler: &InputScaler,
    scheme: FpScheme,
    tape: &mut Tape,
    vars: &[Var],
    times: &[f64],
    x: Tensor,
    need_z: bool,
) -> Result<(Var, Option<Var>)> {
    let flag = scheme.autodiff() && need_z;
    let xv = if flag { tape.input(x) } else { tape.constant(x) };
    let xs = scaler.scale_x_var(tape, xv)?;
    let t = tape.constant(Tensor::column(times.iter().map(|&t| scaler.scale_t(t)).collect()));
    let inp = tape.concat(&[t, xs])?;
    let (u, v) = net.uv(tape, vars, inp)?;
    let z = if !need_z {
        None
    } else if scheme.autodiff() {
        Some(tape.grad_wrt_input(u, xv)?)
    } else {
        v
    };
    Ok((u, z))
}

struct Pairs {
    /// Non-terminal rows: time, state, group, `1 / (2 n rho)` and signed weight.
    times: Vec<f64>,
    x: Vec<f64>,
    groups: Vec<usize>,
    inv_rho: Vec<f64>,
    signed_w: Vec<f64>,
    /// Terminal contributions per outer point, already normalized.
    const_u: Vec<f64>,
    const_v: Vec<f64>,
}

#[derive(Default)]
struct PointRows {
    times: Vec<f64>,
    x: Vec<f64>,
    inv_rho: Vec<f64>,
    signed_w: Vec<f64>,
    const_u: f64,
    const_v: Vec<f64>,
}

/// Bank-level constants of constant-coefficient Euler dynamics: drift,
/// `sigma N_i` and `sigma^{-T} N_i`. A pair over horizon `h` then ends at
/// `x + mu h +- sqrt(h) sigma N_i` with weight `sigma^{-T} N_i / sqrt(h)`.
struct ConstantPairs {
    mu: Vec<f64>,
    sn: Vec<f64>,
    wn: Vec<f64>,
}

impl ConstantPairs {
    fn new(problem: &dyn PdeProblem, bank: &InnerSampleBank) -> Result<Option<Self>> {
        if !problem.constant_coefficients() || problem.has_exact_step() {
            return Ok(None);
        }
        let d = problem.dim();
        let x0 = problem.x0();
        let mut mu = vec![0.0; d];
        problem.drift(0.0, x0, &mut mu);
        let sigma = problem.diffusion(0.0, x0);
        let mut sn = vec![0.0; bank.len() * d];
        let mut wn = vec![0.0; bank.len() * d];
        for i in 0..bank.len() {
            let n = &bank.normals(i)[..d];
            sigma.apply(n, &mut sn[i * d..(i + 1) * d]);
            sigma.solve_transpose(n, &mut wn[i * d..(i + 1) * d])?;
        }
        Ok(Some(Self { mu, sn, wn }))
    }

    #[allow(clippy::too_many_arguments)]
    fn endpoints(
        &self,
        x: &[f64],
        t: f64,
        maturity: f64,
        tau: f64,
        i: usize,
        a: &mut [f64],
        b: &mut [f64],
        w: &mut [f64],
    ) -> PairEnd {
        let d = x.len();
        let remaining = maturity - t;
        let hit = tau >= remaining;
        let h = tau.min(remaining);
        let sq = h.sqrt();
        let (sn, wn) = (&self.sn[i * d..(i + 1) * d], &self.wn[i * d..(i + 1) * d]);
        for j in 0..d {
            let base = x[j] + self.mu[j] * h;
            a[j] = base + sq * sn[j];
            b[j] = base - sq * sn[j];
            w[j] = wn[j] / sq;
        }
        PairEnd {
            t_end: if hit { maturity } else { t + tau },
            hit_maturity: hit,
        }
    }
}

fn simulate_pairs(
    problem: &dyn PdeProblem,
    points: &OuterPoints,
    bank: &InnerSampleBank,
    norm: f64,
) -> Result<Pairs> {
    let d = points.d;
    let maturity = problem.maturity();
    let sampler = bank.sampler;
    let fast = ConstantPairs::new(problem, bank)?;
    let per_point: Vec<Result<PointRows>> = (0..points.len())
        .into_par_iter()
        .map(|k| {
            let (t, x) = (points.t[k], points.point(k));
            let mut rows = PointRows {
                const_v: vec![0.0; d],
                ..Default::default()
            };
            let mut a = vec![0.0; d];
            let mut b = vec![0.0; d];
            let mut w = vec![0.0; d];
            let surv = sampler.survival(maturity - t);
            for i in 0..bank.len() {
                let tau = bank.tau(i);
                let end = match &fast {
                    Some(c) => c.endpoints(x, t, maturity, tau, i, &mut a, &mut b, &mut w),
                    None => pair_endpoints(problem, x, t, tau, bank.dt, bank.normals(i), &mut a, &mut b, &mut w)?,
                };
                if end.hit_maturity {
                    let (ga, gb) = (problem.terminal(&a), problem.terminal(&b));
                    rows.const_u += norm * (ga + gb) / surv;
                    let diff = norm * (ga - gb) / surv;
                    rows.const_v.iter_mut().zip(&w).for_each(|(c, wj)| *c += diff * wj);
                } else {
                    let ir = norm / sampler.density(tau);
                    for (state, sign) in [(&a, 1.0), (&b, -1.0)] {
                        rows.times.push(end.t_end);
                        rows.x.extend_from_slice(state);
                        rows.inv_rho.push(ir);
                        rows.signed_w.extend(w.iter().map(|wj| sign * wj));
                    }
                }
            }
            Ok(rows)
        })
        .collect();
    let mut out = Pairs {
        times: Vec::new(),
        x: Vec::new(),
        groups: Vec::new(),
        inv_rho: Vec::new(),
        signed_w: Vec::new(),
        const_u: Vec::with_capacity(points.len()),
        const_v: Vec::with_capacity(points.len() * d),
    };
    for (k, rows) in per_point.into_iter().enumerate() {
        let rows = rows?;
        out.groups.extend(std::iter::repeat_n(k, rows.times.len()));
        out.times.extend(rows.times);
        out.x.extend(rows.x);
        out.inv_rho.extend(rows.inv_rho);
        out.signed_w.extend(rows.signed_w);
        out.const_u.push(rows.const_u);
        out.const_v.extend(rows.const_v);
    }
    Ok(out)
}

/// `(u_bar, v_bar)` at the outer points, `B x 1` and `B x d`.
#[derive(Clone, Copy, Debug)]
pub struct Tbar {
    pub u_bar: Var,
    pub v_bar: Option<Var>,
}

/// Discretized fixed-point operator over the bank. Driver `z` slot: network
/// `v` for schemes `A`/`B`, `Du` for `C`/`C-bis`. `norm` is `1 / (2 n)` for
/// the full sample count `n` (chunks of a larger bank pass the global one).
#[allow(clippy::too_many_arguments)]
pub fn tbar(
    problem: &dyn PdeProblem,
    net: &mut Network,
    scaler: &InputScaler,
    scheme: FpScheme,
    tape: &mut Tape,
    vars: &[Var],
    points: &OuterPoints,
    bank: &InnerSampleBank,
    norm: f64,
    with_v: bool,
) -> Result<Tbar> {
    let d = points.d;
    let b = points.len();
    let pairs = simulate_pairs(problem, points, bank, norm)?;
    let m = pairs.times.len();
    let const_u = tape.constant(Tensor::column(pairs.const_u));
    let const_v = tape.constant(Tensor::new(b, d, pairs.const_v)?);
    if m == 0 {
        return Ok(Tbar {
            u_bar: const_u,
            v_bar: with_v.then_some(const_v),
        });
    }
    let x = Tensor::new(m, d, pairs.x)?;
    let (u, z) = eval_net(net, scaler, scheme, tape, vars, &pairs.times, x.clone(), true)?;
    let z = z.expect("gradient slot requested");
    let f = problem.driver(tape, &pairs.times, &x, u, z)?;
    let ir = tape.constant(Tensor::column(pairs.inv_rho));
    let phi = tape.mul(f, ir)?;
    let groups: Arc<[usize]> = pairs.groups.into();
    let su = tape.segment_sum(phi, groups.clone(), b)?;
    let u_bar = tape.add(su, const_u)?;
    let v_bar = if with_v {
        let sw = tape.constant(Tensor::new(m, d, pairs.signed_w)?);
        let weighted = tape.mul(phi, sw)?;
        let sv = tape.segment_sum(weighted, groups, b)?;
        Some(tape.add(sv, const_v)?)
    } else {
        None
    };
    Ok(Tbar { u_bar, v_bar })
}

/// Mean over outer points of `(u_bar - u)^2 + |v_bar - v|^2`, with `v` the
/// network gradient slot; `C-bis` keeps the first term only.
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_loss(
    problem: &dyn PdeProblem,
    net: &mut Network,
    scaler: &InputScaler,
    scheme: FpScheme,
    tape: &mut Tape,
    vars: &[Var],
    points: &OuterPoints,
    bank: &InnerSampleBank,
) -> Result<Var> {
    let norm = 0.5 / bank.len() as f64;
    let tb = tbar(problem, net, scaler, scheme, tape, vars, points, bank, norm, scheme.with_v())?;
    let x = Tensor::new(points.len(), points.d, points.x.clone())?;
    let (u, z) = eval_net(net, scaler, scheme, tape, vars, &points.t, x, scheme.with_v())?;
    let du = tape.sub(tb.u_bar, u)?;
    let mut per_row = tape.square(du)?;
    if let (Some(vb), Some(z)) = (tb.v_bar, z) {
        let dv = tape.sub(vb, z)?;
        let sq = tape.square(dv)?;
        let s = tape.reduce_sum(sq, Axis::Cols)?;
        per_row = tape.add(per_row, s)?;
    }
    Ok(tape.reduce_mean(per_row, Axis::All)?)
}

struct FpObjective<'a> {
    problem: &'a dyn PdeProblem,
    scaler: &'a InputScaler,
    scheme: FpScheme,
    bank: &'a InnerSampleBank,
    batch: usize,
    dt: f64,
    seed: u64,
    test: OuterPoints,
}

impl Objective for FpObjective<'_> {
    fn train_step(&mut self, net: &mut Network, iteration: usize) -> Result<(f64, Vec<Tensor>)> {
        let first = (iteration * self.batch) as u64;
        let points = sample_outer(self.problem, self.batch, self.dt, self.seed, "fp.outer", first)?;
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let loss = fixed_point_loss(self.problem, net, self.scaler, self.scheme, &mut tape, &vars, &points, self.bank)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, vars.iter().map(|v| grads.get(*v).expect("parameter gradient").clone()).collect()))
    }

    fn test_loss(&mut self, net: &mut Network) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = net.bind_frozen(&mut tape);
        let loss = fixed_point_loss(self.problem, net, self.scaler, self.scheme, &mut tape, &vars, &self.test, self.bank)?;
        Ok(tape.value(loss).item())
    }
}

/// Trained fixed-point network with everything needed to evaluate it.
#[derive(Clone, Debug)]
pub struct FpRun {
    pub scheme: FpScheme,
    pub settings: FpSettings,
    pub net: Network,
    pub scaler: InputScaler,
    pub bank: InnerSampleBank,
    pub outcome: TrainOutcome,
}

/// Sets the bias of the `u` output to `value`.
fn init_u_bias(net: &mut Network, value: f64) {
    let name = match net.spec.arch {
        Arch::FpSeparated => "u.out.b",
        _ => "net.out.b",
    };
    if let Some(k) = net.index_of(name) {
        net.params[k].data_mut()[0] = value;
    }
}

/// Builds the frozen bank (`n_inner` samples) and the scaler from
/// `data_seed`, initializes the `u` bias at the mean of `g(X_T)` and trains
/// on fresh outer batches.
pub fn train_fixed_point(
    problem: &dyn PdeProblem,
    scheme: FpScheme,
    spec: NetworkSpec,
    cfg: &TrainingConfig,
    settings: &FpSettings,
    data_seed: u64,
    init_seed: u64,
) -> Result<FpRun> {
    if spec.arch != scheme.arch() {
        return Err(Error::Unsupported(format!("scheme {scheme} needs arch {}, got {}", scheme.arch(), spec.arch)));
    }
    if spec.d != problem.dim() {
        return Err(Error::InvalidInput(format!("network d={} but problem d={}", spec.d, problem.dim())));
    }
    let maturity = problem.maturity();
    let dt = settings.dt(maturity);
    let sampler = settings.sampler()?;
    let scaler = InputScaler::fit(problem, settings.euler_steps, cfg.scaler_paths, data_seed)?;
    let bank = InnerSampleBank::build(problem, sampler, dt, settings.n_inner, rng::derive_seed(data_seed, "fp.bank", 0))?;
    let mut net = Network::build(spec, init_seed)?;
    init_u_bias(&mut net, scaler.y_mean);
    let test = sample_outer(problem, cfg.test_size, dt, data_seed, "fp.test", 0)?;
    let mut obj = FpObjective {
        problem,
        scaler: &scaler,
        scheme,
        bank: &bank,
        batch: cfg.batch,
        dt,
        seed: data_seed,
        test,
    };
    let outcome = train_loop(&mut net, cfg, &mut obj)?;
    Ok(FpRun {
        scheme,
        settings: settings.clone(),
        net,
        scaler,
        bank,
        outcome,
    })
}

/// Raw network values `(u, Du estimate)` at one point.
pub fn net_output(run: &mut FpRun, t: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = run.net.bind_frozen(&mut tape);
    let xt = Tensor::row(x.to_vec());
    let (u, z) = eval_net(&mut run.net, &run.scaler, run.scheme, &mut tape, &vars, &[t], xt, true)?;
    Ok((tape.value(u).item(), tape.value(z.expect("gradient slot")).data().to_vec()))
}

/// Outer-point times inner-sample rows evaluated per chunk.
const EVAL_ROWS: usize = 20_000;

/// `(u_bar, v_bar)` at each point from `n_eval` fresh samples of the bank
/// identified by `seed`, processed in chunks. Points at maturity return
/// `g(x)` and the terminal gradient when the problem has one.
pub fn postprocess_eval(
    problem: &dyn PdeProblem,
    run: &mut FpRun,
    points: &OuterPoints,
    n_eval: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if n_eval == 0 {
        return Err(Error::InvalidInput("n_eval must be at least 1".into()));
    }
    let d = points.d;
    let maturity = problem.maturity();
    let dt = run.settings.dt(maturity);
    let sampler = run.settings.sampler()?;
    let live: Vec<usize> = (0..points.len()).filter(|&k| points.t[k] < maturity).collect();
    let sub = OuterPoints {
        t: live.iter().map(|&k| points.t[k]).collect(),
        x: live.iter().flat_map(|&k| points.point(k).iter().copied()).collect(),
        d,
    };
    let mut u_sum = vec![0.0; sub.len()];
    let mut v_sum = vec![0.0; sub.len() * d];
    let norm = 0.5 / n_eval as f64;
    let chunk = (EVAL_ROWS / sub.len().max(1)).max(1);
    let mut start = 0;
    while start < n_eval && !sub.is_empty() {
        let end = (start + chunk).min(n_eval);
        let bank = InnerSampleBank::build_range(problem, sampler, dt, seed, start, end)?;
        let mut tape = Tape::new();
        let vars = run.net.bind_frozen(&mut tape);
        let tb = tbar(problem, &mut run.net, &run.scaler, run.scheme, &mut tape, &vars, &sub, &bank, norm, true)?;
        tape.value(tb.u_bar).data().iter().zip(u_sum.iter_mut()).for_each(|(v, s)| *s += v);
        let vb = tb.v_bar.expect("v_bar requested");
        tape.value(vb).data().iter().zip(v_sum.iter_mut()).for_each(|(v, s)| *s += v);
        start = end;
    }
    let mut us = Vec::with_capacity(points.len());
    let mut vs = Vec::with_capacity(points.len());
    let mut li = 0;
    for k in 0..points.len() {
        if points.t[k] < maturity {
            us.push(u_sum[li]);
            vs.push(v_sum[li * d..(li + 1) * d].to_vec());
            li += 1;
        } else {
            let x = points.point(k);
            us.push(problem.terminal(x));
            let mut g = vec![0.0; d];
            if !problem.terminal_gradient(x, &mut g) {
                g = net_output(run, points.t[k], x)?.1;
            }
            vs.push(g);
        }
    }
    Ok((us, vs))
}

/// Post-processed values at `(0, X0)` and along `traj_count` paths of
/// `n_steps` steps.
#[derive(Clone, Debug)]
pub struct FpEvaluation {
    pub y0: f64,
    pub z0: Vec<f64>,
    pub net_y0: f64,
    pub net_z0: Vec<f64>,
    pub values: PathValues,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    problem: &dyn PdeProblem,
    run: &mut FpRun,
    n_eval_point: usize,
    n_eval_traj: usize,
    traj_count: usize,
    n_steps: usize,
    seed: u64,
) -> Result<FpEvaluation> {
    let x0 = problem.x0().to_vec();
    let (u0, v0) = postprocess_eval(
        problem,
        run,
        &OuterPoints::single(0.0, &x0),
        n_eval_point,
        rng::derive_seed(seed, "fp.eval.point", 0),
    )?;
    let (net_y0, net_z0) = net_output(run, 0.0, &x0)?;
    let mut values = PathValues::default();
    if traj_count > 0 && n_eval_traj > 0 {
        let paths = PathBatch::simulate(problem, n_steps, traj_count, seed, "fp.eval.paths", 0)?;
        values.grid = paths.grid.clone();
        for row in 0..traj_count {
            let pts = OuterPoints {
                t: paths.grid.clone(),
                x: (0..=n_steps).flat_map(|i| paths.state(row, i).iter().copied()).collect(),
                d: paths.d,
            };
            let (u, v) = postprocess_eval(
                problem,
                run,
                &pts,
                n_eval_traj,
                rng::derive_seed(seed, "fp.eval.traj", row as u64),
            )?;
            values.x.push((0..=n_steps).map(|i| paths.state(row, i).to_vec()).collect());
            values.y.push(u);
            values.z.push(v);
        }
    }
    Ok(FpEvaluation {
        y0: u0[0],
        z0: v0[0].clone(),
        net_y0,
        net_z0,
        values,
    })
}
