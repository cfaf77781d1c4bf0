use std::cell::RefCell;

use rand::RngCore;

use super::{euler_step_with, TimeSampler};
use crate::error::{Error, Result};
use crate::pdes::{Diffusion, PdeProblem};
use crate::rng;

/// Antithetic pair of paths started at `(t, x)` and stopped at
/// `min(t + tau, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPair {
    pub times: Vec<f64>,
    pub x_path: Vec<Vec<f64>>,
    pub x_hat_path: Vec<Vec<f64>>,
    /// Increments driving `x_path`; the antithetic path negates the first.
    pub w_increments: Vec<Vec<f64>>,
    pub tau: f64,
    /// `tau >= T - t`: the pair ends at maturity.
    pub hit_maturity: bool,
    pub weight: Vec<f64>,
}

/// Terminal information of a pair whose end states were written to caller
/// buffers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEnd {
    pub t_end: f64,
    pub hit_maturity: bool,
}

/// `sigma^{-T} dw / l` with `l = tau ^ (T - t) ^ dt`. Pass `dt = tau` for
/// exactly simulable dynamics.
pub fn malliavin_weight(sigma: &Diffusion, dw_first: &[f64], tau: f64, t_remaining: f64, dt: f64) -> Result<Vec<f64>> {
    let l = tau.min(t_remaining).min(dt);
    if l <= 0.0 {
        return Err(Error::InvalidInput("Malliavin weight needs a positive horizon".into()));
    }
    let mut out = vec![0.0; dw_first.len()];
    sigma.solve_transpose(dw_first, &mut out)?;
    out.iter_mut().for_each(|v| *v /= l);
    Ok(out)
}

/// Number of steps of the pair simulation over horizon `h`: one when the
/// dynamics are exactly simulable, otherwise `floor(h / dt)` full Euler steps
/// plus a remainder.
fn step_count(problem: &dyn PdeProblem, h: f64, dt: f64) -> (usize, f64) {
    if problem.constant_coefficients() || problem.has_exact_step() || h <= dt {
        return (1, h);
    }
    let n = (h / dt).floor() as usize;
    let rem = h - n as f64 * dt;
    if rem > 1e-12 * dt {
        (n + 1, rem)
    } else {
        (n, dt)
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    problem: &dyn PdeProblem,
    x: &[f64],
    t: f64,
    tau: f64,
    dt: f64,
    normals: &[f64],
    x_out: &mut [f64],
    xhat_out: &mut [f64],
    weight: &mut [f64],
    mut record: Option<&mut PathPair>,
) -> Result<PairEnd> {
    let d = x.len();
    let maturity = problem.maturity();
    if t >= maturity {
        return Err(Error::InvalidInput(format!("pair start {t} not before maturity {maturity}")));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("horizon {tau} must be positive")));
    }
    let remaining = maturity - t;
    let hit = tau >= remaining;
    let h = tau.min(remaining);
    let (n, last) = step_count(problem, h, dt);
    let size = |k: usize| if k + 1 == n { last } else { dt };
    if normals.len() < n * d {
        return Err(Error::InvalidInput(format!(
            "pair needs {n} normal vectors, bank holds {}",
            normals.len() / d
        )));
    }
    let exact = problem.has_exact_step();
    let sigma0 = problem.diffusion(t, x);
    SCRATCH.with(|cell| -> Result<f64> {
        let mut buf = cell.borrow_mut();
        buf.resize(4 * d, 0.0);
        let (dw, rest) = buf.split_at_mut(d);
        let (neg, rest) = rest.split_at_mut(d);
        let (tmp, mu) = rest.split_at_mut(d);
        let h0 = size(0);
        let sq = h0.sqrt();
        for j in 0..d {
            dw[j] = sq * normals[j];
            neg[j] = -dw[j];
        }
        sigma0.solve_transpose(dw, weight)?;
        weight.iter_mut().for_each(|v| *v /= h0);

        let end = |k: usize, s: f64| if k + 1 == n && hit { maturity } else if k + 1 == n { t + tau } else { s };
        let s1 = end(0, t + h0);
        if exact {
            problem.exact_step(x, t, s1, dw, x_out)?;
            problem.exact_step(x, t, s1, neg, xhat_out)?;
        } else {
            euler_step_with(problem, x, t, h0, dw, x_out, mu);
            euler_step_with(problem, x, t, h0, neg, xhat_out, mu);
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.times = vec![t, s1];
            rec.x_path = vec![x.to_vec(), x_out.to_vec()];
            rec.x_hat_path = vec![x.to_vec(), xhat_out.to_vec()];
            rec.w_increments = vec![dw.to_vec()];
        }
        let mut s = s1;
        for k in 1..n {
            let sz = size(k);
            let sq = sz.sqrt();
            for j in 0..d {
                dw[j] = sq * normals[k * d + j];
            }
            euler_step_with(problem, x_out, s, sz, dw, tmp, mu);
            x_out.copy_from_slice(tmp);
            euler_step_with(problem, xhat_out, s, sz, dw, tmp, mu);
            xhat_out.copy_from_slice(tmp);
            s = end(k, s + sz);
            if let Some(rec) = record.as_deref_mut() {
                rec.times.push(s);
                rec.x_path.push(x_out.to_vec());
                rec.x_hat_path.push(xhat_out.to_vec());
                rec.w_increments.push(dw.to_vec());
            }
        }
        Ok(s)
    })
    .and_then(|s| {
        if x_out.iter().chain(xhat_out.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState("path pair"));
        }
        Ok(PairEnd {
            t_end: s,
            hit_maturity: hit,
        })
    })
}

/// End states and Malliavin weight of the antithetic pair driven by the
/// standard normals in `normals` (`d` per step).
#[allow(clippy::too_many_arguments)]
pub fn pair_endpoints(
    problem: &dyn PdeProblem,
    x: &[f64],
    t: f64,
    tau: f64,
    dt: f64,
    normals: &[f64],
    x_out: &mut [f64],
    xhat_out: &mut [f64],
    weight: &mut [f64],
) -> Result<PairEnd> {
    simulate(problem, x, t, tau, dt, normals, x_out, xhat_out, weight, None)
}

/// Draws `tau` and the Brownian increments from `rng` and records the full
/// antithetic pair.
pub fn sample_path_pair<R: RngCore>(
    problem: &dyn PdeProblem,
    x: &[f64],
    t: f64,
    dt: f64,
    sampler: &TimeSampler,
    rng: &mut R,
) -> Result<PathPair> {
    let d = x.len();
    let tau = sampler.sample(rng::uniform_open(rng))?;
    let h = tau.min(problem.maturity() - t);
    let steps = if problem.constant_coefficients() || problem.has_exact_step() {
        1
    } else {
        (h / dt).ceil() as usize + 1
    };
    let mut normals = vec![0.0; steps * d];
    rng::fill_normal(rng, &mut normals);
    let mut pair = PathPair {
        times: Vec::new(),
        x_path: Vec::new(),
        x_hat_path: Vec::new(),
        w_increments: Vec::new(),
        tau,
        hit_maturity: false,
        weight: vec![0.0; d],
    };
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut w = vec![0.0; d];
    let end = simulate(problem, x, t, tau, dt, &normals, &mut a, &mut b, &mut w, Some(&mut pair))?;
    pair.hit_maturity = end.hit_maturity;
    pair.weight = w;
    Ok(pair)
}
