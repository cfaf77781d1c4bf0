//! Forward diffusion simulation: Euler-Maruyama and closed-form steps,
//! randomized horizons, antithetic pairs and Malliavin weights.

mod bank;
mod pair;

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::pdes::PdeProblem;

pub use bank::InnerSampleBank;
pub use pair::{malliavin_weight, pair_endpoints, sample_path_pair, PairEnd, PathPair};

/// Gamma law of the randomized horizon, `rho(x) = l^u x^{u-1} e^{-l x} / Gamma(u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeSampler {
    pub shape: f64,
    pub rate: f64,
}

impl TimeSampler {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(Error::InvalidParam(format!("time sampler shape {shape}, rate {rate}")));
        }
        Ok(Self { shape, rate })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(1.0, rate)
    }

    pub fn density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if self.shape == 1.0 {
            return self.rate * (-self.rate * x).exp();
        }
        if x == 0.0 {
            return if self.shape < 1.0 { f64::INFINITY } else { 0.0 };
        }
        (self.shape * self.rate.ln() + (self.shape - 1.0) * x.ln() - self.rate * x - ln_gamma(self.shape)).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if self.shape == 1.0 {
            return -(-self.rate * x).exp_m1();
        }
        gamma_lr(self.shape, self.rate * x)
    }

    /// `1 - F(x)`.
    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if self.shape == 1.0 {
            return (-self.rate * x).exp();
        }
        gamma_ur(self.shape, self.rate * x)
    }

    /// Inverse-CDF draw from a uniform in `(0, 1)`.
    pub fn sample(&self, uniform: f64) -> Result<f64> {
        if !(uniform > 0.0 && uniform < 1.0) {
            return Err(Error::InvalidInput(format!("uniform {uniform} outside (0, 1)")));
        }
        if self.shape == 1.0 {
            return Ok(-(-uniform).ln_1p() / self.rate);
        }
        let mut hi = (self.shape + 1.0) / self.rate;
        while self.cdf(hi) < uniform {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < uniform {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// One step of the problem dynamics from `(s, x)` to `t` with increment
/// `dw`: closed form when the problem has one, Euler otherwise (exact for
/// constant coefficients).
pub fn step(problem: &dyn PdeProblem, x: &[f64], s: f64, t: f64, dw: &[f64], out: &mut [f64]) -> Result<()> {
    if problem.has_exact_step() {
        problem.exact_step(x, s, t, dw, out)?;
    } else {
        euler_step(problem, x, s, t - s, dw, out);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState("sde step"));
    }
    Ok(())
}

fn euler_step(problem: &dyn PdeProblem, x: &[f64], s: f64, h: f64, dw: &[f64], out: &mut [f64]) {
    let mut mu = vec![0.0; x.len()];
    euler_step_with(problem, x, s, h, dw, out, &mut mu);
}

fn euler_step_with(problem: &dyn PdeProblem, x: &[f64], s: f64, h: f64, dw: &[f64], out: &mut [f64], mu: &mut [f64]) {
    let d = x.len();
    problem.drift(s, x, mu);
    problem.diffusion(s, x).apply(dw, out);
    for i in 0..d {
        out[i] += x[i] + mu[i] * h;
    }
}

pub fn exact_step(problem: &dyn PdeProblem, x: &[f64], s: f64, t: f64, dw: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    problem.exact_step(x, s, t, dw, &mut out)?;
    Ok(out)
}

/// Euler-Maruyama path on `grid` from `x0`; `noise` holds the Brownian
/// increments, `d` per interval. Returns the states flattened row-wise.
pub fn euler_path(problem: &dyn PdeProblem, x0: &[f64], grid: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    let d = x0.len();
    if grid.is_empty() || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("grid must be non-empty and increasing".into()));
    }
    if noise.len() != d * (grid.len() - 1) {
        return Err(Error::InvalidInput(format!(
            "expected {} increments, got {}",
            d * (grid.len() - 1),
            noise.len()
        )));
    }
    let mut out = Vec::with_capacity(d * grid.len());
    out.extend_from_slice(x0);
    let mut next = vec![0.0; d];
    for i in 0..grid.len() - 1 {
        let cur = &out[i * d..(i + 1) * d];
        euler_step(problem, cur, grid[i], grid[i + 1] - grid[i], &noise[i * d..(i + 1) * d], &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState("euler path"));
        }
        out.extend_from_slice(&next);
    }
    Ok(out)
}

/// Uniform grid `t_i = i T / n`.
pub fn uniform_grid(maturity: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| if i == n { maturity } else { maturity * i as f64 / n as f64 }).collect()
}

/// Paths of a batch on a uniform grid, all starting from `x0`.
#[derive(Clone, Debug)]
pub struct PathBatch {
    pub batch: usize,
    pub d: usize,
    pub grid: Vec<f64>,
    /// `batch x (N + 1) x d`, row-major.
    pub x: Vec<f64>,
    /// `batch x N x d`.
    pub dw: Vec<f64>,
}

impl PathBatch {
    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn state(&self, row: usize, i: usize) -> &[f64] {
        let n1 = self.grid.len();
        &self.x[(row * n1 + i) * self.d..(row * n1 + i + 1) * self.d]
    }

    pub fn increment(&self, row: usize, i: usize) -> &[f64] {
        let n = self.steps();
        &self.dw[(row * n + i) * self.d..(row * n + i + 1) * self.d]
    }

    /// All states at grid index `i` as a `batch x d` block.
    pub fn states_at(&self, i: usize) -> Vec<f64> {
        (0..self.batch).flat_map(|r| self.state(r, i).iter().copied()).collect()
    }

    pub fn increments_at(&self, i: usize) -> Vec<f64> {
        (0..self.batch).flat_map(|r| self.increment(r, i).iter().copied()).collect()
    }

    /// Simulates rows `first..first + batch`, each from stream
    /// `(seed, tag, row)`.
    pub fn simulate(
        problem: &dyn PdeProblem,
        n_steps: usize,
        batch: usize,
        seed: u64,
        tag: &str,
        first: u64,
    ) -> Result<Self> {
        let d = problem.dim();
        let grid = uniform_grid(problem.maturity(), n_steps);
        let mut x = Vec::with_capacity(batch * (n_steps + 1) * d);
        let mut dw = Vec::with_capacity(batch * n_steps * d);
        let mut next = vec![0.0; d];
        let mut inc = vec![0.0; d];
        for r in 0..batch {
            let mut rng = crate::rng::stream(seed, tag, first + r as u64);
            let start = x.len();
            x.extend_from_slice(problem.x0());
            for i in 0..n_steps {
                let h = grid[i + 1] - grid[i];
                let sq = h.sqrt();
                for v in inc.iter_mut() {
                    *v = sq * crate::rng::normal(&mut rng);
                }
                let cur = &x[start + i * d..start + (i + 1) * d];
                step(problem, cur, grid[i], grid[i + 1], &inc, &mut next)?;
                x.extend_from_slice(&next);
                dw.extend_from_slice(&inc);
            }
        }
        Ok(Self { batch, d, grid, x, dw })
    }
}

#[cfg(test)]
mod tests;
