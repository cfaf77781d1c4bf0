//! Test problems: semilinear PDEs `-u_t - L u = f(t, x, u, Du)`, `u(T) = g`,
//! with their forward diffusions and reference solutions.

mod baseline;
mod problems;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::autodiff::{AdError, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use baseline::{
    mc_baseline, mc_conditional, params_hash, reference_trajectory, BaselineCache, BaselineResult, McEstimate,
    REFERENCE_SAMPLES,
};
pub use problems::{
    BsBarenblatt, BsDefault, CirOscillating, Hjb, NonLipschitz, OscInverse, OscSquare, ZeroDriver,
};

pub type Problem = Arc<dyn PdeProblem>;

pub const PROBLEM_IDS: [&str; 7] = [
    "bs_default",
    "bs_barenblatt",
    "hjb",
    "osc_square",
    "nonlip",
    "cir_osc",
    "osc_inverse",
];

/// Diffusion matrix `sigma(t, x)` at one state.
#[derive(Clone, Debug, PartialEq)]
pub enum Diffusion {
    /// `c * I`
    Scaled(f64),
    Diagonal(Vec<f64>),
    /// Row-major `d x d`.
    Dense(Tensor),
}

impl Diffusion {
    /// `out = sigma * w`
    pub fn apply(&self, w: &[f64], out: &mut [f64]) {
        match self {
            Diffusion::Scaled(c) => out.iter_mut().zip(w).for_each(|(o, v)| *o = c * v),
            Diffusion::Diagonal(s) => out.iter_mut().zip(w).zip(s).for_each(|((o, v), s)| *o = s * v),
            Diffusion::Dense(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = m.row_slice(i).iter().zip(w).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    /// `out = sigma^T * v`
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Diffusion::Dense(m) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (i, vi) in v.iter().enumerate() {
                    for (o, a) in out.iter_mut().zip(m.row_slice(i)) {
                        *o += a * vi;
                    }
                }
            }
            _ => self.apply(v, out),
        }
    }

    /// `out = sigma^{-T} * w`
    pub fn solve_transpose(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Diffusion::Scaled(c) => {
                if *c == 0.0 {
                    return Err(Error::SingularDiffusion);
                }
                out.iter_mut().zip(w).for_each(|(o, v)| *o = v / c);
            }
            Diffusion::Diagonal(s) => {
                if s.iter().any(|&v| v == 0.0) {
                    return Err(Error::SingularDiffusion);
                }
                out.iter_mut().zip(w).zip(s).for_each(|((o, v), s)| *o = v / s);
            }
            Diffusion::Dense(m) => {
                let n = w.len();
                // Gaussian elimination with partial pivoting on sigma^T.
                let mut a: Vec<f64> = (0..n * n).map(|k| m.get(k % n, k / n)).collect();
                let mut b = w.to_vec();
                for col in 0..n {
                    let piv = (col..n)
                        .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                        .unwrap_or(col);
                    if a[piv * n + col].abs() < 1e-300 {
                        return Err(Error::SingularDiffusion);
                    }
                    if piv != col {
                        for k in 0..n {
                            a.swap(piv * n + k, col * n + k);
                        }
                        b.swap(piv, col);
                    }
                    for r in col + 1..n {
                        let f = a[r * n + col] / a[col * n + col];
                        for k in col..n {
                            a[r * n + k] -= f * a[col * n + k];
                        }
                        b[r] -= f * b[col];
                    }
                }
                for r in (0..n).rev() {
                    let s: f64 = (r + 1..n).map(|k| a[r * n + k] * out[k]).sum();
                    out[r] = (b[r] - s) / a[r * n + r];
                }
            }
        }
        Ok(())
    }

    pub fn to_dense(&self, d: usize) -> Tensor {
        match self {
            Diffusion::Scaled(c) => Tensor::identity(d).map(|v| v * c),
            Diffusion::Diagonal(s) => {
                let mut t = Tensor::zeros(d, d);
                for (i, v) in s.iter().enumerate() {
                    t.set(i, i, *v);
                }
                t
            }
            Diffusion::Dense(m) => m.clone(),
        }
    }
}

/// What a problem offers as the truth to measure errors against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReferenceKind {
    /// Closed-form `u` and `Du`.
    Exact,
    /// Conditional Monte-Carlo formula via [`mc_conditional`].
    MonteCarlo,
    /// Only a tabulated value of `u(0, X0)`.
    Y0Only(f64),
    None,
}

/// Conditional expectation representation
/// `u(t, x) = (1/c) log E[exp(c g(x + k B_{T-t}))]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McFormula {
    pub coupling: f64,
    pub noise_scale: f64,
}

pub trait PdeProblem: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn maturity(&self) -> f64;
    fn x0(&self) -> &[f64];
    fn params(&self) -> &BTreeMap<String, f64>;

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, x: &[f64]) -> Diffusion;

    /// `mu` and `sigma` independent of `(t, x)`.
    fn constant_coefficients(&self) -> bool {
        false
    }

    fn has_exact_step(&self) -> bool {
        false
    }

    /// Closed-form transition from `(s, x)` to time `t` given the Brownian
    /// increment `dw = W_t - W_s`.
    fn exact_step(&self, x: &[f64], s: f64, t: f64, dw: &[f64], out: &mut [f64]) -> Result<()> {
        let _ = (x, s, t, dw, out);
        Err(Error::NoExactStep(self.id().to_string()))
    }

    fn terminal(&self, x: &[f64]) -> f64;

    /// Writes `Dg(x)`; returns `false` if unavailable.
    fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        let _ = (x, out);
        false
    }

    /// Driver `f~(t, x, y, Du)` for a batch: `t` per row, `x` as data
    /// (`n x d`), `y` (`n x 1`) and `du` (`n x d`) on the tape. Returns `n x 1`.
    fn driver(&self, tape: &mut Tape, t: &[f64], x: &Tensor, y: Var, du: Var) -> Result<Var, AdError>;

    fn exact_solution(&self, t: f64, x: &[f64]) -> Option<f64> {
        let _ = (t, x);
        None
    }

    fn exact_gradient(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let _ = (t, x, out);
        false
    }

    fn reference(&self) -> ReferenceKind {
        ReferenceKind::None
    }

    fn mc_formula(&self) -> Option<McFormula> {
        None
    }
}

/// Driver evaluated at a single point.
pub fn driver_value(problem: &dyn PdeProblem, t: f64, x: &[f64], y: f64, du: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let xt = Tensor::row(x.to_vec());
    let yv = tape.constant(Tensor::scalar(y));
    let dv = tape.constant(Tensor::row(du.to_vec()));
    let f = problem.driver(&mut tape, &[t], &xt, yv, dv)?;
    Ok(tape.value(f).item())
}

/// Builds a problem by id with default parameters replaced by `overrides`.
/// Every problem accepts `T` in addition to its own parameters.
pub fn make_problem(id: &str, d: usize, overrides: &BTreeMap<String, f64>) -> Result<Problem> {
    if d == 0 {
        return Err(Error::InvalidParam("d must be at least 1".into()));
    }
    let p: Problem = match id {
        "bs_default" => Arc::new(BsDefault::new(d, overrides)?),
        "bs_barenblatt" => Arc::new(BsBarenblatt::new(d, overrides)?),
        "hjb" => Arc::new(Hjb::new(d, overrides)?),
        "osc_square" => Arc::new(OscSquare::new(d, overrides)?),
        "nonlip" => Arc::new(NonLipschitz::new(d, overrides)?),
        "cir_osc" => Arc::new(CirOscillating::new(d, overrides)?),
        "osc_inverse" => Arc::new(OscInverse::new(d, overrides)?),
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    Ok(p)
}

/// Relative residual of `-u_t - L u - f~(t, x, u, Du)` for the closed-form
/// solution at `(t, x)`, with all derivatives from fourth-order finite
/// differences of `exact_solution`. Normalized by the largest term magnitude
/// (at least 1).
pub fn pde_residual(problem: &dyn PdeProblem, t: f64, x: &[f64]) -> Result<f64> {
    let u = |t: f64, x: &[f64]| {
        problem
            .exact_solution(t, x)
            .ok_or_else(|| Error::NoReference(problem.id().to_string()))
    };
    let d = problem.dim();
    let h1 = 1e-3;
    let h2 = 1e-2;
    let d1 = |f: &dyn Fn(f64) -> Result<f64>, h: f64| -> Result<f64> {
        Ok((f(-2.0 * h)? - 8.0 * f(-h)? + 8.0 * f(h)? - f(2.0 * h)?) / (12.0 * h))
    };
    let d2 = |f: &dyn Fn(f64) -> Result<f64>, h: f64| -> Result<f64> {
        Ok((-f(2.0 * h)? + 16.0 * f(h)? - 30.0 * f(0.0)? + 16.0 * f(-h)? - f(-2.0 * h)?) / (12.0 * h * h))
    };
    let shifted = |j: usize, e: f64| {
        let mut y = x.to_vec();
        y[j] += e;
        y
    };
    let u0 = u(t, x)?;
    let ut = d1(&|e| u(t + e, x), h1)?;
    let mut grad = vec![0.0; d];
    for (j, g) in grad.iter_mut().enumerate() {
        *g = d1(&|e| u(t, &shifted(j, e)), h1)?;
    }
    let sigma = problem.diffusion(t, x).to_dense(d);
    let mut a = Tensor::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let v: f64 = (0..d).map(|k| sigma.get(i, k) * sigma.get(j, k)).sum();
            a.set(i, j, v);
        }
    }
    let mut second = 0.0;
    for i in 0..d {
        for j in 0..d {
            let aij = a.get(i, j);
            if aij == 0.0 {
                continue;
            }
            let hij = if i == j {
                d2(&|e| u(t, &shifted(i, e)), h2)?
            } else {
                let f = |ei: f64, ej: f64| {
                    let mut y = x.to_vec();
                    y[i] += ei;
                    y[j] += ej;
                    u(t, &y)
                };
                (f(h1, h1)? - f(h1, -h1)? - f(-h1, h1)? + f(-h1, -h1)?) / (4.0 * h1 * h1)
            };
            second += 0.5 * aij * hij;
        }
    }
    let mut mu = vec![0.0; d];
    problem.drift(t, x, &mut mu);
    let first: f64 = mu.iter().zip(&grad).map(|(m, g)| m * g).sum();
    let lu = second + first;
    let f = driver_value(problem, t, x, u0, &grad)?;
    let scale = ut.abs().max(lu.abs()).max(f.abs()).max(1.0);
    Ok((-ut - lu - f).abs() / scale)
}

#[cfg(test)]
mod tests;
