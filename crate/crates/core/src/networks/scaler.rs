use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::pdes::PdeProblem;
use crate::rng;
use crate::sde::{step, uniform_grid};

const CHUNK: usize = 256;

/// Centering and rescaling of network inputs, fitted on simulated paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub maturity: f64,
    pub dt: f64,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
}

impl InputScaler {
    pub const DEFAULT_PATHS: usize = 10_000;

    /// Statistics of `X` pooled over all grid times of `m` paths, and the mean
    /// of `g(X_T)`. Path `r` uses stream `(seed, "scaler", r)`.
    pub fn fit(problem: &dyn PdeProblem, n_steps: usize, m: usize, seed: u64) -> Result<Self> {
        if m == 0 || n_steps == 0 {
            return Err(Error::InvalidInput("scaler needs at least one path and one step".into()));
        }
        let d = problem.dim();
        let grid = uniform_grid(problem.maturity(), n_steps);
        let shift = problem.x0().to_vec();
        let chunks: Vec<(usize, usize)> = (0..m).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(m))).collect();
        let partial: Vec<Result<(Vec<f64>, Vec<f64>, f64)>> = chunks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut s1 = vec![0.0; d];
                let mut s2 = vec![0.0; d];
                let mut gsum = 0.0;
                let mut x = vec![0.0; d];
                let mut next = vec![0.0; d];
                let mut dw = vec![0.0; d];
                for r in lo..hi {
                    let mut g = rng::stream(seed, "scaler", r as u64);
                    x.copy_from_slice(problem.x0());
                    for i in 0..=n_steps {
                        for j in 0..d {
                            let c = x[j] - shift[j];
                            s1[j] += c;
                            s2[j] += c * c;
                        }
                        if i == n_steps {
                            break;
                        }
                        let sq = (grid[i + 1] - grid[i]).sqrt();
                        dw.iter_mut().for_each(|v| *v = sq * rng::normal(&mut g));
                        step(problem, &x, grid[i], grid[i + 1], &dw, &mut next)?;
                        std::mem::swap(&mut x, &mut next);
                    }
                    gsum += problem.terminal(&x);
                }
                Ok((s1, s2, gsum))
            })
            .collect();
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d];
        let mut gsum = 0.0;
        for p in partial {
            let (a, b, g) = p?;
            for j in 0..d {
                s1[j] += a[j];
                s2[j] += b[j];
            }
            gsum += g;
        }
        let n = (m * (n_steps + 1)) as f64;
        let mut x_mean = vec![0.0; d];
        let mut x_std = vec![0.0; d];
        for j in 0..d {
            let mc = s1[j] / n;
            x_mean[j] = shift[j] + mc;
            let var = (s2[j] / n - mc * mc).max(0.0);
            x_std[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        let y_mean = gsum / m as f64;
        if !y_mean.is_finite() {
            return Err(Error::NonFiniteState("scaler terminal mean"));
        }
        Ok(Self {
            maturity: problem.maturity(),
            dt: problem.maturity() / n_steps as f64,
            x_mean,
            x_std,
            y_mean,
        })
    }

    /// Identity scaling for dimension `d`, used by tests.
    pub fn identity(d: usize, maturity: f64, dt: f64) -> Self {
        Self {
            maturity,
            dt,
            x_mean: vec![0.0; d],
            x_std: vec![1.0; d],
            y_mean: 0.0,
        }
    }

    pub fn scale_t(&self, t: f64) -> f64 {
        let half = 0.5 * (self.maturity - self.dt);
        if half > 0.0 {
            (t - half) / half
        } else {
            0.0
        }
    }

    pub fn scale_x(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (x[j] - self.x_mean[j]) / self.x_std[j];
        }
    }

    /// `|Y_mean|`, or 1 when the mean vanishes.
    pub fn y_denominator(&self) -> f64 {
        if self.y_mean == 0.0 {
            log::warn!("scaler: terminal mean is 0, Y inputs are only centered");
            1.0
        } else {
            self.y_mean.abs()
        }
    }

    pub fn scale_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_denominator()
    }

    /// Scales a batch of states given row-major, `batch x d`.
    pub fn scale_x_tensor(&self, x: &Tensor) -> Tensor {
        let d = x.cols();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.x_mean[j]) / self.x_std[j];
            }
        }
        out
    }

    /// `(y - Y_mean) / |Y_mean|` recorded on the tape.
    pub fn scale_y_var(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let den = self.y_denominator();
        let c = tape.offset(y, -self.y_mean)?;
        Ok(tape.scale(c, 1.0 / den)?)
    }

    /// Scaled `x` recorded on the tape so derivatives are taken in raw units.
    pub fn scale_x_var(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let d = self.x_mean.len();
        let mean = tape.constant(Tensor::row(self.x_mean.clone()));
        let inv = tape.constant(Tensor::row(self.x_std.iter().map(|s| 1.0 / s).collect()));
        debug_assert_eq!(tape.shape(x)[1], d);
        let c = tape.sub(x, mean)?;
        Ok(tape.mul(c, inv)?)
    }
}
