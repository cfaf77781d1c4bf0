//! Error measures against exact or Monte-Carlo references.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdes::{reference_trajectory, BaselineCache, PdeProblem, ReferenceKind, REFERENCE_SAMPLES};

/// Final errors of one run. Relative errors are `None` when the reference
/// vanishes or is unavailable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub y0: f64,
    pub y0_ref: f64,
    pub rel_y0: f64,
    pub z0: Vec<f64>,
    pub z0_ref: Option<Vec<f64>>,
    pub rel_z0: Option<f64>,
    pub integral_y: Option<f64>,
    pub integral_z: Option<f64>,
    pub final_test_loss: f64,
    /// `exact`, `tabulated` or the baseline-cache key of the MC reference.
    pub reference: String,
}

pub fn relative_y0(y0: f64, y_ref: f64) -> f64 {
    (y0 - y_ref).abs() / y_ref.abs()
}

/// Ratio of squared norms `|Z0 - Zref|^2 / |Zref|^2`.
pub fn relative_z0(z0: &[f64], z_ref: &[f64]) -> Option<f64> {
    let den: f64 = z_ref.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return None;
    }
    Some(sq_dist(z0, z_ref) / den)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `dt ((e_0 + e_N) / 2 + sum_{0 < i < N} e_i)`.
pub fn trapezoid(dt: f64, e: &[f64]) -> f64 {
    match e.len() {
        0 => 0.0,
        1 => 0.0,
        n => dt * (0.5 * (e[0] + e[n - 1]) + e[1..n - 1].iter().sum::<f64>()),
    }
}

/// Path average of the trapezoid-weighted absolute `Y` error.
pub fn integral_error_y(dt: f64, y: &[Vec<f64>], y_ref: &[Vec<f64>]) -> f64 {
    let total: f64 = y
        .iter()
        .zip(y_ref)
        .map(|(p, r)| {
            let e: Vec<f64> = p.iter().zip(r).map(|(a, b)| (a - b).abs()).collect();
            trapezoid(dt, &e)
        })
        .sum();
    total / y.len() as f64
}

/// Path average of the trapezoid-weighted squared `Z` error.
pub fn integral_error_z(dt: f64, z: &[Vec<Vec<f64>>], z_ref: &[Vec<Vec<f64>>]) -> f64 {
    let total: f64 = z
        .iter()
        .zip(z_ref)
        .map(|(p, r)| {
            let e: Vec<f64> = p.iter().zip(r).map(|(a, b)| sq_dist(a, b)).collect();
            trapezoid(dt, &e)
        })
        .sum();
    total / z.len() as f64
}

/// Where reference values come from.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceSpec {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            n_samples: REFERENCE_SAMPLES,
            seed: 0,
        }
    }
}

/// `(Y0_ref, Z0_ref, label)` at `(0, X0)`.
pub fn reference_initial(
    problem: &dyn PdeProblem,
    spec: ReferenceSpec,
    cache: Option<&mut BaselineCache>,
) -> Result<(f64, Option<Vec<f64>>, String)> {
    let x0 = problem.x0();
    match problem.reference() {
        ReferenceKind::Exact => {
            let y = problem
                .exact_solution(0.0, x0)
                .ok_or_else(|| Error::NoReference(problem.id().into()))?;
            let mut z = vec![0.0; problem.dim()];
            let z = problem.exact_gradient(0.0, x0, &mut z).then_some(z);
            Ok((y, z, "exact".into()))
        }
        ReferenceKind::MonteCarlo => {
            let key = BaselineCache::key(problem, spec.n_samples, spec.seed);
            let b = match cache {
                Some(c) => c.get_or_compute(problem, spec.n_samples, spec.seed)?,
                None => crate::pdes::mc_baseline(problem, spec.n_samples, spec.seed)?,
            };
            Ok((b.y0, Some(b.z0), key))
        }
        ReferenceKind::Y0Only(v) => Ok((v, None, "tabulated".into())),
        ReferenceKind::None => Err(Error::NoReference(problem.id().into())),
    }
}

/// Approximate values along paths, fed to [`error_report`].
#[derive(Clone, Debug, Default)]
pub struct PathValues {
    pub grid: Vec<f64>,
    /// `[path][i]` states.
    pub x: Vec<Vec<Vec<f64>>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<Vec<f64>>>,
}

/// Assembles the report; integral errors are skipped when the problem has
/// no trajectory reference or `paths` is empty.
pub fn error_report(
    problem: &dyn PdeProblem,
    y0: f64,
    z0: Vec<f64>,
    paths: &PathValues,
    final_test_loss: f64,
    spec: ReferenceSpec,
    cache: Option<&mut BaselineCache>,
) -> Result<ErrorReport> {
    let (y0_ref, z0_ref, reference) = reference_initial(problem, spec, cache)?;
    let rel_z0 = z0_ref.as_deref().and_then(|r| relative_z0(&z0, r));
    let traj = matches!(problem.reference(), ReferenceKind::Exact | ReferenceKind::MonteCarlo);
    let (mut integral_y, mut integral_z) = (None, None);
    if traj && !paths.x.is_empty() {
        let mut y_ref = Vec::with_capacity(paths.x.len());
        let mut z_ref = Vec::with_capacity(paths.x.len());
        for (k, path) in paths.x.iter().enumerate() {
            let seed = crate::rng::derive_seed(spec.seed, "reference.path", k as u64);
            let (y, z) = reference_trajectory(problem, path, &paths.grid, spec.n_samples, seed)?;
            y_ref.push(y);
            z_ref.push(z);
        }
        let dt = paths.grid.get(1).map_or(0.0, |t1| t1 - paths.grid[0]);
        integral_y = Some(integral_error_y(dt, &paths.y, &y_ref));
        if !paths.z.is_empty() {
            integral_z = Some(integral_error_z(dt, &paths.z, &z_ref));
        }
    }
    Ok(ErrorReport {
        y0,
        y0_ref,
        rel_y0: relative_y0(y0, y0_ref),
        z0,
        z0_ref,
        rel_z0,
        integral_y,
        integral_z,
        final_test_loss,
        reference,
    })
}
