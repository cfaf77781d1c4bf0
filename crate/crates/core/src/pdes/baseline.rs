use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PdeProblem, ReferenceKind};
use crate::error::{Error, Result};
use crate::rng;

/// Inner sample count for conditional references along trajectories.
pub const REFERENCE_SAMPLES: usize = 50_000;

const CHUNK: usize = 1 << 14;

/// Monte-Carlo value of `u` and `Du` at one point, with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub y: f64,
    pub y_se: f64,
    pub z: Vec<f64>,
    pub z_se: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub problem: String,
    pub d: usize,
    pub params_hash: String,
    pub n_samples: u64,
    pub seed: u64,
    pub y0: f64,
    pub y0_se: f64,
    pub z0: Vec<f64>,
    pub z0_se: Vec<f64>,
}

/// Log-domain accumulators of one chunk, all relative to `exp(m)`.
struct ChunkStats {
    m: f64,
    s: f64,
    q: f64,
    a: Vec<f64>,
    aa: Vec<f64>,
    aw: Vec<f64>,
}

impl ChunkStats {
    fn new(d: usize) -> Self {
        Self {
            m: f64::NEG_INFINITY,
            s: 0.0,
            q: 0.0,
            a: vec![0.0; d],
            aa: vec![0.0; d],
            aw: vec![0.0; d],
        }
    }

    fn rescale(&mut self, new_m: f64) {
        if self.m == f64::NEG_INFINITY {
            self.m = new_m;
            return;
        }
        let f = (self.m - new_m).exp();
        let f2 = f * f;
        self.s *= f;
        self.q *= f2;
        self.a.iter_mut().for_each(|v| *v *= f);
        self.aa.iter_mut().for_each(|v| *v *= f2);
        self.aw.iter_mut().for_each(|v| *v *= f2);
        self.m = new_m;
    }

    fn push(&mut self, cg: f64, grad: &[f64]) {
        if cg > self.m {
            self.rescale(cg);
        }
        let w = (cg - self.m).exp();
        self.s += w;
        self.q += w * w;
        for j in 0..grad.len() {
            let a = grad[j] * w;
            self.a[j] += a;
            self.aa[j] += a * a;
            self.aw[j] += a * w;
        }
    }

    fn merge(&mut self, other: &ChunkStats) {
        let m = self.m.max(other.m);
        self.rescale(m);
        let f = (other.m - m).exp();
        let f2 = f * f;
        self.s += other.s * f;
        self.q += other.q * f2;
        for j in 0..self.a.len() {
            self.a[j] += other.a[j] * f;
            self.aa[j] += other.aa[j] * f2;
            self.aw[j] += other.aw[j] * f2;
        }
    }
}

/// Estimates `u(t, x)` and `Du(t, x)` from the problem's conditional
/// expectation formula with `n` samples. Chunks of samples use their own
/// streams and are merged in a fixed order.
pub fn mc_conditional(problem: &dyn PdeProblem, t: f64, x: &[f64], n: usize, seed: u64) -> Result<McEstimate> {
    let formula = problem
        .mc_formula()
        .ok_or_else(|| Error::NoReference(problem.id().to_string()))?;
    if n < 2 {
        return Err(Error::InvalidInput("Monte-Carlo reference needs at least 2 samples".into()));
    }
    let d = problem.dim();
    let h = (problem.maturity() - t).max(0.0);
    let scale = formula.noise_scale * h.sqrt();
    let c = formula.coupling;
    let n_chunks = n.div_ceil(CHUNK);
    let stats: Vec<Result<ChunkStats>> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, "mc.conditional", k as u64);
            let count = CHUNK.min(n - k * CHUNK);
            let mut st = ChunkStats::new(d);
            let mut xp = vec![0.0; d];
            let mut grad = vec![0.0; d];
            for _ in 0..count {
                for (p, &x0) in xp.iter_mut().zip(x) {
                    *p = x0 + scale * rng::normal(&mut r);
                }
                if !problem.terminal_gradient(&xp, &mut grad) {
                    return Err(Error::NoReference(problem.id().to_string()));
                }
                st.push(c * problem.terminal(&xp), &grad);
            }
            Ok(st)
        })
        .collect();
    let mut total = ChunkStats::new(d);
    for st in stats {
        total.merge(&st?);
    }
    let nf = n as f64;
    let wbar = total.s / nf;
    let var_w = (total.q / nf - wbar * wbar).max(0.0);
    let y = (total.m + wbar.ln()) / c;
    let y_se = (var_w / nf).sqrt() / (wbar * c.abs());
    let mut z = vec![0.0; d];
    let mut z_se = vec![0.0; d];
    for j in 0..d {
        let r = total.a[j] / total.s;
        let var = (total.aa[j] / nf - 2.0 * r * total.aw[j] / nf + r * r * total.q / nf).max(0.0);
        z[j] = r;
        z_se[j] = (var / nf).sqrt() / wbar;
    }
    Ok(McEstimate { y, y_se, z, z_se })
}

/// Hash of a problem's parameters and initial state.
pub fn params_hash(problem: &dyn PdeProblem) -> String {
    let payload = serde_json::json!({ "params": problem.params(), "x0": problem.x0() });
    let digest = Sha256::digest(payload.to_string().as_bytes());
    hex::encode(&digest[..8])
}

/// Reference `(u, Du)` at `(0, X0)` from the problem's Monte-Carlo formula.
pub fn mc_baseline(problem: &dyn PdeProblem, n_samples: usize, seed: u64) -> Result<BaselineResult> {
    let est = mc_conditional(problem, 0.0, problem.x0(), n_samples, seed)?;
    Ok(BaselineResult {
        problem: problem.id().to_string(),
        d: problem.dim(),
        params_hash: params_hash(problem),
        n_samples: n_samples as u64,
        seed,
        y0: est.y,
        y0_se: est.y_se,
        z0: est.z,
        z0_se: est.z_se,
    })
}

/// Reference `u` and `Du` along a path: closed form where available,
/// otherwise the conditional Monte-Carlo formula with `n_samples` per point.
pub fn reference_trajectory(
    problem: &dyn PdeProblem,
    path: &[Vec<f64>],
    grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if path.len() != grid.len() {
        return Err(Error::InvalidInput("path and grid lengths differ".into()));
    }
    let d = problem.dim();
    match problem.reference() {
        ReferenceKind::Exact => {
            let mut ys = Vec::with_capacity(path.len());
            let mut zs = Vec::with_capacity(path.len());
            for (x, &t) in path.iter().zip(grid) {
                let y = problem
                    .exact_solution(t, x)
                    .ok_or_else(|| Error::NoReference(problem.id().to_string()))?;
                let mut z = vec![0.0; d];
                if !problem.exact_gradient(t, x, &mut z) {
                    return Err(Error::NoReference(problem.id().to_string()));
                }
                ys.push(y);
                zs.push(z);
            }
            Ok((ys, zs))
        }
        ReferenceKind::MonteCarlo => {
            let mut ys = Vec::with_capacity(path.len());
            let mut zs = Vec::with_capacity(path.len());
            for (i, (x, &t)) in path.iter().zip(grid).enumerate() {
                let est = mc_conditional(problem, t, x, n_samples, rng::derive_seed(seed, "reference.point", i as u64))?;
                ys.push(est.y);
                zs.push(est.z);
            }
            Ok((ys, zs))
        }
        ReferenceKind::Y0Only(_) | ReferenceKind::None => Err(Error::NoReference(problem.id().to_string())),
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    entries: BTreeMap<String, BaselineResult>,
}

/// JSON file of baseline results keyed by
/// `(problem, d, params hash, n_samples, seed)`.
#[derive(Debug)]
pub struct BaselineCache {
    path: PathBuf,
    file: CacheFile,
}

impl BaselineCache {
    pub const VERSION: u32 = 1;

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = if path.exists() {
            let f: CacheFile = serde_json::from_str(&fs::read_to_string(&path)?)?;
            if f.version != Self::VERSION {
                return Err(Error::Config(format!("baseline cache version {} unsupported", f.version)));
            }
            f
        } else {
            CacheFile {
                version: Self::VERSION,
                entries: BTreeMap::new(),
            }
        };
        Ok(Self { path, file })
    }

    pub fn key(problem: &dyn PdeProblem, n_samples: usize, seed: u64) -> String {
        format!(
            "{}|{}|{}|{}|{}",
            problem.id(),
            problem.dim(),
            params_hash(problem),
            n_samples,
            seed
        )
    }

    pub fn get(&self, problem: &dyn PdeProblem, n_samples: usize, seed: u64) -> Option<&BaselineResult> {
        self.file.entries.get(&Self::key(problem, n_samples, seed))
    }

    pub fn len(&self) -> usize {
        self.file.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file.entries.is_empty()
    }

    /// Returns the cached result, computing and persisting it on a miss.
    pub fn get_or_compute(&mut self, problem: &dyn PdeProblem, n_samples: usize, seed: u64) -> Result<BaselineResult> {
        let key = Self::key(problem, n_samples, seed);
        if let Some(hit) = self.file.entries.get(&key) {
            return Ok(hit.clone());
        }
        let res = mc_baseline(problem, n_samples, seed)?;
        self.file.entries.insert(key, res.clone());
        self.save()?;
        Ok(res)
    }

    pub fn save(&self) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(&self.path, serde_json::to_string_pretty(&self.file)?)?;
        Ok(())
    }
}
