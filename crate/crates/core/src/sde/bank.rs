use super::TimeSampler;
use crate::error::{Error, Result};
use crate::pdes::PdeProblem;
use crate::rng;

/// Frozen inner samples: per sample a horizon `tau` and the standard normals
/// for its antithetic pair. Sample `i` always comes from stream
/// `(seed, "inner.bank", i)`, so any index range can be rebuilt on its own.
#[derive(Clone, Debug)]
pub struct InnerSampleBank {
    pub sampler: TimeSampler,
    pub dt: f64,
    pub seed: u64,
    d: usize,
    start: usize,
    taus: Vec<f64>,
    /// Normal-vector offsets, `len() + 1` entries.
    offsets: Vec<usize>,
    normals: Vec<f64>,
}

impl InnerSampleBank {
    pub fn build(problem: &dyn PdeProblem, sampler: TimeSampler, dt: f64, n: usize, seed: u64) -> Result<Self> {
        Self::build_range(problem, sampler, dt, seed, 0, n)
    }

    /// Samples `start..end` of the bank identified by `seed`.
    pub fn build_range(
        problem: &dyn PdeProblem,
        sampler: TimeSampler,
        dt: f64,
        seed: u64,
        start: usize,
        end: usize,
    ) -> Result<Self> {
        if end <= start {
            return Err(Error::InvalidInput("inner bank needs at least one sample".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidInput("inner bank time step must be positive".into()));
        }
        let d = problem.dim();
        let single = problem.constant_coefficients() || problem.has_exact_step();
        let cap = (problem.maturity() / dt).floor() as usize;
        let n = end - start;
        let mut taus = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n + 1);
        let mut normals = Vec::with_capacity(n * d);
        offsets.push(0);
        for i in start..end {
            let mut r = rng::stream(seed, "inner.bank", i as u64);
            let tau = sampler.sample(rng::uniform_open(&mut r))?;
            let count = if single {
                1
            } else {
                ((tau / dt).floor() as usize).min(cap) + 1
            };
            let at = normals.len();
            normals.resize(at + count * d, 0.0);
            rng::fill_normal(&mut r, &mut normals[at..]);
            taus.push(tau);
            offsets.push(offsets.last().unwrap() + count);
        }
        Ok(Self {
            sampler,
            dt,
            seed,
            d,
            start,
            taus,
            offsets,
            normals,
        })
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Global index of the first sample.
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn tau(&self, i: usize) -> f64 {
        self.taus[i]
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// Standard normals of sample `i`, `d` per step.
    pub fn normals(&self, i: usize) -> &[f64] {
        &self.normals[self.offsets[i] * self.d..self.offsets[i + 1] * self.d]
    }
}
