use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fixedpoint::{FpScheme, FpSettings};
use crate::networks::{Arch, NetworkSpec};
use crate::pdes::{make_problem, Problem};
use crate::rng;
use crate::training::TrainingConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Dbsde,
    Fixedpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub id: String,
    pub d: usize,
    /// Overrides of the problem's named parameters, including `T`.
    pub params: BTreeMap<String, f64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            id: "osc_square".into(),
            d: 10,
            params: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Letter `a`..`j` for DBSDE, `A`, `B`, `C` or `C-bis` for the fixed point.
    pub arch: Option<String>,
    pub h: Option<usize>,
    pub w: Option<usize>,
    /// Time steps `N`: DBSDE grid, and Euler step `T / N` for the fixed point.
    pub n_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::Dbsde,
            arch: None,
            h: None,
            w: None,
            n_steps: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    /// Defaults to 10000, or 4000 from `d = 100` on.
    pub n_inner: Option<usize>,
    pub lambda: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            n_inner: None,
            lambda: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub n_eval_point: usize,
    pub n_eval_traj: usize,
    pub traj_count: usize,
    pub reference_samples: usize,
    pub reference_seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            n_eval_point: 1_000_000,
            n_eval_traj: 100_000,
            traj_count: 10,
            reference_samples: crate::pdes::REFERENCE_SAMPLES,
            reference_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub master: u64,
    /// Explicit seeds win over the ones derived from `master`.
    pub data: Option<u64>,
    pub init: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Option<String>,
    pub values: Vec<f64>,
    pub repeats: usize,
    /// On a `T` axis, scale `N` with `T` so the time step stays fixed.
    pub couple_maturity: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: None,
            values: Vec::new(),
            repeats: 5,
            couple_maturity: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Defaults to `baselines.json` inside `dir`.
    pub baseline_cache: Option<PathBuf>,
    pub checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            baseline_cache: None,
            checkpoints: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub training: TrainingConfig,
    pub fixed_point: FixedPointConfig,
    pub evaluation: EvaluationConfig,
    pub seeds: SeedConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn problem(&self) -> Result<Problem> {
        make_problem(&self.problem.id, self.problem.d, &self.problem.params)
    }

    pub fn arch_name(&self) -> &str {
        match (&self.solver.arch, self.solver.kind) {
            (Some(a), _) => a,
            (None, SolverKind::Dbsde) => "f",
            (None, SolverKind::Fixedpoint) => "C",
        }
    }

    pub fn scheme(&self) -> Result<FpScheme> {
        self.arch_name().parse()
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let arch: Arch = self.arch_name().parse()?;
        if arch.fixed_point() != (self.solver.kind == SolverKind::Fixedpoint) {
            return Err(Error::Config(format!(
                "architecture `{}` does not belong to solver {:?}",
                self.arch_name(),
                self.solver.kind
            )));
        }
        let d = self.problem.d;
        let h = self.solver.h.unwrap_or(if arch.fixed_point() { 3 } else { 2 });
        let w = self.solver.w.unwrap_or(2 * d);
        Ok(NetworkSpec::new(arch, d, h, w, self.solver.n_steps))
    }

    pub fn fp_settings(&self) -> FpSettings {
        let default_inner = if self.problem.d >= 100 { 4000 } else { 10_000 };
        FpSettings {
            n_inner: self.fixed_point.n_inner.unwrap_or(default_inner),
            lambda: self.fixed_point.lambda,
            euler_steps: self.solver.n_steps,
        }
    }

    /// `(data, init)` seeds of repeat `k`.
    pub fn seeds_for(&self, k: usize) -> (u64, u64) {
        let s = &self.seeds;
        let data = s.data.map_or_else(|| rng::derive_seed(s.master, "run.data", k as u64), |v| v + k as u64);
        let init = s.init.map_or_else(|| rng::derive_seed(s.master, "run.init", k as u64), |v| v + k as u64);
        (data, init)
    }

    pub fn baseline_cache_path(&self) -> PathBuf {
        self.output
            .baseline_cache
            .clone()
            .unwrap_or_else(|| self.output.dir.join("baselines.json"))
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output section
    /// and the sweep declaration.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        c.sweep = SweepConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Copy with `axis = value` applied.
    pub fn with_axis(&self, axis: &str, value: f64) -> Result<Self> {
        let mut c = self.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("axis `{axis}` needs a non-negative integer, got {value}")))
            }
        };
        match axis {
            "N" | "n_steps" => c.solver.n_steps = count(value)?,
            "d" => c.problem.d = count(value)?,
            "h" => c.solver.h = Some(count(value)?),
            "w" => c.solver.w = Some(count(value)?),
            "iterations" => c.training.iterations = count(value)?,
            "batch" => c.training.batch = count(value)?,
            "lr0" => c.training.lr0 = value,
            "n_inner" => c.fixed_point.n_inner = Some(count(value)?),
            "n_eval" | "n_eval_point" => c.evaluation.n_eval_point = count(value)?,
            "n_eval_traj" => c.evaluation.n_eval_traj = count(value)?,
            "lambda" => c.fixed_point.lambda = value,
            "T" => {
                let base = c.problem.params.get("T").copied().unwrap_or(1.0);
                c.problem.params.insert("T".into(), value);
                if c.sweep.couple_maturity {
                    c.solver.n_steps = ((self.solver.n_steps as f64) * value / base).round().max(1.0) as usize;
                }
            }
            param => {
                c.problem.params.insert(param.into(), value);
            }
        }
        c.problem()?;
        Ok(c)
    }
}
