//! Deep BSDE and fixed-point Feynman-Kac solvers for semilinear parabolic
//! PDEs, together with a reverse-mode autodiff engine, SDE samplers, the
//! benchmark problem catalogue and an experiment harness.

pub mod autodiff;
pub mod dbsde;
pub mod error;
pub mod fixedpoint;
pub mod harness;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod pdes;
pub mod rng;
pub mod sde;
pub mod training;

pub use autodiff::{Tape, Tensor, Var};
pub use error::{Error, Result};
pub use fixedpoint::{FpScheme, FpSettings};
pub use harness::{ExperimentConfig, RunResult};
pub use metrics::{ErrorReport, PathValues, ReferenceSpec};
pub use networks::{Arch, InputScaler, Network, NetworkSpec};
pub use pdes::{make_problem, PdeProblem, Problem, PROBLEM_IDS};
pub use sde::{InnerSampleBank, TimeSampler};
pub use training::{TrainOutcome, TrainingConfig};
