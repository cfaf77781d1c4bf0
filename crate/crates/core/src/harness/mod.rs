//! Experiment orchestration: configuration, seeding, solver dispatch,
//! persistence and tabular reports.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{
    EvaluationConfig, ExperimentConfig, FixedPointConfig, OutputConfig, ProblemConfig, SeedConfig, SolverConfig,
    SolverKind, SweepConfig,
};
pub use report::{quantile, read_results, report, summarize, write_runs_csv, write_summary_csv, SummaryRow, RUN_COLUMNS};

use crate::dbsde;
use crate::error::{Error, Result};
use crate::fixedpoint;
use crate::metrics::{error_report, ErrorReport, ReferenceSpec};
use crate::networks::save_checkpoint;
use crate::optim::LossRecord;
use crate::pdes::BaselineCache;

pub const RESULT_VERSION: &str = concat!("semilin-", env!("CARGO_PKG_VERSION"), "/result-v1");

/// One trained and evaluated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub axis: Option<String>,
    pub axis_value: Option<f64>,
    pub repeat: usize,
    pub data_seed: u64,
    pub init_seed: u64,
    pub report: ErrorReport,
    pub best_iteration: usize,
    pub halvings: u32,
    pub history: Vec<LossRecord>,
    /// Informational only; excluded from the CSV tables.
    pub wall_time_s: f64,
}

/// Where a run sits inside a sweep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunContext {
    pub axis: Option<String>,
    pub axis_value: Option<f64>,
    pub repeat: usize,
}

fn write_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "train_loss", "test_loss", "lr"])?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            r.train_loss.to_string(),
            r.test_loss.map(|v| v.to_string()).unwrap_or_default(),
            r.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// File stem of a run inside the output directory.
pub fn run_stem(dir: &Path, hash: &str, repeat: usize) -> PathBuf {
    dir.join(format!("run_{}_{repeat}", &hash[..16]))
}

/// Trains and evaluates one configuration, writing `<stem>.json`,
/// `<stem>_history.csv`, the config and (optionally) a checkpoint. On
/// divergence the partial history is still written.
pub fn run(config: &ExperimentConfig, ctx: &RunContext) -> Result<RunResult> {
    let started = Instant::now();
    let problem = config.problem()?;
    let p = problem.as_ref();
    let spec = config.network_spec()?;
    let (data_seed, init_seed) = config.seeds_for(ctx.repeat);
    let hash = config.hash();
    let dir = &config.output.dir;
    fs::create_dir_all(dir)?;
    let stem = run_stem(dir, &hash, ctx.repeat);
    fs::write(stem.with_extension("config.json"), serde_json::to_string_pretty(config)?)?;
    let history_path = PathBuf::from(format!("{}_history.csv", stem.display()));
    let ev = &config.evaluation;

    let trained = match config.solver.kind {
        SolverKind::Dbsde => dbsde::train(p, spec, &config.training, data_seed, init_seed).map(Trained::Dbsde),
        SolverKind::Fixedpoint => fixedpoint::train_fixed_point(
            p,
            config.scheme()?,
            spec,
            &config.training,
            &config.fp_settings(),
            data_seed,
            init_seed,
        )
        .map(Trained::Fp),
    };
    let trained = match trained {
        Ok(t) => t,
        Err(e) => {
            if let Error::Diverged { history, .. } = &e {
                write_history(&history_path, history)?;
            }
            return Err(e);
        }
    };

    let eval_seed = crate::rng::derive_seed(data_seed, "eval", 0);
    let (y0, z0, values, final_loss, outcome, net) = match trained {
        Trained::Dbsde(mut r) => {
            let e = dbsde::evaluate(p, &mut r, config.training.final_test_size, ev.traj_count, data_seed)?;
            (e.y0, e.z0, e.values, e.final_test_loss, r.outcome, r.net)
        }
        Trained::Fp(mut r) => {
            let e = fixedpoint::evaluate(
                p,
                &mut r,
                ev.n_eval_point,
                ev.n_eval_traj,
                ev.traj_count,
                config.solver.n_steps,
                eval_seed,
            )?;
            let best = r.outcome.best_loss;
            (e.y0, e.z0, e.values, best, r.outcome, r.net)
        }
    };
    let mut cache = BaselineCache::open(config.baseline_cache_path())?;
    let reference = ReferenceSpec {
        n_samples: ev.reference_samples,
        seed: ev.reference_seed,
    };
    let report = error_report(p, y0, z0, &values, final_loss, reference, Some(&mut cache))?;
    cache.save()?;
    write_history(&history_path, &outcome.history)?;
    if config.output.checkpoints {
        save_checkpoint(&net, &PathBuf::from(format!("{}_net", stem.display())))?;
    }
    let result = RunResult {
        version: RESULT_VERSION.into(),
        config_hash: hash,
        config: config.clone(),
        axis: ctx.axis.clone(),
        axis_value: ctx.axis_value,
        repeat: ctx.repeat,
        data_seed,
        init_seed,
        report,
        best_iteration: outcome.best_iteration,
        halvings: outcome.halvings,
        history: outcome.history,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&result)?)?;
    Ok(result)
}

enum Trained {
    Dbsde(dbsde::DbsdeRun),
    Fp(fixedpoint::FpRun),
}

/// One entry of a sweep: its coordinates and outcome.
#[derive(Debug)]
pub struct SweepRun {
    pub ctx: RunContext,
    pub result: Result<RunResult>,
}

/// Runs every `(value, repeat)` pair of the configured axis; without an axis
/// the base configuration is repeated. A failing run does not stop the
/// others.
pub fn sweep(config: &ExperimentConfig) -> Result<Vec<SweepRun>> {
    let repeats = config.sweep.repeats.max(1);
    let points: Vec<(Option<String>, Option<f64>, ExperimentConfig)> = match &config.sweep.axis {
        Some(axis) if !config.sweep.values.is_empty() => config
            .sweep
            .values
            .iter()
            .map(|&v| Ok((Some(axis.clone()), Some(v), config.with_axis(axis, v)?)))
            .collect::<Result<_>>()?,
        _ => vec![(None, None, config.clone())],
    };
    let mut out = Vec::with_capacity(points.len() * repeats);
    for (axis, value, cfg) in points {
        for repeat in 0..repeats {
            let ctx = RunContext {
                axis: axis.clone(),
                axis_value: value,
                repeat,
            };
            log::info!("run axis={axis:?} value={value:?} repeat={repeat}");
            let result = run(&cfg, &ctx);
            if let Err(e) = &result {
                log::warn!("run axis={axis:?} value={value:?} repeat={repeat} failed: {e}");
            }
            out.push(SweepRun { ctx, result });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
