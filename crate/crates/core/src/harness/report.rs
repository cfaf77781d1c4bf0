use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::Result;

use super::RunResult;

/// Column order of `runs.csv`.
pub const RUN_COLUMNS: [&str; 22] = [
    "config_hash",
    "problem",
    "d",
    "solver",
    "arch",
    "n_steps",
    "axis",
    "axis_value",
    "repeat",
    "data_seed",
    "init_seed",
    "y0",
    "y0_ref",
    "rel_y0",
    "z0",
    "rel_z0",
    "integral_y",
    "integral_z",
    "final_test_loss",
    "best_iteration",
    "halvings",
    "reference",
];

const SUMMARY_COLUMNS: [&str; 12] = [
    "config_hash",
    "problem",
    "d",
    "solver",
    "arch",
    "axis",
    "axis_value",
    "metric",
    "n",
    "mean",
    "q05",
    "q95",
];

const METRICS: [&str; 6] = ["y0", "rel_y0", "rel_z0", "integral_y", "integral_z", "final_test_loss"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn solver_name(r: &RunResult) -> String {
    serde_json::to_value(r.config.solver.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn metric(r: &RunResult, name: &str) -> Option<f64> {
    let e = &r.report;
    match name {
        "y0" => Some(e.y0),
        "rel_y0" => Some(e.rel_y0),
        "rel_z0" => e.rel_z0,
        "integral_y" => e.integral_y,
        "integral_z" => e.integral_z,
        "final_test_loss" => Some(e.final_test_loss),
        _ => None,
    }
}

fn sort_key(a: &RunResult, b: &RunResult) -> std::cmp::Ordering {
    a.axis
        .cmp(&b.axis)
        .then(a.axis_value.unwrap_or(f64::NAN).total_cmp(&b.axis_value.unwrap_or(f64::NAN)))
        .then(a.config_hash.cmp(&b.config_hash))
        .then(a.repeat.cmp(&b.repeat))
}

/// One row per run, sorted by axis value, config and repeat.
pub fn write_runs_csv(results: &[RunResult], path: &Path) -> Result<()> {
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by(|a, b| sort_key(a, b));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUN_COLUMNS)?;
    for r in sorted {
        let e = &r.report;
        w.write_record([
            r.config_hash.clone(),
            r.config.problem.id.clone(),
            r.config.problem.d.to_string(),
            solver_name(r),
            r.config.arch_name().to_string(),
            r.config.solver.n_steps.to_string(),
            r.axis.clone().unwrap_or_default(),
            opt(r.axis_value),
            r.repeat.to_string(),
            r.data_seed.to_string(),
            r.init_seed.to_string(),
            e.y0.to_string(),
            e.y0_ref.to_string(),
            e.rel_y0.to_string(),
            e.z0.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            opt(e.rel_z0),
            opt(e.integral_y),
            opt(e.integral_z),
            e.final_test_loss.to_string(),
            r.best_iteration.to_string(),
            r.halvings.to_string(),
            e.reference.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Linearly interpolated quantile of sorted data (`(n - 1) p` position).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub config_hash: String,
    pub problem: String,
    pub d: usize,
    pub solver: String,
    pub arch: String,
    pub axis: Option<String>,
    pub axis_value: Option<f64>,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Mean and 5%/95% quantiles of each metric over the repeats of each
/// configuration. Metrics missing from every repeat are skipped.
pub fn summarize(results: &[RunResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<String, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.config_hash.clone()).or_default().push(r);
    }
    let mut ordered: Vec<Vec<&RunResult>> = groups.into_values().collect();
    ordered.sort_by(|a, b| sort_key(a[0], b[0]));
    let mut rows = Vec::new();
    for group in ordered {
        let first = group[0];
        for m in METRICS {
            let mut vals: Vec<f64> = group.iter().filter_map(|r| metric(r, m)).collect();
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(f64::total_cmp);
            rows.push(SummaryRow {
                config_hash: first.config_hash.clone(),
                problem: first.config.problem.id.clone(),
                d: first.config.problem.d,
                solver: solver_name(first),
                arch: first.config.arch_name().to_string(),
                axis: first.axis.clone(),
                axis_value: first.axis_value,
                metric: m.to_string(),
                n: vals.len(),
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                q05: quantile(&vals, 0.05),
                q95: quantile(&vals, 0.95),
            });
        }
    }
    rows
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.config_hash.clone(),
            r.problem.clone(),
            r.d.to_string(),
            r.solver.clone(),
            r.arch.clone(),
            r.axis.clone().unwrap_or_default(),
            opt(r.axis_value),
            r.metric.clone(),
            r.n.to_string(),
            r.mean.to_string(),
            r.q05.to_string(),
            r.q95.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Every `run_*.json` result in `dir`, in file-name order.
pub fn read_results(dir: &Path) -> Result<Vec<RunResult>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("run_") && name.ends_with(".json") && !name.ends_with(".config.json") && !name.ends_with("_net.json")
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?))
        .collect()
}

/// Reads the results in `input` and writes `runs.csv` and `summary.csv` to
/// `output`. Returns the number of runs.
pub fn report(input: &Path, output: &Path) -> Result<usize> {
    let results = read_results(input)?;
    if results.is_empty() {
        return Err(crate::error::Error::InvalidInput(format!("no run results in {}", input.display())));
    }
    fs::create_dir_all(output)?;
    write_runs_csv(&results, &output.join("runs.csv"))?;
    write_summary_csv(&summarize(&results), &output.join("summary.csv"))?;
    Ok(results.len())
}
