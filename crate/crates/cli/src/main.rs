use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use semilin_core::harness::{self, ExperimentConfig, RunContext, RunResult};
use semilin_core::pdes::{make_problem, mc_baseline, REFERENCE_SAMPLES};

/// Neural solvers for semilinear parabolic PDEs.
#[derive(Parser)]
#[command(name = "semilin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a configuration over the values of one axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo reference value and gradient at the initial point.
    Baseline {
        #[arg(long)]
        problem: String,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = REFERENCE_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate run results into `runs.csv` and `summary.csv`.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SEMILIN_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("SEMILIN_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("SEMILIN_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    Ok(cfg)
}

fn summary_line(r: &RunResult) -> String {
    let e = &r.report;
    format!(
        "repeat {} y0 {:.6} (ref {:.6}) rel_y0 {:.3e} rel_z0 {} loss {:.3e} [{:.1}s]",
        r.repeat,
        e.y0,
        e.y0_ref,
        e.rel_y0,
        e.rel_z0.map_or("-".into(), |v| format!("{v:.3e}")),
        e.final_test_loss,
        r.wall_time_s
    )
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    init_threads()?;
    match Cli::parse().command {
        Command::Solve { config, out } => {
            let cfg = load(&config, out)?;
            let r = harness::run(&cfg, &RunContext::default())?;
            println!("{}", summary_line(&r));
            println!("{}", serde_json::to_string_pretty(&r.report)?);
        }
        Command::Sweep {
            config,
            axis,
            values,
            repeats,
            out,
        } => {
            let mut cfg = load(&config, out)?;
            if values.is_empty() {
                bail!("--values needs at least one value");
            }
            cfg.sweep.axis = Some(axis);
            cfg.sweep.values = values;
            if let Some(k) = repeats {
                cfg.sweep.repeats = k;
            }
            let runs = harness::sweep(&cfg)?;
            let mut ok = Vec::new();
            for run in runs {
                match run.result {
                    Ok(r) => {
                        println!("{} = {} {}", run.ctx.axis.as_deref().unwrap_or("-"), run.ctx.axis_value.unwrap_or(f64::NAN), summary_line(&r));
                        ok.push(r);
                    }
                    Err(e) => println!(
                        "{} = {} repeat {} FAILED: {e}",
                        run.ctx.axis.as_deref().unwrap_or("-"),
                        run.ctx.axis_value.unwrap_or(f64::NAN),
                        run.ctx.repeat
                    ),
                }
            }
            if ok.is_empty() {
                bail!("every run of the sweep failed");
            }
            let dir = &cfg.output.dir;
            harness::write_runs_csv(&ok, &dir.join("runs.csv"))?;
            harness::write_summary_csv(&harness::summarize(&ok), &dir.join("summary.csv"))?;
            println!("tables written to {}", dir.display());
        }
        Command::Baseline {
            problem,
            d,
            samples,
            seed,
            out,
        } => {
            let p = make_problem(&problem, d, &Default::default())?;
            let b = mc_baseline(p.as_ref(), samples, seed)?;
            let json = serde_json::to_string_pretty(&b)?;
            match out {
                Some(path) => {
                    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                        fs::create_dir_all(dir)?;
                    }
                    fs::write(&path, json)?;
                }
                None => println!("{json}"),
            }
        }
        Command::Report { input, out } => {
            let n = harness::report(&input, &out)?;
            println!("{n} runs summarized into {}", out.display());
        }
    }
    Ok(())
}
