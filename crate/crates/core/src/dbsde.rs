//! Deep BSDE forward shooting: Euler rollout of `Y` along simulated paths
//! with network controls `kappa ~ Du`, trained to match `g(X_T)`.

use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::PathValues;
use crate::networks::{InputScaler, KappaInputs, Network, NetworkSpec};
use crate::pdes::{driver_value, PdeProblem, ReferenceKind};
use crate::sde::PathBatch;
use crate::training::{train_loop, Objective, TrainOutcome, TrainingConfig};

/// Recorded rollout: `y` has `N + 1` entries of shape `batch x 1`, `kappa`
/// has `N` (or `N + 1` with the terminal control) of shape `batch x d`.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub y: Vec<Var>,
    pub kappa: Vec<Var>,
    pub g: Var,
}

fn column(tape: &mut Tape, v: Vec<f64>) -> Var {
    tape.constant(Tensor::column(v))
}

/// `sigma(t, X) dW` row by row.
fn diffused(problem: &dyn PdeProblem, t: f64, x: &Tensor, dw: &[f64]) -> Result<Tensor> {
    let d = x.cols();
    let mut out = vec![0.0; x.len()];
    for r in 0..x.rows() {
        problem
            .diffusion(t, x.row_slice(r))
            .apply(&dw[r * d..(r + 1) * d], &mut out[r * d..(r + 1) * d]);
    }
    Ok(Tensor::new(x.rows(), d, out)?)
}

#[allow(clippy::too_many_arguments)]
fn network_inputs(
    net: &Network,
    scaler: &InputScaler,
    tape: &mut Tape,
    t: f64,
    x: &Tensor,
    g: &[f64],
    y: Var,
) -> Result<KappaInputs> {
    let arch = net.spec.arch;
    let rows = x.rows();
    let t = arch.uses_t().then(|| column(tape, vec![scaler.scale_t(t); rows]));
    let x = tape.constant(scaler.scale_x_tensor(x));
    let y = if arch.uses_y() { Some(scaler.scale_y_var(tape, y)?) } else { None };
    let g = arch
        .uses_g()
        .then(|| column(tape, g.iter().map(|&v| scaler.scale_y(v)).collect()));
    Ok(KappaInputs { t, x, y, g })
}

fn terminal_values(problem: &dyn PdeProblem, x: &Tensor) -> Vec<f64> {
    (0..x.rows()).map(|r| problem.terminal(x.row_slice(r))).collect()
}

/// Hard-constraint rollout
/// `Y_{i+1} = Y_i - f(t_i, X_i, Y_i, kappa_i) dt + kappa_i . sigma dW_i`.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    problem: &dyn PdeProblem,
    net: &mut Network,
    scaler: &InputScaler,
    tape: &mut Tape,
    vars: &[Var],
    paths: &PathBatch,
    training: bool,
    terminal_kappa: bool,
) -> Result<Rollout> {
    let n = paths.steps();
    let batch = paths.batch;
    let d = paths.d;
    let y0 = net
        .y0_index()
        .ok_or_else(|| Error::Unsupported(format!("arch {} has no Y0", net.spec.arch)))?;
    let mut y = tape.expand(vars[y0], batch, 1)?;
    let mut ys = vec![y];
    let mut kappas = Vec::with_capacity(n + 1);
    let mut state = net.initial_state(tape, batch);
    let mut g_last = None;
    for i in 0..=n {
        let x = Tensor::new(batch, d, paths.states_at(i))?;
        let gx = if net.spec.arch.uses_g() || i == n {
            terminal_values(problem, &x)
        } else {
            Vec::new()
        };
        if i == n {
            g_last = Some(column(tape, gx.clone()));
            if !terminal_kappa {
                break;
            }
        }
        let t = paths.grid[i];
        let inputs = network_inputs(net, scaler, tape, t, &x, &gx, y)?;
        let kappa = net.kappa(tape, vars, i, inputs, state.as_mut(), training)?;
        kappas.push(kappa);
        if i == n {
            break;
        }
        let dt = paths.grid[i + 1] - t;
        let f = problem.driver(tape, &vec![t; batch], &x, y, kappa)?;
        let sdw = diffused(problem, t, &x, &paths.increments_at(i))?;
        let sdw = tape.constant(sdw);
        let prod = tape.mul(kappa, sdw)?;
        let noise = tape.reduce_sum(prod, Axis::Cols)?;
        let fdt = tape.scale(f, dt)?;
        let drift = tape.sub(y, fdt)?;
        y = tape.add(drift, noise)?;
        ys.push(y);
    }
    Ok(Rollout {
        y: ys,
        kappa: kappas,
        g: g_last.expect("terminal values recorded"),
    })
}

/// The same Euler recursion in plain arithmetic with controls supplied by
/// `kappa(i, t, x)`. Returns `Y` per row and grid index.
pub fn plugin_rollout(
    problem: &dyn PdeProblem,
    paths: &PathBatch,
    y0: f64,
    mut kappa: impl FnMut(usize, f64, &[f64]) -> Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    let n = paths.steps();
    let mut sdw = vec![0.0; paths.d];
    (0..paths.batch)
        .map(|row| {
            let mut ys = Vec::with_capacity(n + 1);
            let mut y = y0;
            ys.push(y);
            for i in 0..n {
                let (t, x) = (paths.grid[i], paths.state(row, i));
                let k = kappa(i, t, x);
                let f = driver_value(problem, t, x, y, &k)?;
                problem.diffusion(t, x).apply(paths.increment(row, i), &mut sdw);
                let noise: f64 = k.iter().zip(&sdw).map(|(a, b)| a * b).sum();
                y = y - f * (paths.grid[i + 1] - t) + noise;
                ys.push(y);
            }
            Ok(ys)
        })
        .collect()
}

/// Batch mean of `(Y_T - g(X_T))^2`.
pub fn terminal_loss(tape: &mut Tape, r: &Rollout) -> Result<Var> {
    let last = *r.y.last().expect("rollout has Y values");
    let diff = tape.sub(last, r.g)?;
    let sq = tape.square(diff)?;
    Ok(tape.reduce_mean(sq, Axis::All)?)
}

/// Soft Euler constraint for a network `u(t, x)` (arch `C`): batch mean of
/// `sum_i (u_{i+1} - u_i + f dt - Du_i . sigma dW_i)^2 + (g(X_T) - u_N)^2`
/// with `Du` from input differentiation.
pub fn soft_constraint_loss(
    problem: &dyn PdeProblem,
    net: &mut Network,
    scaler: &InputScaler,
    tape: &mut Tape,
    vars: &[Var],
    paths: &PathBatch,
) -> Result<Var> {
    if net.spec.arch != crate::networks::Arch::FpAutoDiff {
        return Err(Error::Unsupported(format!(
            "soft constraint needs input differentiation, arch {} has none",
            net.spec.arch
        )));
    }
    let n = paths.steps();
    let (batch, d) = (paths.batch, paths.d);
    let mut us = Vec::with_capacity(n + 1);
    let mut dus = Vec::with_capacity(n + 1);
    let mut xs = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = Tensor::new(batch, d, paths.states_at(i))?;
        let xv = tape.input(x.clone());
        let xs_scaled = scaler.scale_x_var(tape, xv)?;
        let t = column(tape, vec![scaler.scale_t(paths.grid[i]); batch]);
        let inp = tape.concat(&[t, xs_scaled])?;
        let (u, _) = net.uv(tape, vars, inp)?;
        let du = tape.grad_wrt_input(u, xv)?;
        us.push(u);
        dus.push(du);
        xs.push(x);
    }
    let g = column(tape, terminal_values(problem, &xs[n]));
    let tdiff = tape.sub(g, us[n])?;
    let mut acc = tape.square(tdiff)?;
    for i in 0..n {
        let t = paths.grid[i];
        let dt = paths.grid[i + 1] - t;
        let f = problem.driver(tape, &vec![t; batch], &xs[i], us[i], dus[i])?;
        let sdw = diffused(problem, t, &xs[i], &paths.increments_at(i))?;
        let sdw = tape.constant(sdw);
        let prod = tape.mul(dus[i], sdw)?;
        let noise = tape.reduce_sum(prod, Axis::Cols)?;
        let step = tape.sub(us[i + 1], us[i])?;
        let fdt = tape.scale(f, dt)?;
        let a = tape.add(step, fdt)?;
        let res = tape.sub(a, noise)?;
        let sq = tape.square(res)?;
        acc = tape.add(acc, sq)?;
    }
    Ok(tape.reduce_mean(acc, Axis::All)?)
}

struct DbsdeObjective<'a> {
    problem: &'a dyn PdeProblem,
    scaler: &'a InputScaler,
    n_steps: usize,
    batch: usize,
    seed: u64,
    test: PathBatch,
}

impl Objective for DbsdeObjective<'_> {
    fn train_step(&mut self, net: &mut Network, iteration: usize) -> Result<(f64, Vec<Tensor>)> {
        let first = (iteration * self.batch) as u64;
        let paths = PathBatch::simulate(self.problem, self.n_steps, self.batch, self.seed, "dbsde.train", first)?;
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let r = rollout(self.problem, net, self.scaler, &mut tape, &vars, &paths, true, false)?;
        let loss = terminal_loss(&mut tape, &r)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, vars.iter().map(|v| grads.get(*v).expect("parameter gradient").clone()).collect()))
    }

    fn test_loss(&mut self, net: &mut Network) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = net.bind_frozen(&mut tape);
        let r = rollout(self.problem, net, self.scaler, &mut tape, &vars, &self.test, false, false)?;
        let loss = terminal_loss(&mut tape, &r)?;
        Ok(tape.value(loss).item())
    }
}

/// Trained network with its scaler and history.
#[derive(Clone, Debug)]
pub struct DbsdeRun {
    pub net: Network,
    pub scaler: InputScaler,
    pub outcome: TrainOutcome,
}

/// Fits the scaler on `cfg.scaler_paths` paths, sets `Y0` to their mean
/// `g(X_T)` and trains. Paths come from `data_seed`, weights from
/// `init_seed`.
pub fn train(
    problem: &dyn PdeProblem,
    spec: NetworkSpec,
    cfg: &TrainingConfig,
    data_seed: u64,
    init_seed: u64,
) -> Result<DbsdeRun> {
    if spec.arch.fixed_point() {
        return Err(Error::Unsupported(format!("arch {} is not a Deep BSDE network", spec.arch)));
    }
    if spec.d != problem.dim() {
        return Err(Error::InvalidInput(format!("network d={} but problem d={}", spec.d, problem.dim())));
    }
    let scaler = InputScaler::fit(problem, spec.n_steps, cfg.scaler_paths, data_seed)?;
    let mut net = Network::build(spec, init_seed)?;
    let y0 = net.y0_index().expect("Deep BSDE nets carry Y0");
    net.params[y0] = Tensor::scalar(scaler.y_mean);
    let test = PathBatch::simulate(problem, spec.n_steps, cfg.test_size, data_seed, "dbsde.test", 0)?;
    let mut obj = DbsdeObjective {
        problem,
        scaler: &scaler,
        n_steps: spec.n_steps,
        batch: cfg.batch,
        seed: data_seed,
        test,
    };
    let outcome = train_loop(&mut net, cfg, &mut obj)?;
    Ok(DbsdeRun { net, scaler, outcome })
}

/// Values of a trained run on the final test set.
#[derive(Clone, Debug)]
pub struct DbsdeEvaluation {
    pub y0: f64,
    pub z0: Vec<f64>,
    pub final_test_loss: f64,
    pub values: PathValues,
}

const EVAL_CHUNK: usize = 250;

/// Rolls the trained network out on `n_paths` fresh paths. Trajectory values
/// are kept for every path when the reference is closed form, otherwise for
/// the first `traj_count`.
pub fn evaluate(
    problem: &dyn PdeProblem,
    run: &mut DbsdeRun,
    n_paths: usize,
    traj_count: usize,
    data_seed: u64,
) -> Result<DbsdeEvaluation> {
    let n = run.net.spec.n_steps;
    let keep = if matches!(problem.reference(), ReferenceKind::Exact) {
        n_paths
    } else {
        traj_count.min(n_paths)
    };
    let mut values = PathValues::default();
    let mut loss_sum = 0.0;
    let mut y0 = f64::NAN;
    let mut z0 = Vec::new();
    let mut first = 0;
    while first < n_paths {
        let rows = EVAL_CHUNK.min(n_paths - first);
        let paths = PathBatch::simulate(problem, n, rows, data_seed, "dbsde.final", first as u64)?;
        let mut tape = Tape::new();
        let vars = run.net.bind_frozen(&mut tape);
        let r = rollout(problem, &mut run.net, &run.scaler, &mut tape, &vars, &paths, false, true)?;
        let loss = terminal_loss(&mut tape, &r)?;
        loss_sum += tape.value(loss).item() * rows as f64;
        if first == 0 {
            y0 = tape.value(r.y[0]).data()[0];
            z0 = tape.value(r.kappa[0]).row_slice(0).to_vec();
            values.grid = paths.grid.clone();
        }
        for row in 0..rows.min(keep.saturating_sub(first)) {
            values.x.push((0..=n).map(|i| paths.state(row, i).to_vec()).collect());
            values.y.push(r.y.iter().map(|v| tape.value(*v).data()[row]).collect());
            values
                .z
                .push(r.kappa.iter().map(|v| tape.value(*v).row_slice(row).to_vec()).collect());
        }
        first += rows;
    }
    Ok(DbsdeEvaluation {
        y0,
        z0,
        final_test_loss: loss_sum / n_paths as f64,
        values,
    })
}
