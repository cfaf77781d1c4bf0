//! Training loop shared by both solvers: Adam steps, test-loss cadence,
//! period-based learning-rate halving and best-snapshot restore.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, BatchNormState, Tensor};
use crate::error::{Error, Result};
use crate::networks::Network;
use crate::optim::{Adam, BestSnapshot, LossRecord, LrSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr0: f64,
    pub test_every: usize,
    pub evals_per_period: usize,
    pub halving_threshold: f64,
    pub test_size: usize,
    pub final_test_size: usize,
    pub scaler_paths: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 16_000,
            batch: 300,
            lr0: 1e-2,
            test_every: 100,
            evals_per_period: 10,
            halving_threshold: 0.05,
            test_size: 1000,
            final_test_size: 1500,
            scaler_paths: 10_000,
        }
    }
}

/// What the loop needs from a solver.
pub trait Objective {
    /// Training loss at `iteration` and its gradient for every parameter.
    fn train_step(&mut self, net: &mut Network, iteration: usize) -> Result<(f64, Vec<Tensor>)>;
    /// Loss on the frozen test set; must not change the network.
    fn test_loss(&mut self, net: &mut Network) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<LossRecord>,
    pub best_loss: f64,
    pub best_iteration: usize,
    pub halvings: u32,
    pub final_lr: f64,
}

type Snapshot = (Vec<Tensor>, Vec<BatchNormState>);

/// Keeps large tensor buffers on the heap instead of fresh `mmap` regions;
/// training allocates and frees many same-sized buffers per step.
fn tune_allocator() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator thresholds.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        }
    });
}

fn diverged(iteration: usize, cause: String, history: &[LossRecord]) -> Error {
    Error::Diverged {
        iteration,
        cause,
        history: history.to_vec(),
    }
}

/// Runs `cfg.iterations` Adam steps. The test loss is evaluated every
/// `test_every` iterations and after the last one; the network is left at
/// the parameters with the lowest test loss.
pub fn train_loop(net: &mut Network, cfg: &TrainingConfig, obj: &mut impl Objective) -> Result<TrainOutcome> {
    tune_allocator();
    let every = cfg.test_every.max(1);
    let mut adam = Adam::new(net.params.iter().map(Tensor::len));
    let mut sched = LrSchedule::new(cfg.lr0, cfg.evals_per_period, cfg.halving_threshold);
    let mut best: BestSnapshot<Snapshot> = BestSnapshot::new((net.params.clone(), net.bn.clone()));
    let mut history: Vec<LossRecord> = Vec::with_capacity(cfg.iterations + 1);
    let mut last_train = f64::NAN;
    for it in 0..=cfg.iterations {
        let mut test = None;
        if it % every == 0 || it == cfg.iterations {
            let tl = obj.test_loss(net).map_err(|e| match e {
                Error::Autodiff(a) => diverged(it, a.to_string(), &history),
                e => e,
            })?;
            if !tl.is_finite() {
                return Err(diverged(it, format!("test loss {tl}"), &history));
            }
            best.offer(tl, it, &(net.params.clone(), net.bn.clone()));
            if it % every == 0 {
                sched.record(tl);
            }
            test = Some(tl);
        }
        if it == cfg.iterations {
            if let Some(tl) = test {
                history.push(LossRecord {
                    iteration: it,
                    train_loss: if last_train.is_finite() { last_train } else { tl },
                    test_loss: Some(tl),
                    lr: sched.lr,
                });
            }
            break;
        }
        let (loss, grads) = obj.train_step(net, it).map_err(|e| match e {
            Error::Autodiff(a @ AdError::NonFinite { .. }) => diverged(it, a.to_string(), &history),
            e => e,
        })?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(diverged(it, format!("train loss {loss}"), &history));
        }
        history.push(LossRecord {
            iteration: it,
            train_loss: loss,
            test_loss: test,
            lr: sched.lr,
        });
        let refs: Vec<&Tensor> = grads.iter().collect();
        adam.step(&mut net.params, &refs, sched.lr);
        last_train = loss;
    }
    let (params, bn) = best.value;
    net.params = params;
    net.bn = bn;
    Ok(TrainOutcome {
        history,
        best_loss: best.loss,
        best_iteration: best.iteration,
        halvings: sched.halvings(),
        final_lr: sched.lr,
    })
}
