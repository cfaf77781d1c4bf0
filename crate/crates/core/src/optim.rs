//! Adam, the period-based learning-rate halving rule and best-snapshot
//! tracking shared by both solvers.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

/// One entry of a training history. `test_loss` is set on evaluation
/// iterations only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of every parameter tensor.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[&Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mh = *mv / c1;
                let vh = *vv / c2;
                *pv -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Halves the learning rate when the mean test loss of a period improved by
/// less than `threshold` relative to the previous period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub lr: f64,
    pub evals_per_period: usize,
    pub threshold: f64,
    window: Vec<f64>,
    previous_mean: Option<f64>,
    halvings: u32,
}

impl LrSchedule {
    pub fn new(lr0: f64, evals_per_period: usize, threshold: f64) -> Self {
        Self {
            lr0,
            lr: lr0,
            evals_per_period: evals_per_period.max(1),
            threshold,
            window: Vec::new(),
            previous_mean: None,
            halvings: 0,
        }
    }

    pub fn halvings(&self) -> u32 {
        self.halvings
    }

    /// Feeds one test-loss evaluation; returns `true` if the rate was halved.
    pub fn record(&mut self, test_loss: f64) -> bool {
        self.window.push(test_loss);
        if self.window.len() < self.evals_per_period {
            return false;
        }
        let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
        self.window.clear();
        self.end_period(mean)
    }

    /// Closes a period with the given mean test loss.
    pub fn end_period(&mut self, mean: f64) -> bool {
        let halve = match self.previous_mean {
            Some(prev) => (prev - mean) / prev < self.threshold,
            None => false,
        };
        self.previous_mean = Some(mean);
        if halve {
            self.halvings += 1;
            self.lr = self.lr0 * 0.5f64.powi(self.halvings as i32);
        }
        halve
    }
}

/// Lowest-loss value seen so far.
#[derive(Clone, Debug)]
pub struct BestSnapshot<T> {
    pub loss: f64,
    pub iteration: usize,
    pub value: T,
}

impl<T: Clone> BestSnapshot<T> {
    pub fn new(value: T) -> Self {
        Self {
            loss: f64::INFINITY,
            iteration: 0,
            value,
        }
    }

    /// Keeps `value` if `loss` is strictly lower than the current best.
    pub fn offer(&mut self, loss: f64, iteration: usize, value: &T) -> bool {
        if loss < self.loss {
            self.loss = loss;
            self.iteration = iteration;
            self.value = value.clone();
            true
        } else {
            false
        }
    }
}
