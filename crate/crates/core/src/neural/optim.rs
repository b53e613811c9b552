//! Adam and the step learning-rate schedule.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &[Array2<f64>], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
        }
    }

    /// One bias-corrected update. Empty gradients (parameters not on the
    /// tape) leave their parameter and moments untouched.
    pub fn update(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if g.is_empty() {
                continue;
            }
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    /// Last epoch (1-based) at the base rate.
    pub drop_epoch: usize,
    pub drop_period: usize,
    pub factor: f64,
}

impl LrSchedule {
    /// Rate for a 1-based epoch: `lr` through `drop_epoch`, then one factor
    /// more every `drop_period` epochs.
    pub fn rate(&self, epoch: usize) -> f64 {
        if epoch <= self.drop_epoch {
            self.lr
        } else {
            let drops = 1 + (epoch - self.drop_epoch - 1) / self.drop_period;
            self.lr * self.factor.powi(drops as i32)
        }
    }
}
