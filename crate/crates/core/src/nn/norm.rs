use crate::error::{check_width, Result};
use crate::scalar::Scalar;
use crate::tensor::{BatchStats, Graph, ParamId, ParamKind, ParamStore, Tensor, Var};

use super::Linear;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-feature batch normalization over the rows of `[B, width]` inputs.
/// Training graphs normalize with batch statistics; evaluation graphs use
/// the frozen running averages.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub width: usize,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        let gamma = store.add_kind(format!("{name}.gamma"), Tensor::full(&[width], T::one()), ParamKind::Gain);
        let beta = store.add_kind(format!("{name}.beta"), Tensor::zeros(&[width]), ParamKind::Bias);
        Self {
            gamma,
            beta,
            running_mean: vec![T::zero(); width],
            running_var: vec![T::one(); width],
            width,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Option<BatchStats<T>>)> {
        check_width("batch_norm", self.width, g.value(x).cols())?;
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        if g.is_training() {
            let (y, stats) = g.batch_norm_train(x, gamma, beta, BN_EPS);
            Ok((y, Some(stats)))
        } else {
            Ok((g.batch_norm_eval(x, gamma, beta, &self.running_mean, &self.running_var, BN_EPS), None))
        }
    }

    /// Exponential moving average with momentum 0.1; the running variance
    /// takes the unbiased batch estimate.
    pub fn update_running(&mut self, stats: &BatchStats<T>, batch: usize) {
        let m = T::lit(BN_MOMENTUM);
        let correction = if batch > 1 {
            T::lit(batch as f64 / (batch as f64 - 1.0))
        } else {
            T::one()
        };
        for (r, s) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (T::one() - m) * *r + m * *s;
        }
        for (r, s) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (T::one() - m) * *r + m * *s * correction;
        }
    }
}

/// `v + W6 · drop(tanh(BN(W3 · tanh(BN(v)) + b3))) + b6`.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T> {
    pub bn1: BatchNorm<T>,
    pub l3: Linear,
    pub bn4: BatchNorm<T>,
    pub l6: Linear,
    pub dropout: f64,
    pub width: usize,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, width: usize, dropout: f64) -> Self {
        Self {
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), width),
            l3: Linear::new(store, &format!("{name}.l3"), width, width),
            bn4: BatchNorm::new(store, &format!("{name}.bn4"), width),
            l6: Linear::new(store, &format!("{name}.l6"), width, width),
            dropout,
            width,
        }
    }

    /// Forward over `v: [B, width]`. In training graphs also returns the two
    /// batch-norm statistics (for `bn1`, `bn4`).
    pub fn forward(&self, g: &mut Graph<'_, T>, v: Var) -> Result<(Var, Vec<BatchStats<T>>)> {
        check_width("residual block", self.width, g.value(v).cols())?;
        let mut stats = Vec::new();
        let (r1, s1) = self.bn1.forward(g, v)?;
        stats.extend(s1);
        let r2 = g.tanh(r1);
        let r3 = self.l3.forward_rows(g, r2)?;
        let (r4, s4) = self.bn4.forward(g, r3)?;
        stats.extend(s4);
        let r5 = g.tanh(r4);
        let r5 = g.dropout(r5, self.dropout);
        let r6 = self.l6.forward_rows(g, r5)?;
        Ok((g.add(r6, v), stats))
    }

    pub fn update_running(&mut self, stats: &[BatchStats<T>], batch: usize) {
        if let [s1, s4] = stats {
            self.bn1.update_running(s1, batch);
            self.bn4.update_running(s4, batch);
        }
    }
}
