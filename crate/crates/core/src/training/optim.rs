use crate::scalar::Scalar;
use crate::tensor::{GradStore, ParamId, ParamStore, Tensor};

/// Update rule and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    /// `v ← μ v − lr g; θ ← θ + v`.
    Sgd { lr: f64, momentum: f64 },
    /// `a ← a + g²; θ ← θ − lr g / (√a + eps)`.
    AdaGrad { lr: f64, eps: f64 },
    /// Adam with bias correction.
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Rule {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Rule::Sgd { lr, momentum }
    }

    pub fn adagrad(lr: f64) -> Self {
        Rule::AdaGrad { lr, eps: 1e-8 }
    }

    pub fn adam(lr: f64) -> Self {
        Rule::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn slots(&self) -> usize {
        match self {
            Rule::Sgd { .. } | Rule::AdaGrad { .. } => 1,
            Rule::Adam { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Rule::Sgd { .. } => "sgd",
            Rule::AdaGrad { .. } => "adagrad",
            Rule::Adam { .. } => "adam",
        }
    }
}

/// First-order optimizer over a fixed subset of a parameter store.
///
/// Each step adds the L2 weight-decay term to the gradients, rescales them
/// so their global norm is at most `clip`, then applies the rule.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar> {
    pub rule: Rule,
    pub clip: Option<f64>,
    pub weight_decay: f64,
    ids: Vec<ParamId>,
    state: Vec<Vec<Tensor<T>>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(rule: Rule, params: &ParamStore<T>, ids: Vec<ParamId>) -> Self {
        let state = ids
            .iter()
            .map(|&id| (0..rule.slots()).map(|_| Tensor::zeros(params.get(id).shape())).collect())
            .collect();
        Optimizer { rule, clip: None, weight_decay: 0.0, ids, state, steps: 0 }
    }

    /// Optimizer over every parameter of the store.
    pub fn all(rule: Rule, params: &ParamStore<T>) -> Self {
        Self::new(rule, params, params.ids().collect())
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = Some(clip);
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn lr(&self) -> f64 {
        match self.rule {
            Rule::Sgd { lr, .. } | Rule::AdaGrad { lr, .. } | Rule::Adam { lr, .. } => lr,
        }
    }

    pub fn set_lr(&mut self, new: f64) {
        match &mut self.rule {
            Rule::Sgd { lr, .. } | Rule::AdaGrad { lr, .. } | Rule::Adam { lr, .. } => *lr = new,
        }
    }

    /// Moment buffers, one list per parameter in `ids()` order.
    pub fn state(&self) -> &[Vec<Tensor<T>>] {
        &self.state
    }

    /// Restores buffers saved from an optimizer of identical layout.
    pub fn restore(&mut self, state: Vec<Vec<Tensor<T>>>, steps: u64) -> Result<(), String> {
        if state.len() != self.state.len() {
            return Err(format!("optimizer state has {} entries, expected {}", state.len(), self.state.len()));
        }
        for (a, b) in state.iter().zip(&self.state) {
            if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) {
                return Err("optimizer state shape mismatch".into());
            }
        }
        self.state = state;
        self.steps = steps;
        Ok(())
    }

    /// Applies one update and returns the gradient norm before clipping.
    /// Gradients are modified in place (decay and clipping) but not zeroed.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &mut GradStore<T>) -> f64 {
        if self.weight_decay != 0.0 {
            let wd = T::lit(self.weight_decay);
            for &id in &self.ids {
                let p = params.get(id).data();
                for (g, w) in grads.get_mut(id).data_mut().iter_mut().zip(p) {
                    *g += wd * *w;
                }
            }
        }
        let norm = grads.norm(&self.ids).as_f64();
        if let Some(clip) = self.clip {
            if norm > clip {
                grads.scale(&self.ids, T::lit(clip / norm));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        for (k, &id) in self.ids.iter().enumerate() {
            let g = grads.get(id).data();
            let slots = &mut self.state[k];
            let p = params.get_mut(id).data_mut();
            match self.rule {
                Rule::Sgd { lr, momentum } => {
                    let (lr, mu) = (T::lit(lr), T::lit(momentum));
                    let v = slots[0].data_mut();
                    for ((w, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = mu * *v - lr * *g;
                        *w += *v;
                    }
                }
                Rule::AdaGrad { lr, eps } => {
                    let (lr, eps) = (T::lit(lr), T::lit(eps));
                    let a = slots[0].data_mut();
                    for ((w, a), g) in p.iter_mut().zip(a.iter_mut()).zip(g) {
                        *a += *g * *g;
                        *w -= lr * *g / (a.sqrt() + eps);
                    }
                }
                Rule::Adam { lr, beta1, beta2, eps } => {
                    let c1 = T::lit(1.0 - beta1.powi(t));
                    let c2 = T::lit(1.0 - beta2.powi(t));
                    let (lr, b1, b2, eps) = (T::lit(lr), T::lit(beta1), T::lit(beta2), T::lit(eps));
                    let (m_slot, v_slot) = slots.split_at_mut(1);
                    let (m, v) = (m_slot[0].data_mut(), v_slot[0].data_mut());
                    for (((w, m), v), g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = b1 * *m + (T::one() - b1) * *g;
                        *v = b2 * *v + (T::one() - b2) * *g * *g;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *w -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        norm
    }
}

/// Learning-rate halving on stalled dev scores.
///
/// Each observed score that does not beat the best so far halves the rate,
/// except during the first `frozen_epochs` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    lr: f64,
    best: Option<f64>,
    pub frozen_epochs: f64,
}

impl LrSchedule {
    pub fn new(lr: f64) -> Self {
        LrSchedule { lr, best: None, frozen_epochs: 6.0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records the dev score measured at `epoch` (fractional for half
    /// epochs) and returns the learning rate to use next.
    pub fn observe(&mut self, epoch: f64, score: f64) -> f64 {
        match self.best {
            Some(b) if score <= b => {
                if epoch > self.frozen_epochs {
                    self.lr *= 0.5;
                }
            }
            _ => self.best = Some(score),
        }
        self.lr
    }
}
