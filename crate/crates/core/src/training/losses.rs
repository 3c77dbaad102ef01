use crate::corpus::{Example, EOS};
use crate::error::{Error, Result};
use crate::generator::{Generator, Sampled};
use crate::metrics::gleu;
use crate::predictor::VocabMask;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Teacher-forced cross entropy of one example, with the full head or a
/// reduced one. Errors when a gold word falls outside the mask.
pub fn xent_loss<T: Scalar>(g: &mut Graph<'_, T>, model: &Generator<T>, example: &Example, mask: Option<&VocabMask>) -> Result<Var> {
    let head = model.head(g, mask)?;
    model.xent(g, &example.source, &example.target, &head)
}

/// One sampled sentence with its reward bookkeeping.
///
/// `rewards[t] = gleu - value(baselines[t])`; the baseline values enter the
/// policy loss as constants.
#[derive(Debug, Clone)]
pub struct RewardTrace {
    pub tokens: Vec<usize>,
    pub logps: Vec<Var>,
    pub baselines: Vec<Var>,
    pub gleu: f64,
    pub rewards: Vec<f64>,
}

impl RewardTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Hypothesis without its terminating EOS.
    pub fn hypothesis(&self) -> &[usize] {
        strip_eos(&self.tokens)
    }
}

pub(crate) fn strip_eos(tokens: &[usize]) -> &[usize] {
    match tokens.split_last() {
        Some((&EOS, rest)) => rest,
        _ => tokens,
    }
}

/// Scores a sampled sentence against `gold` and attaches a baseline
/// `b_t = sigmoid(W_r · s_t + b_r)` to every step. The states are detached
/// first, so the baseline regression only trains `W_r` and `b_r`.
pub fn reward_trace<T: Scalar>(g: &mut Graph<'_, T>, model: &Generator<T>, sampled: Sampled, gold: &[usize]) -> Result<RewardTrace> {
    let score = gleu(strip_eos(&sampled.tokens), strip_eos(gold));
    let mut baselines = Vec::with_capacity(sampled.states.len());
    let mut rewards = Vec::with_capacity(sampled.states.len());
    for s in &sampled.states {
        let s = g.detach(*s);
        let z = model.layout.baseline.forward(g, s)?;
        let b = g.sigmoid(z);
        let b = g.pick(b, 0);
        rewards.push(score - g.scalar(b).as_f64());
        baselines.push(b);
    }
    Ok(RewardTrace { tokens: sampled.tokens, logps: sampled.logps, baselines, gleu: score, rewards })
}

/// `-Σ_t R_t log p(y_t)` with the rewards as constants.
pub fn reinforce_loss<T: Scalar>(g: &mut Graph<'_, T>, trace: &RewardTrace) -> Result<Var> {
    if trace.logps.is_empty() {
        return Err(Error::Empty("reward trace"));
    }
    if trace.rewards.len() != trace.logps.len() {
        return Err(Error::Invalid("reward and step counts differ".into()));
    }
    let terms: Vec<Var> = trace
        .logps
        .iter()
        .zip(&trace.rewards)
        .map(|(lp, r)| g.scale(*lp, T::lit(-r)))
        .collect();
    Ok(g.add_n(&terms))
}

/// `Σ_t (b_t - GLEU)²`; zero for an empty trace.
pub fn baseline_loss<T: Scalar>(g: &mut Graph<'_, T>, trace: &RewardTrace) -> Var {
    if trace.baselines.is_empty() {
        return g.constant(Tensor::scalar(T::zero()));
    }
    let target = g.constant(Tensor::scalar(T::lit(trace.gleu)));
    let terms: Vec<Var> = trace
        .baselines
        .iter()
        .map(|b| {
            let d = g.sub(*b, target);
            g.square(d)
        })
        .collect();
    g.add_n(&terms)
}
