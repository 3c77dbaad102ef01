use std::cmp::Ordering;

use crate::corpus::EOS;
use crate::error::{Error, Result};

/// A left-to-right model that scores the next token given a state.
///
/// Classes are local indices into the model's output head; `global` maps
/// them back to vocabulary ids.
pub trait StepModel {
    type State: Clone;

    fn start(&mut self) -> Result<Self::State>;

    /// Log-probabilities over the classes after feeding `prev`.
    fn next(&mut self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>)>;

    fn global(&self, local: usize) -> usize;
}

/// How finished hypotheses are ranked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthNorm {
    None,
    /// `logp / len^alpha`, where `len` counts the EOS token.
    Power(f64),
}

impl Default for LengthNorm {
    fn default() -> Self {
        LengthNorm::Power(1.0)
    }
}

impl LengthNorm {
    pub fn apply(&self, logp: f64, len: usize) -> f64 {
        match *self {
            LengthNorm::None => logp,
            LengthNorm::Power(alpha) => logp / (len.max(1) as f64).powf(alpha),
        }
    }

    /// Largest normalized score reachable from a live hypothesis with
    /// cumulative `logp`, if it can grow to at most `max_len` tokens.
    fn bound(&self, logp: f64, max_len: usize) -> f64 {
        match *self {
            LengthNorm::None => logp,
            // logp only decreases and is negative, so the longest length
            // divides it the most.
            LengthNorm::Power(alpha) if alpha >= 0.0 => logp / (max_len.max(1) as f64).powf(alpha),
            LengthNorm::Power(_) => logp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids without the final EOS.
    pub tokens: Vec<usize>,
    pub logp: f64,
    /// Number of decoding steps, EOS included.
    pub len: usize,
    /// False when the hypothesis was cut at the length limit.
    pub finished: bool,
    pub score: f64,
}

#[derive(Debug, Clone)]
struct Live<S> {
    tokens: Vec<usize>,
    logp: f64,
    state: S,
}

/// Beam search. Returns every retained hypothesis (finished ones plus any cut
/// at `max_n`), best normalized score first.
///
/// The search stops once no live hypothesis can still reach a normalized
/// score above the best finished one.
pub fn beam_search<M: StepModel>(model: &mut M, width: usize, max_n: usize, norm: LengthNorm) -> Result<Vec<Hypothesis>> {
    if width == 0 {
        return Err(Error::Invalid("beam width must be at least 1".into()));
    }
    let mut live = vec![Live { tokens: Vec::new(), logp: 0.0, state: model.start()? }];
    let mut done: Vec<Hypothesis> = Vec::new();
    let mut best_done = f64::NEG_INFINITY;
    for _ in 0..max_n {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (h, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(crate::corpus::BOS);
            let (state, logp) = model.next(&hyp.state, prev)?;
            cands.extend(logp.iter().enumerate().map(|(j, lp)| (hyp.logp + lp, h, j)));
            next_states.push(state);
        }
        let order = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        };
        if cands.len() > width {
            cands.select_nth_unstable_by(width - 1, order);
            cands.truncate(width);
        }
        cands.sort_by(order);
        let mut fresh = Vec::with_capacity(width);
        for (logp, h, j) in cands {
            let y = model.global(j);
            let mut tokens = live[h].tokens.clone();
            if y == EOS {
                let len = tokens.len() + 1;
                let score = norm.apply(logp, len);
                best_done = best_done.max(score);
                done.push(Hypothesis { tokens, logp, len, finished: true, score });
            } else {
                tokens.push(y);
                fresh.push(Live { tokens, logp, state: next_states[h].clone() });
            }
        }
        live = fresh;
        let best_live = live.iter().map(|h| norm.bound(h.logp, max_n)).fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || best_live <= best_done {
            live.clear();
            break;
        }
    }
    for h in live {
        let len = h.tokens.len();
        let score = norm.apply(h.logp, len);
        done.push(Hypothesis { tokens: h.tokens, logp: h.logp, len, finished: false, score });
    }
    done.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    Ok(done)
}

/// Greedy search over a [`StepModel`]: the argmax at each step, lowest
/// index on ties.
pub fn greedy_search<M: StepModel>(model: &mut M, max_n: usize) -> Result<Hypothesis> {
    let mut state = model.start()?;
    let mut tokens = Vec::new();
    let mut logp = 0.0;
    let mut prev = crate::corpus::BOS;
    for _ in 0..max_n {
        let (next, lp) = model.next(&state, prev)?;
        let mut best = 0;
        for (i, v) in lp.iter().enumerate() {
            if *v > lp[best] {
                best = i;
            }
        }
        logp += lp[best];
        let y = model.global(best);
        if y == EOS {
            let len = tokens.len() + 1;
            return Ok(Hypothesis { tokens, logp, len, finished: true, score: logp });
        }
        tokens.push(y);
        state = next;
        prev = y;
    }
    let len = tokens.len();
    Ok(Hypothesis { tokens, logp, len, finished: false, score: logp })
}
