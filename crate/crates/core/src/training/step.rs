use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::{baseline_loss, reinforce_loss, reward_trace};
use super::optim::{Optimizer, Rule};
use crate::corpus::{split_batch, Batch, Example};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::predictor::{MaskCache, VocabMask};
use crate::scalar::Scalar;
use crate::tensor::alloc::MemoryScope;
use crate::tensor::{GradStore, Graph, ParamStore, TensorError, Var};

/// Hyperparameters of generator training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Number of sequential sub-batches per update.
    pub split: usize,
    /// Longest target (EOS included) kept in training, and the sampling limit.
    pub max_len: usize,
    /// Weight of the cross-entropy term in the reinforcement phase.
    pub lambda: f64,
    pub ce_lr: f64,
    pub rl_lr: f64,
    pub momentum: f64,
    pub baseline_lr: f64,
    pub clip: f64,
    pub weight_decay: f64,
    pub ce_epochs: usize,
    pub rl_epochs: usize,
    /// Dev evaluations (and learning-rate checks) per epoch.
    pub evals_per_epoch: usize,
    /// Sample from gold-union masks in the reinforcement phase instead of
    /// evaluation-mode masks.
    pub rl_gold_union: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            split: 1,
            max_len: 50,
            lambda: 0.005,
            ce_lr: 1.0,
            rl_lr: 0.01,
            momentum: 0.75,
            baseline_lr: 1e-3,
            clip: 1.0,
            weight_decay: 1e-6,
            ce_epochs: 20,
            rl_epochs: 5,
            evals_per_epoch: 2,
            rl_gold_union: false,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.split == 0 || self.batch_size == 0 || self.max_len == 0 || self.evals_per_epoch == 0 {
            return bad("split, batch size, max length and evals per epoch must be positive");
        }
        if self.split > self.batch_size {
            return bad("split exceeds the batch size");
        }
        let rates = [self.ce_lr, self.rl_lr, self.momentum, self.baseline_lr, self.clip, self.weight_decay];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("rates must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Per-example masks: gold-union ones for teacher forcing and
/// evaluation-mode ones for sampling.
#[derive(Debug, Clone, Default)]
pub struct Masks {
    pub train: MaskCache,
    pub eval: MaskCache,
}

impl Masks {
    fn lookup<'a>(cache: &'a MaskCache, example: &Example) -> Result<&'a VocabMask> {
        cache
            .get(example.id)
            .ok_or_else(|| Error::Data(format!("no mask for example {}", example.id)))
    }

    pub fn train_mask(&self, example: &Example) -> Result<&VocabMask> {
        Self::lookup(&self.train, example)
    }

    pub fn eval_mask(&self, example: &Example) -> Result<&VocabMask> {
        Self::lookup(&self.eval, example)
    }
}

/// Optimizer pair and gradient buffer for one training phase: SGD with
/// momentum on the policy, Adam on the reward baseline.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    pub policy: Optimizer<T>,
    pub baseline: Optimizer<T>,
    pub grads: GradStore<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: &Generator<T>, cfg: &TrainConfig, lr: f64) -> Self {
        let policy = Optimizer::new(Rule::sgd(lr, cfg.momentum), &model.params, model.policy_ids())
            .with_clip(cfg.clip)
            .with_weight_decay(cfg.weight_decay);
        let baseline = Optimizer::new(Rule::adam(cfg.baseline_lr), &model.params, model.baseline_ids());
        Trainer { policy, baseline, grads: GradStore::zeros_like(&model.params) }
    }
}

/// Totals over the examples of one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    pub examples: usize,
    /// Sum of per-example joint losses (before the 1/B normalization).
    pub loss: f64,
    pub xent: f64,
    pub reinforce: f64,
    pub baseline: f64,
    /// Sum of sentence GLEU of the samples.
    pub gleu: f64,
    pub grad_norm: f64,
    /// Peak live tensor bytes during gradient accumulation.
    pub peak_bytes: usize,
}

impl StepStats {
    fn absorb(&mut self, other: &StepStats) {
        self.examples += other.examples;
        self.loss += other.loss;
        self.xent += other.xent;
        self.reinforce += other.reinforce;
        self.baseline += other.baseline;
        self.gleu += other.gleu;
    }
}

/// Seed for everything random about one example in one update, so results
/// do not depend on how the batch is split.
pub fn example_seed(step_seed: u64, example: usize) -> u64 {
    let mut z = step_seed ^ (example as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Accumulates `Σ_examples loss / |batch|` into `grads` over `s` sequential
/// sub-batches. Each sub-batch graph is released before the next is built.
/// Returns the summed stats and the peak live tensor bytes.
pub fn accumulate_split<T: Scalar, F>(
    params: &ParamStore<T>,
    grads: &mut GradStore<T>,
    batch: &Batch<'_>,
    s: usize,
    step_seed: u64,
    mut loss: F,
) -> Result<StepStats>
where
    F: FnMut(&mut Graph<'_, T>, &Example, u64, &mut StepStats) -> Result<Var>,
{
    let scope = MemoryScope::begin();
    let norm = T::lit(1.0 / batch.len() as f64);
    let mut stats = StepStats::default();
    for part in split_batch(batch, s)? {
        let mut g = Graph::training(params, step_seed);
        let mut terms = Vec::with_capacity(part.len());
        for ex in &part.examples {
            let seed = example_seed(step_seed, ex.id);
            g.reseed(seed);
            let mut st = StepStats::default();
            let l = loss(&mut g, ex, seed, &mut st)?;
            st.examples = 1;
            st.loss = g.scalar(l).as_f64();
            stats.absorb(&st);
            terms.push(l);
        }
        let total = g.add_n(&terms);
        let total = g.scale(total, norm);
        g.check()?;
        g.backward(total, grads)?;
    }
    stats.peak_bytes = scope.end();
    Ok(stats)
}

/// Gradient accumulation over `s` sub-batches followed by one update of
/// every optimizer in `optimizers`. `loss` builds one example's loss.
pub fn split_update<T: Scalar, F>(
    model: &mut Generator<T>,
    grads: &mut GradStore<T>,
    optimizers: &mut [&mut Optimizer<T>],
    batch: &Batch<'_>,
    s: usize,
    step_seed: u64,
    mut loss: F,
) -> Result<StepStats>
where
    F: FnMut(&Generator<T>, &mut Graph<'_, T>, &Example, u64, &mut StepStats) -> Result<Var>,
{
    grads.zero();
    let mut stats = {
        let m: &Generator<T> = model;
        accumulate_split(&m.params, grads, batch, s, step_seed, |g, ex, seed, st| loss(m, g, ex, seed, st))?
    };
    if !grads.all_finite() {
        return Err(TensorError::NonFinite { op: "gradient".into() }.into());
    }
    for opt in optimizers.iter_mut() {
        let n = opt.step(&mut model.params, grads);
        stats.grad_norm = stats.grad_norm.max(n);
    }
    if !model.params.all_finite() {
        return Err(TensorError::NonFinite { op: "update".into() }.into());
    }
    Ok(stats)
}

/// `λ L_c + (1 - λ) L_r + L_b` for one example.
///
/// The cross-entropy term is teacher forced through the gold-union mask; the
/// sample is drawn through the evaluation mask (or the gold-union one when
/// `rl_gold_union` is set). With `λ = 1` nothing is sampled; with `λ = 0` no
/// teacher-forced pass is run. Both passes share one source encoding.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    model: &Generator<T>,
    example: &Example,
    masks: Option<&Masks>,
    cfg: &TrainConfig,
    lambda: f64,
    seed: u64,
    stats: &mut StepStats,
) -> Result<Var> {
    let state = model.begin(g, &example.source)?;
    let mut parts = Vec::with_capacity(3);
    if lambda > 0.0 {
        let mask = masks.map(|m| m.train_mask(example)).transpose()?;
        let head = model.head(g, mask)?;
        let xent = model.teacher_force(g, state.clone(), &example.target, &head)?;
        stats.xent = g.scalar(xent).as_f64();
        parts.push(if lambda == 1.0 { xent } else { g.scale(xent, T::lit(lambda)) });
    }
    if lambda < 1.0 {
        let mask = match masks {
            Some(m) if cfg.rl_gold_union => Some(m.train_mask(example)?),
            Some(m) => Some(m.eval_mask(example)?),
            None => None,
        };
        let head = model.head(g, mask)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5A4D_F00D);
        let sampled = model.sample_from(g, state, &head, cfg.max_len, Some(&mut rng))?;
        let trace = reward_trace(g, model, sampled, &example.target)?;
        let lr = reinforce_loss(g, &trace)?;
        let lb = baseline_loss(g, &trace);
        stats.reinforce = g.scalar(lr).as_f64();
        stats.baseline = g.scalar(lb).as_f64();
        stats.gleu = trace.gleu;
        parts.push(g.scale(lr, T::lit(1.0 - lambda)));
        parts.push(lb);
    }
    Ok(if parts.len() == 1 { parts[0] } else { g.add_n(&parts) })
}

/// One update of the joint objective over `batch`, split into
/// `cfg.split` sequential sub-batches. The baseline optimizer only steps
/// when something was sampled.
pub fn joint_step<T: Scalar>(
    model: &mut Generator<T>,
    trainer: &mut Trainer<T>,
    batch: &Batch<'_>,
    masks: Option<&Masks>,
    cfg: &TrainConfig,
    lambda: f64,
    step_seed: u64,
) -> Result<StepStats> {
    let Trainer { policy, baseline, grads } = trainer;
    let loss = |m: &Generator<T>, g: &mut Graph<'_, T>, ex: &Example, seed: u64, st: &mut StepStats| {
        joint_loss(g, m, ex, masks, cfg, lambda, seed, st)
    };
    let mut opts: Vec<&mut Optimizer<T>> = vec![policy];
    if lambda < 1.0 {
        opts.push(baseline);
    }
    split_update(model, grads, &mut opts, batch, cfg.split, step_seed, loss)
}
