use std::fmt::Write as _;
use std::time::Instant;

use super::losses::strip_eos;
use super::optim::{LrSchedule, Optimizer, Rule};
use super::step::{joint_step, Masks, TrainConfig, Trainer};
use crate::checkpoint::Checkpoint;
use crate::corpus::{batch_iter, Example, SortKey};
use crate::decode::greedy_decode;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::metrics::{corpus_bleu, gleu};
use crate::predictor::MaskCache;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Xent,
    Rl,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Xent => "xent",
            Phase::Rl => "rl",
        }
    }
}

/// One row of the learning curve: written at every dev evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Fractional epoch within the phase.
    pub epoch: f64,
    pub phase: Phase,
    /// Mean per-example training loss since the previous row.
    pub loss: f64,
    pub dev_gleu: f64,
    pub dev_bleu: f64,
    /// Learning rate in effect after this evaluation.
    pub lr: f64,
    /// Training wall time since the previous row, dev evaluation excluded.
    pub seconds: f64,
    /// Largest per-update peak of live tensor bytes since the previous row.
    pub peak_bytes: usize,
}

pub const CURVES_HEADER: &str = "epoch,phase,loss,dev_gleu,dev_bleu,lr,seconds,peak_bytes";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.2},{},{:.6},{:.6},{:.4},{:.6},{:.4},{}",
            self.epoch,
            self.phase.name(),
            self.loss,
            self.dev_gleu,
            self.dev_bleu,
            self.lr,
            self.seconds,
            self.peak_bytes
        )
    }
}

/// Called after every dev evaluation with the record, the model and the optimizer state.
pub type EvalHook<'a, T> = dyn FnMut(&EpochRecord, &Generator<T>, &Trainer<T>) -> Result<()> + 'a;

pub fn curves_csv(records: &[EpochRecord]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Dev scores of greedy decoding: corpus BLEU (×100) and mean sentence GLEU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevScores {
    pub bleu: f64,
    pub gleu: f64,
}

/// Greedy-decodes `examples`, with each example's mask from `masks` when
/// given, and scores the output against the targets.
pub fn evaluate<T: Scalar>(model: &Generator<T>, examples: &[Example], masks: Option<&MaskCache>, max_len: usize) -> Result<DevScores> {
    if examples.is_empty() {
        return Ok(DevScores { bleu: f64::NAN, gleu: f64::NAN });
    }
    let mut hyps = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    let mut total = 0.0;
    for ex in examples {
        let mask = match masks {
            Some(m) => Some(m.get(ex.id).ok_or_else(|| Error::Data(format!("no mask for example {}", ex.id)))?),
            None => None,
        };
        let hyp = greedy_decode(model, &ex.source, mask, max_len)?;
        let gold = strip_eos(&ex.target).to_vec();
        total += gleu(&hyp, &gold);
        hyps.push(hyp);
        refs.push(gold);
    }
    Ok(DevScores { bleu: corpus_bleu(&hyps, &refs)?, gleu: total / examples.len() as f64 })
}

/// Training and dev data of a run. `masks` switches every phase to the
/// reduced head.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [Example],
    pub dev: &'a [Example],
    pub masks: Option<&'a Masks>,
    /// Evaluation-mode masks for the dev examples.
    pub dev_masks: Option<&'a MaskCache>,
}

#[derive(Debug, Clone)]
pub struct PhaseResult<T: Scalar> {
    pub records: Vec<EpochRecord>,
    /// Best dev BLEU seen; the model is left at that evaluation point.
    pub best_bleu: f64,
    pub best_gleu: f64,
    pub trainer: Trainer<T>,
}

/// Seed of the `b`-th update of `epoch` in `phase`.
fn step_seed(seed: u64, phase: Phase, epoch: usize, b: usize) -> u64 {
    let p = match phase {
        Phase::Xent => 1,
        Phase::Rl => 2,
    };
    seed.wrapping_mul(0x0100_0000_01B3) ^ (p << 60) ^ ((epoch as u64) << 32) ^ b as u64
}

/// Runs `epochs` epochs of one phase: cross entropy (`λ = 1`, learning rate
/// `ce_lr`) or the joint reinforcement objective (`λ = cfg.lambda`,
/// `rl_lr`). Dev BLEU is measured `evals_per_epoch` times per epoch; it
/// drives learning-rate halving and selects the parameters kept at the end.
/// `on_eval` sees every record with the current model and optimizers.
pub fn run_phase<T: Scalar>(
    model: &mut Generator<T>,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    phase: Phase,
    epochs: usize,
    on_eval: &mut EvalHook<'_, T>,
) -> Result<PhaseResult<T>> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (lambda, lr) = match phase {
        Phase::Xent => (1.0, cfg.ce_lr),
        Phase::Rl => (cfg.lambda, cfg.rl_lr),
    };
    let mut trainer = Trainer::new(model, cfg, lr);
    let mut schedule = LrSchedule::new(lr);
    let mut records = Vec::new();
    let mut best: Option<(f64, f64, Generator<T>)> = None;
    let batches_per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let every = batches_per_epoch.div_ceil(cfg.evals_per_epoch).max(1);
    for epoch in 0..epochs {
        let shuffle = step_seed(cfg.seed, phase, epoch, usize::MAX >> 1);
        let mut clock = Instant::now();
        let mut seconds = 0.0;
        let (mut loss, mut count, mut peak) = (0.0, 0usize, 0usize);
        for (b, batch) in batch_iter(data.train, cfg.batch_size, Some(shuffle), SortKey::Source).enumerate() {
            let split = cfg.split.min(batch.len());
            let cfg_b = TrainConfig { split, ..cfg.clone() };
            let st = joint_step(model, &mut trainer, &batch, data.masks, &cfg_b, lambda, step_seed(cfg.seed, phase, epoch, b))?;
            loss += st.loss;
            count += st.examples;
            peak = peak.max(st.peak_bytes);
            let last = b + 1 == batches_per_epoch;
            if (b + 1) % every == 0 || last {
                seconds += clock.elapsed().as_secs_f64();
                let dev_masks = data.dev_masks;
                let scores = evaluate(model, data.dev, dev_masks, cfg.max_len)?;
                let at = epoch as f64 + (b + 1) as f64 / batches_per_epoch as f64;
                let new_lr = if scores.bleu.is_nan() { schedule.lr() } else { schedule.observe(at, scores.bleu) };
                trainer.policy.set_lr(new_lr);
                let rec = EpochRecord {
                    epoch: at,
                    phase,
                    loss: loss / count.max(1) as f64,
                    dev_gleu: scores.gleu,
                    dev_bleu: scores.bleu,
                    lr: new_lr,
                    seconds,
                    peak_bytes: peak,
                };
                on_eval(&rec, model, &trainer)?;
                records.push(rec);
                if !scores.bleu.is_nan() && best.as_ref().is_none_or(|(bl, _, _)| scores.bleu > *bl) {
                    best = Some((scores.bleu, scores.gleu, model.clone()));
                }
                (loss, count, peak, seconds) = (0.0, 0, 0, 0.0);
                clock = Instant::now();
            }
        }
    }
    let (best_bleu, best_gleu) = match best {
        Some((b, gl, m)) => {
            *model = m;
            (b, gl)
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(PhaseResult { records, best_bleu, best_gleu, trainer })
}

/// Cross-entropy pre-training for `cfg.ce_epochs`, then the reinforcement
/// phase for `cfg.rl_epochs`, each keeping its best dev-BLEU parameters.
pub fn pretrain_then_rl<T: Scalar>(
    model: &mut Generator<T>,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    on_eval: &mut EvalHook<'_, T>,
) -> Result<Vec<EpochRecord>> {
    let mut records = Vec::new();
    if cfg.ce_epochs > 0 {
        records.extend(run_phase(model, data, cfg, Phase::Xent, cfg.ce_epochs, on_eval)?.records);
    }
    if cfg.rl_epochs > 0 {
        records.extend(run_phase(model, data, cfg, Phase::Rl, cfg.rl_epochs, on_eval)?.records);
    }
    Ok(records)
}

/// One curve per number of pre-training epochs, each starting from a fresh
/// model built by `init`.
pub fn pretrain_sweep<T: Scalar>(
    init: &dyn Fn() -> Result<Generator<T>>,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    pretrain_epochs: &[usize],
) -> Result<Vec<(usize, Vec<EpochRecord>)>> {
    pretrain_epochs
        .iter()
        .map(|&n| {
            let mut model = init()?;
            let c = TrainConfig { ce_epochs: n, ..cfg.clone() };
            let recs = pretrain_then_rl(&mut model, data, &c, &mut |_, _, _| Ok(()))?;
            Ok((n, recs))
        })
        .collect()
}

pub fn sweep_csv(curves: &[(usize, Vec<EpochRecord>)]) -> String {
    let mut out = format!("pretrain_epochs,{CURVES_HEADER}\n");
    for (n, recs) in curves {
        for r in recs {
            let _ = writeln!(out, "{n},{}", r.csv_row());
        }
    }
    out
}

/// Stores an optimizer's rule, step count and moment buffers under `prefix`.
pub fn put_optimizer<T: Scalar>(ck: &mut Checkpoint, prefix: &str, opt: &Optimizer<T>) {
    ck.set_meta(format!("{prefix}.rule"), opt.rule.name());
    ck.set_meta(format!("{prefix}.lr"), opt.lr());
    ck.set_meta(format!("{prefix}.steps"), opt.steps());
    for (i, slots) in opt.state().iter().enumerate() {
        for (j, t) in slots.iter().enumerate() {
            ck.put(format!("{prefix}.state.{i}.{j}"), t);
        }
    }
}

/// Restores what [`put_optimizer`] stored into an optimizer of the same
/// rule and parameter layout.
pub fn load_optimizer<T: Scalar>(ck: &Checkpoint, prefix: &str, opt: &mut Optimizer<T>) -> Result<()> {
    let rule: String = ck.meta_parse(&format!("{prefix}.rule"))?;
    if rule != opt.rule.name() {
        return Err(Error::Checkpoint(format!("optimizer {prefix} is {rule}, expected {}", opt.rule.name())));
    }
    let slots = match opt.rule {
        Rule::Adam { .. } => 2,
        _ => 1,
    };
    let state = (0..opt.ids().len())
        .map(|i| (0..slots).map(|j| ck.get(&format!("{prefix}.state.{i}.{j}"))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    opt.restore(state, ck.meta_parse(&format!("{prefix}.steps"))?)
        .map_err(Error::Checkpoint)?;
    opt.set_lr(ck.meta_parse(&format!("{prefix}.lr"))?);
    Ok(())
}

/// Generator checkpoint with both optimizers attached.
pub fn training_checkpoint<T: Scalar>(model: &Generator<T>, trainer: &Trainer<T>) -> Checkpoint {
    let mut ck = model.to_checkpoint();
    put_optimizer(&mut ck, "opt.policy", &trainer.policy);
    put_optimizer(&mut ck, "opt.baseline", &trainer.baseline);
    ck
}
