use std::time::Instant;

use super::eval::recall_at_k;
use super::model::VocabPredictor;
use super::targets::{smooth_targets, target_words, unigram_prior};
use crate::corpus::{batch_iter, Example, SortKey};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{GradStore, Graph};
use crate::training::{Optimizer, Rule};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorTrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub smoothing: f64,
    /// K at which dev recall selects the best epoch.
    pub select_k: usize,
    pub seed: u64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        PredictorTrainConfig { batch_size: 128, lr: 0.08, epochs: 10, smoothing: 0.1, select_k: 1000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub dev_recall: f64,
    pub seconds: f64,
}

/// AdaGrad training with label smoothing. The parameters from the epoch
/// with the best dev recall at `select_k` are kept.
pub fn train_predictor<T: Scalar>(
    model: &mut VocabPredictor<T>,
    train: &[Example],
    dev: &[Example],
    cfg: &PredictorTrainConfig,
    mut on_epoch: impl FnMut(&PredictorEpoch),
) -> Result<Vec<PredictorEpoch>> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let vocab = model.config.vocab;
    let prior = unigram_prior(train, vocab);
    let mut opt = Optimizer::all(Rule::adagrad(cfg.lr), &model.params);
    let mut grads = GradStore::zeros_like(&model.params);
    let select_k = cfg.select_k.min(vocab);
    let mut best: Option<(f64, VocabPredictor<T>)> = None;
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        let epoch_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64);
        for (b, batch) in batch_iter(train, cfg.batch_size, Some(epoch_seed), SortKey::Source).enumerate() {
            let sources: Vec<_> = batch.examples.iter().map(|e| &e.source).collect();
            let targets = batch
                .examples
                .iter()
                .map(|e| smooth_targets(&target_words(&e.target), cfg.smoothing, &prior).map(|s| s.t))
                .collect::<Result<Vec<_>>>()?;
            grads.zero();
            let stats = {
                let mut g = Graph::training(&model.params, epoch_seed ^ ((b as u64) << 20));
                let (loss, stats) = model.loss_batch(&mut g, &sources, &targets)?;
                total += g.scalar(loss).as_f64();
                g.backward(loss, &mut grads)?;
                stats
            };
            opt.step(&mut model.params, &mut grads);
            if !model.params.all_finite() {
                return Err(Error::Tensor(crate::tensor::TensorError::NonFinite { op: "adagrad".into() }));
            }
            model.block.update_running(&stats, batch.len());
        }
        let dev_recall = if dev.is_empty() { f64::NAN } else { recall_at_k(model, dev, select_k)? };
        let rec = PredictorEpoch {
            epoch,
            loss: total / train.len() as f64,
            dev_recall,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        history.push(rec);
        if !dev.is_empty() && best.as_ref().is_none_or(|(r, _)| dev_recall > *r) {
            best = Some((dev_recall, model.clone()));
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(history)
}
