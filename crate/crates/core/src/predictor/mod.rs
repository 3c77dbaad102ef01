//! Per-input vocabulary prediction and mask construction.

mod eval;
mod mask;
mod model;
mod targets;
mod train;

pub use eval::{build_masks, covered, recall_at_k, recall_curve};
pub use mask::{build_mask, top_k, MaskCache, MaskMode, VocabMask};
pub use model::{multilabel_loss, PredictorConfig, PredictorInput, VocabPredictor, PREDICTOR_KIND};
pub use targets::{smooth_targets, target_words, unigram_prior, SmoothedTargets};
pub use train::{train_predictor, PredictorEpoch, PredictorTrainConfig};
