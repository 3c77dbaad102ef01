use crate::checkpoint::Checkpoint;
use crate::corpus::Source;
use crate::error::{check_width, Error, Result};
use crate::nn::{init_params, Embedding, Linear, ResidualBlock};
use crate::scalar::Scalar;
use crate::tensor::{BatchStats, Graph, ParamStore, Tensor, Var};

/// Input side of the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorInput {
    /// Mean of source-word embeddings over a source vocabulary of this size.
    Tokens { vocab: usize },
    /// Affine projection of a dense feature vector of this width.
    Features { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorConfig {
    pub input: PredictorInput,
    /// Size of the output (target) vocabulary.
    pub vocab: usize,
    /// Width `d_v` of the hidden representation.
    pub hidden: usize,
    pub dropout: f64,
}

impl PredictorConfig {
    pub fn tokens(src_vocab: usize, tgt_vocab: usize, hidden: usize) -> Self {
        PredictorConfig { input: PredictorInput::Tokens { vocab: src_vocab }, vocab: tgt_vocab, hidden, dropout: 0.4 }
    }

    pub fn features(dim: usize, tgt_vocab: usize, hidden: usize) -> Self {
        PredictorConfig { input: PredictorInput::Features { dim }, vocab: tgt_vocab, hidden, dropout: 0.4 }
    }
}

#[derive(Debug, Clone, Copy)]
enum InputHead {
    Bag(Embedding),
    Project(Linear),
}

/// Multi-label classifier over the target vocabulary:
/// `sigmoid(W_o · res(v(X)) + b_o)` with `v(X)` a bag of embeddings or a
/// projected feature vector and `res` a residual block.
#[derive(Debug, Clone)]
pub struct VocabPredictor<T: Scalar> {
    pub config: PredictorConfig,
    pub params: ParamStore<T>,
    head: InputHead,
    pub block: ResidualBlock<T>,
    pub out: Linear,
}

pub const PREDICTOR_KIND: &str = "vocab-predictor";

impl<T: Scalar> VocabPredictor<T> {
    pub fn new(config: PredictorConfig, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let d = config.hidden;
        let head = match config.input {
            PredictorInput::Tokens { vocab } => InputHead::Bag(Embedding::new(&mut params, "pred.emb", vocab, d)),
            PredictorInput::Features { dim } => InputHead::Project(Linear::new(&mut params, "pred.proj", dim, d)),
        };
        let block = ResidualBlock::new(&mut params, "pred.res", d, config.dropout);
        let out = Linear::new(&mut params, "pred.out", d, config.vocab);
        init_params(&mut params, seed);
        VocabPredictor { config, params, head, block, out }
    }

    /// Id of the source embedding table (token input only).
    pub fn embedding(&self) -> Option<Embedding> {
        match self.head {
            InputHead::Bag(e) => Some(e),
            InputHead::Project(_) => None,
        }
    }

    /// `v(X)` as a `[d_v]` vector.
    pub fn input_repr(&self, g: &mut Graph<'_, T>, source: &Source) -> Result<Var> {
        match (&self.head, source) {
            (InputHead::Bag(emb), Source::Tokens(ids)) => {
                if ids.is_empty() {
                    return Err(Error::Empty("source sequence"));
                }
                // a fixed summation order makes the bag exactly order-free
                let mut sorted = ids.clone();
                sorted.sort_unstable();
                let rows = emb.lookup_many(g, &sorted)?;
                Ok(g.row_mean(rows))
            }
            (InputHead::Project(lin), Source::Features(f)) => {
                check_width("predictor features", lin.input, f.len())?;
                let x = g.constant(Tensor::vector(f.iter().map(|v| T::lit(*v)).collect()));
                lin.forward(g, x)
            }
            _ => Err(Error::Invalid("source kind does not match predictor input".into())),
        }
    }

    /// Pre-sigmoid scores `[B, |V|]` for a batch of sources, with the
    /// batch-norm statistics in training graphs.
    pub fn logits_batch(&self, g: &mut Graph<'_, T>, sources: &[&Source]) -> Result<(Var, Vec<BatchStats<T>>)> {
        if sources.is_empty() {
            return Err(Error::Empty("predictor batch"));
        }
        let reprs = sources.iter().map(|s| self.input_repr(g, s)).collect::<Result<Vec<_>>>()?;
        let v = g.stack_rows(&reprs);
        let (r, stats) = self.block.forward(g, v)?;
        Ok((self.out.forward_rows(g, r)?, stats))
    }

    /// Summed smoothed binary cross-entropy over a batch, scores clamped to
    /// `[1e-7, 1 - 1e-7]`.
    pub fn loss_batch(
        &self,
        g: &mut Graph<'_, T>,
        sources: &[&Source],
        targets: &[Vec<f64>],
    ) -> Result<(Var, Vec<BatchStats<T>>)> {
        let (logits, stats) = self.logits_batch(g, sources)?;
        let o = g.sigmoid(logits);
        let flat: Vec<T> = targets.iter().flatten().map(|t| T::lit(*t)).collect();
        check_width("predictor targets", g.value(o).len(), flat.len())?;
        Ok((multilabel_loss(g, o, &flat), stats))
    }

    pub fn predict_logits(&self, source: &Source) -> Result<Vec<T>> {
        let mut g = Graph::inference(&self.params);
        let (l, _) = self.logits_batch(&mut g, &[source])?;
        g.check()?;
        Ok(g.value(l).data().to_vec())
    }

    /// Scores in `(0, 1)` for every target word.
    pub fn predict_scores(&self, source: &Source) -> Result<Vec<T>> {
        let mut g = Graph::inference(&self.params);
        let (l, _) = self.logits_batch(&mut g, &[source])?;
        let o = g.sigmoid(l);
        g.check()?;
        Ok(g.value(o).data().to_vec())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(PREDICTOR_KIND);
        let (kind, width) = match self.config.input {
            PredictorInput::Tokens { vocab } => ("tokens", vocab),
            PredictorInput::Features { dim } => ("features", dim),
        };
        ck.set_meta("input", kind);
        ck.set_meta("input_width", width);
        ck.set_meta("vocab", self.config.vocab);
        ck.set_meta("hidden", self.config.hidden);
        ck.set_meta("dropout", self.config.dropout);
        ck.put_params("", &self.params);
        for (name, bn) in [("bn1", &self.block.bn1), ("bn4", &self.block.bn4)] {
            ck.put_vec(format!("running.{name}.mean"), &bn.running_mean);
            ck.put_vec(format!("running.{name}.var"), &bn.running_var);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(PREDICTOR_KIND)?;
        let width = ck.meta_parse("input_width")?;
        let input = match ck.meta_str("input")? {
            "tokens" => PredictorInput::Tokens { vocab: width },
            "features" => PredictorInput::Features { dim: width },
            other => return Err(Error::Checkpoint(format!("unknown predictor input {other:?}"))),
        };
        let config = PredictorConfig {
            input,
            vocab: ck.meta_parse("vocab")?,
            hidden: ck.meta_parse("hidden")?,
            dropout: ck.meta_parse("dropout")?,
        };
        let mut model = Self::new(config, 0);
        ck.load_params("", &mut model.params)?;
        model.block.bn1.running_mean = ck.get_vec("running.bn1.mean")?;
        model.block.bn1.running_var = ck.get_vec("running.bn1.var")?;
        model.block.bn4.running_mean = ck.get_vec("running.bn4.mean")?;
        model.block.bn4.running_var = ck.get_vec("running.bn4.var")?;
        Ok(model)
    }
}

/// `-Σ t log o + (1 - t) log(1 - o)` with `o` clamped at 1e-7 from 0 and 1.
pub fn multilabel_loss<T: Scalar>(g: &mut Graph<'_, T>, scores: Var, targets: &[T]) -> Var {
    g.bce(scores, targets, T::lit(1e-7))
}
