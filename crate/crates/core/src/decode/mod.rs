//! Test-time generation: greedy and beam search over full or predicted
//! vocabularies, with per-sentence timing.

mod beam;

use std::fmt::Write as _;
use std::time::Instant;

pub use beam::{beam_search, greedy_search, Hypothesis, LengthNorm, StepModel};

use crate::corpus::Source;
use crate::error::{Error, Result};
use crate::generator::{DecoderState, Generator, OutputHead};
use crate::predictor::{build_mask, MaskMode, VocabMask, VocabPredictor};
use crate::scalar::Scalar;
use crate::tensor::Graph;

/// A generator bound to one source sentence and one output head. All
/// hypotheses share the nodes of a single inference graph.
pub struct GeneratorStepper<'p, T: Scalar> {
    model: &'p Generator<T>,
    graph: Graph<'p, T>,
    head: OutputHead,
    init: Option<DecoderState>,
}

impl<'p, T: Scalar> GeneratorStepper<'p, T> {
    pub fn new(model: &'p Generator<T>, source: &Source, mask: Option<&VocabMask>) -> Result<Self> {
        let mut graph = Graph::inference(&model.params);
        let head = model.head(&mut graph, mask)?;
        let init = model.begin(&mut graph, source)?;
        Ok(GeneratorStepper { model, graph, head, init: Some(init) })
    }

    pub fn head(&self) -> &OutputHead {
        &self.head
    }
}

impl<T: Scalar> StepModel for GeneratorStepper<'_, T> {
    type State = DecoderState;

    fn start(&mut self) -> Result<DecoderState> {
        self.init.clone().ok_or(Error::Empty("decoder state"))
    }

    fn next(&mut self, state: &DecoderState, prev: usize) -> Result<(DecoderState, Vec<f64>)> {
        let (next, logp) = self.model.step(&mut self.graph, state, prev, &self.head)?;
        self.graph.check()?;
        let values = self.graph.value(logp).data().iter().map(|v| v.as_f64()).collect();
        Ok((next, values))
    }

    fn global(&self, local: usize) -> usize {
        self.head.global(local)
    }
}

/// Search strategy for a decode call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Search {
    Greedy,
    Beam { width: usize, norm: LengthNorm },
}

/// Argmax decoding until EOS or `max_n` tokens. The EOS itself is not
/// returned.
pub fn greedy_decode<T: Scalar>(model: &Generator<T>, source: &Source, mask: Option<&VocabMask>, max_n: usize) -> Result<Vec<usize>> {
    let mut m = GeneratorStepper::new(model, source, mask)?;
    Ok(greedy_search(&mut m, max_n)?.tokens)
}

/// Best hypothesis of a beam search, ranked by normalized score.
pub fn beam_decode<T: Scalar>(
    model: &Generator<T>,
    source: &Source,
    mask: Option<&VocabMask>,
    width: usize,
    max_n: usize,
    norm: LengthNorm,
) -> Result<Vec<usize>> {
    Ok(beam_nbest(model, source, mask, width, max_n, norm)?.swap_remove(0).tokens)
}

/// Every hypothesis retained by the beam, best first.
pub fn beam_nbest<T: Scalar>(
    model: &Generator<T>,
    source: &Source,
    mask: Option<&VocabMask>,
    width: usize,
    max_n: usize,
    norm: LengthNorm,
) -> Result<Vec<Hypothesis>> {
    let mut m = GeneratorStepper::new(model, source, mask)?;
    let hyps = beam_search(&mut m, width, max_n, norm)?;
    if hyps.is_empty() {
        return Err(Error::Empty("beam"));
    }
    Ok(hyps)
}

pub fn decode<T: Scalar>(model: &Generator<T>, source: &Source, mask: Option<&VocabMask>, search: Search, max_n: usize) -> Result<Vec<usize>> {
    match search {
        Search::Greedy => greedy_decode(model, source, mask, max_n),
        Search::Beam { width, norm } => beam_decode(model, source, mask, width, max_n, norm),
    }
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub mask: VocabMask,
    /// Predictor forward pass plus top-K selection.
    pub mask_ms: f64,
    /// Head gathering, encoding and search.
    pub decode_ms: f64,
    pub total_ms: f64,
}

/// Predicts an evaluation-mode mask of size `k` (top-K plus specials) and
/// decodes with the reduced head. `k` need not match the size used in
/// training.
pub fn decode_with_predictor<T: Scalar>(
    generator: &Generator<T>,
    predictor: &VocabPredictor<T>,
    source: &Source,
    k: usize,
    search: Search,
    max_n: usize,
) -> Result<Decoded> {
    let start = Instant::now();
    let mask = predicted_mask(predictor, source, k)?;
    let mask_ms = ms(start);
    let t = Instant::now();
    let tokens = decode(generator, source, Some(&mask), search, max_n)?;
    let decode_ms = ms(t);
    Ok(Decoded { tokens, mask, mask_ms, decode_ms, total_ms: ms(start) })
}

/// Evaluation-mode mask of `min(k, |V|)` ids for one source.
pub fn predicted_mask<T: Scalar>(predictor: &VocabPredictor<T>, source: &Source, k: usize) -> Result<VocabMask> {
    let scores = predictor.predict_logits(source)?;
    build_mask(&scores, k.min(scores.len()), None, MaskMode::Eval)
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// One configuration of a decoding benchmark: the full head when
/// `predictor` is `None`, otherwise a predicted mask of the given size.
pub struct BenchSetting<'a, T: Scalar> {
    pub name: String,
    pub generator: &'a Generator<T>,
    pub predictor: Option<(&'a VocabPredictor<T>, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub setting: String,
    pub vocab: usize,
    /// Mask size; `|V|` for the full head.
    pub k: usize,
    /// Generator parameter count.
    pub params: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Mean time relative to the first full-head setting.
    pub ratio: f64,
}

/// Single-threaded per-sentence decoding times. Reduced settings include
/// the mask construction. Each setting decodes the first source once
/// untimed to warm caches.
pub fn decode_benchmark<T: Scalar>(settings: &[BenchSetting<'_, T>], sources: &[Source], search: Search, max_n: usize) -> Result<Vec<BenchRow>> {
    if sources.is_empty() {
        return Err(Error::Empty("benchmark dataset"));
    }
    let mut rows = Vec::with_capacity(settings.len());
    for s in settings {
        let run = |src: &Source| -> Result<f64> {
            let start = Instant::now();
            match s.predictor {
                Some((p, k)) => {
                    decode_with_predictor(s.generator, p, src, k, search, max_n)?;
                }
                None => {
                    decode(s.generator, src, None, search, max_n)?;
                }
            }
            Ok(ms(start))
        };
        run(&sources[0])?;
        let mut times = sources.iter().map(run).collect::<Result<Vec<_>>>()?;
        times.sort_by(f64::total_cmp);
        let vocab = s.generator.config.vocab;
        rows.push(BenchRow {
            setting: s.name.clone(),
            vocab,
            k: s.predictor.map_or(vocab, |(_, k)| k.min(vocab)),
            params: s.generator.params.num_scalars(),
            mean_ms: times.iter().sum::<f64>() / times.len() as f64,
            p50_ms: quantile(&times, 0.5),
            p95_ms: quantile(&times, 0.95),
            ratio: f64::NAN,
        });
    }
    let full = settings.iter().position(|s| s.predictor.is_none()).map(|i| rows[i].mean_ms);
    for r in &mut rows {
        r.ratio = full.map_or(f64::NAN, |f| r.mean_ms / f);
    }
    Ok(rows)
}

/// Nearest-rank quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn benchmark_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("setting,vocab,K,params,mean_ms,p50_ms,p95_ms,ratio\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
            r.setting, r.vocab, r.k, r.params, r.mean_ms, r.p50_ms, r.p95_ms, r.ratio
        );
    }
    out
}
