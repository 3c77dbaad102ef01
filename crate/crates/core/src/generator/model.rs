use rand::Rng;

use super::head::OutputHead;
use crate::checkpoint::Checkpoint;
use crate::corpus::{Source, BOS, EOS};
use crate::error::{check_width, Error, Result};
use crate::nn::{self, bilstm_encode, init_params, Embedding, Linear, LstmCell, LstmState};
use crate::predictor::VocabMask;
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, ParamKind, ParamStore, Tensor, Var};

/// Scoring function between a decoder state and encoder states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attention {
    /// `hᵀ (fwd_i + bwd_i)`.
    Dot,
    /// `hᵀ W_a [fwd_i; bwd_i]`.
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Tokens { vocab: usize },
    Features { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub source: SourceKind,
    /// Target vocabulary size.
    pub vocab: usize,
    pub hidden: usize,
    pub layers: usize,
    pub attention: Attention,
    /// Feed the previous attentional state into the first decoder layer.
    pub input_feed: bool,
    pub dropout: f64,
}

impl GeneratorConfig {
    /// Attention encoder-decoder over token sources.
    pub fn translation(src_vocab: usize, tgt_vocab: usize, hidden: usize) -> Self {
        GeneratorConfig {
            source: SourceKind::Tokens { vocab: src_vocab },
            vocab: tgt_vocab,
            hidden,
            layers: 1,
            attention: Attention::General,
            input_feed: true,
            dropout: 0.2,
        }
    }

    /// Decoder initialized from a feature vector, without attention.
    pub fn captioning(feature_dim: usize, tgt_vocab: usize, hidden: usize) -> Self {
        GeneratorConfig {
            source: SourceKind::Features { dim: feature_dim },
            vocab: tgt_vocab,
            hidden,
            layers: 1,
            attention: Attention::General,
            input_feed: false,
            dropout: 0.2,
        }
    }

    pub fn has_attention(&self) -> bool {
        matches!(self.source, SourceKind::Tokens { .. })
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.vocab == 0 {
            return Err(Error::Invalid("generator sizes must be positive".into()));
        }
        if !(1..=2).contains(&self.layers) {
            return Err(Error::Invalid(format!("{} decoder layers; 1 or 2 supported", self.layers)));
        }
        if !self.has_attention() && self.input_feed {
            return Err(Error::Invalid("input feeding requires attention".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Parameter handles of a generator.
#[derive(Debug, Clone)]
pub struct Layout {
    pub src_emb: Option<Embedding>,
    pub enc_fwd: Option<LstmCell>,
    pub enc_bwd: Option<LstmCell>,
    pub attn_w: Option<ParamId>,
    pub attn_out: Option<Linear>,
    pub feat: Option<Linear>,
    pub decoder: Vec<LstmCell>,
    /// Output matrix `[|V|, d]`, also the target embedding table.
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub tgt_emb: Embedding,
    /// Linear reward baseline `sigmoid(W_r · s + b_r)`.
    pub baseline: Linear,
}

/// Encoder states `[M, 2d]`.
#[derive(Debug, Clone, Copy)]
pub struct Memory {
    pub states: Var,
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    pub layers: Vec<LstmState>,
    /// Previous attentional state, fed back when input feeding is on.
    pub feed: Option<Var>,
    /// Output state of the last step (`s_t`, or `h_t` without attention).
    pub s: Option<Var>,
    pub memory: Option<Memory>,
    pub t: usize,
}

/// A decoded sentence with per-step log-probability scalars and states.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub tokens: Vec<usize>,
    pub logps: Vec<Var>,
    pub states: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Generator<T: Scalar> {
    pub config: GeneratorConfig,
    pub params: ParamStore<T>,
    pub layout: Layout,
}

pub const GENERATOR_KIND: &str = "generator";

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let mut p = ParamStore::new();
        let (mut src_emb, mut enc_fwd, mut enc_bwd, mut attn_w, mut attn_out, mut feat) =
            (None, None, None, None, None, None);
        match config.source {
            SourceKind::Tokens { vocab } => {
                src_emb = Some(Embedding::new(&mut p, "src_emb", vocab, d));
                enc_fwd = Some(LstmCell::new(&mut p, "enc_fwd", d, d));
                enc_bwd = Some(LstmCell::new(&mut p, "enc_bwd", d, d));
                if config.attention == Attention::General {
                    attn_w = Some(p.add_kind("attn.w", Tensor::zeros(&[d, 2 * d]), ParamKind::Weight));
                }
                attn_out = Some(Linear::new(&mut p, "attn.out", 3 * d, d));
            }
            SourceKind::Features { dim } => feat = Some(Linear::new(&mut p, "feat", dim, d)),
        }
        let decoder = (0..config.layers)
            .map(|l| {
                let input = if l == 0 && config.input_feed { 2 * d } else { d };
                LstmCell::new(&mut p, &format!("dec{l}"), input, d)
            })
            .collect();
        let out_w = p.add_kind("out.w", Tensor::zeros(&[config.vocab, d]), ParamKind::Weight);
        let out_b = p.add_kind("out.b", Tensor::zeros(&[config.vocab]), ParamKind::Bias);
        let tgt_emb = Embedding::tied(&p, out_w);
        let baseline = Linear::new(&mut p, "baseline", d, 1);
        init_params(&mut p, seed);
        let layout = Layout { src_emb, enc_fwd, enc_bwd, attn_w, attn_out, feat, decoder, out_w, out_b, tgt_emb, baseline };
        Ok(Generator { config, params: p, layout })
    }

    /// Parameters of the baseline regressor.
    pub fn baseline_ids(&self) -> Vec<ParamId> {
        vec![self.layout.baseline.w, self.layout.baseline.b]
    }

    /// Every parameter except the baseline.
    pub fn policy_ids(&self) -> Vec<ParamId> {
        let b = self.baseline_ids();
        self.params.ids().filter(|id| !b.contains(id)).collect()
    }

    /// Bidirectional encoding of a token source: states `[M, 2d]` and the
    /// decoder seed `h0`.
    pub fn encode(&self, g: &mut Graph<'_, T>, tokens: &[usize]) -> Result<(Memory, Var)> {
        let (emb, fwd, bwd) = match (&self.layout.src_emb, &self.layout.enc_fwd, &self.layout.enc_bwd) {
            (Some(e), Some(f), Some(b)) => (e, f, b),
            _ => return Err(Error::Invalid("model has no text encoder".into())),
        };
        if tokens.is_empty() {
            return Err(Error::Empty("source sequence"));
        }
        let xs = tokens.iter().map(|&t| emb.lookup(g, t)).collect::<Result<Vec<_>>>()?;
        let (states, h0) = bilstm_encode(g, fwd, bwd, &xs)?;
        let states = g.stack_rows(&states);
        Ok((Memory { states }, h0))
    }

    /// `h0 = tanh(W_f f + b_f)`, zero cell states, no encoder memory.
    pub fn init_from_features(&self, g: &mut Graph<'_, T>, f: &[f64]) -> Result<DecoderState> {
        let lin = self.layout.feat.ok_or_else(|| Error::Invalid("model has no feature input".into()))?;
        check_width("feature vector", lin.input, f.len())?;
        let x = g.constant(Tensor::vector(f.iter().map(|v| T::lit(*v)).collect()));
        let z = lin.forward(g, x)?;
        let h0 = g.tanh(z);
        Ok(self.seed_state(g, h0, None))
    }

    fn seed_state(&self, g: &mut Graph<'_, T>, h0: Var, memory: Option<Memory>) -> DecoderState {
        let d = self.config.hidden;
        let layers = self
            .layout
            .decoder
            .iter()
            .map(|_| LstmState { h: h0, c: g.constant(Tensor::zeros(&[d])) })
            .collect();
        let feed = self.config.input_feed.then(|| g.constant(Tensor::zeros(&[d])));
        DecoderState { layers, feed, s: None, memory, t: 0 }
    }

    /// Initial decoder state for either source kind.
    pub fn begin(&self, g: &mut Graph<'_, T>, source: &Source) -> Result<DecoderState> {
        match source {
            Source::Tokens(t) => {
                let (memory, h0) = self.encode(g, t)?;
                Ok(self.seed_state(g, h0, Some(memory)))
            }
            Source::Features(f) => self.init_from_features(g, f),
        }
    }

    /// Attentional state `s = tanh(W_s [h; Σ a_i enc_i] + b_s)`, and the
    /// attention weights `a`.
    pub fn attention(&self, g: &mut Graph<'_, T>, h: Var, memory: &Memory) -> Result<(Var, Var)> {
        let out = self.layout.attn_out.ok_or_else(|| Error::Invalid("model has no attention".into()))?;
        check_width("attention query", self.config.hidden, g.value(h).len())?;
        let u = match self.layout.attn_w {
            Some(w) => {
                let w = g.param(w);
                g.vecmat(h, w)
            }
            None => g.concat(&[h, h]),
        };
        let scores = g.affine(memory.states, u, None);
        let a = g.softmax(scores);
        let ctx = g.vecmat(a, memory.states);
        let hc = g.concat(&[h, ctx]);
        let z = out.forward(g, hc)?;
        Ok((g.tanh(z), a))
    }

    pub fn full_head(&self, g: &mut Graph<'_, T>) -> OutputHead {
        OutputHead::full(g, self.layout.out_w, self.layout.out_b)
    }

    pub fn reduced_head(&self, g: &mut Graph<'_, T>, mask: &VocabMask) -> Result<OutputHead> {
        if mask.ids().last().is_some_and(|&l| l >= self.config.vocab) {
            return Err(Error::Invalid("mask id beyond target vocabulary".into()));
        }
        Ok(OutputHead::reduced(g, self.layout.out_w, self.layout.out_b, mask))
    }

    /// Full head without a mask, reduced head with one.
    pub fn head(&self, g: &mut Graph<'_, T>, mask: Option<&VocabMask>) -> Result<OutputHead> {
        match mask {
            Some(m) => self.reduced_head(g, m),
            None => Ok(self.full_head(g)),
        }
    }

    /// `softmax(W_p x + b_p)` over the whole vocabulary.
    pub fn output_dist_full(&self, g: &mut Graph<'_, T>, s: Var) -> Var {
        let head = self.full_head(g);
        head.distribution(g, s)
    }

    /// Softmax over the gathered rows of a reduced head.
    pub fn output_dist_reduced(&self, g: &mut Graph<'_, T>, head: &OutputHead, s: Var) -> Var {
        head.distribution(g, s)
    }

    /// One decoder step from the previous token; returns the new state and
    /// log-probabilities over the head's classes.
    pub fn step(&self, g: &mut Graph<'_, T>, state: &DecoderState, prev: usize, head: &OutputHead) -> Result<(DecoderState, Var)> {
        let e = self.layout.tgt_emb.lookup(g, prev)?;
        let mut x = match state.feed {
            Some(f) => g.concat(&[e, f]),
            None => e,
        };
        let rate = self.config.dropout;
        let last = self.layout.decoder.len() - 1;
        let mut layers = Vec::with_capacity(state.layers.len());
        for (l, cell) in self.layout.decoder.iter().enumerate() {
            let st = cell.step(g, x, state.layers[l])?;
            layers.push(st);
            x = if l < last { nn::dropout(g, st.h, rate)? } else { st.h };
        }
        let h = layers[last].h;
        let s = match &state.memory {
            Some(m) => self.attention(g, h, m)?.0,
            None => h,
        };
        let sd = nn::dropout(g, s, rate)?;
        let logp = head.log_distribution(g, sd);
        let next = DecoderState {
            layers,
            feed: state.feed.map(|_| s),
            s: Some(s),
            memory: state.memory,
            t: state.t + 1,
        };
        Ok((next, logp))
    }

    /// Teacher-forced negative log-likelihood of `target`. Fails if a gold
    /// word is outside the head.
    pub fn xent(&self, g: &mut Graph<'_, T>, source: &Source, target: &[usize], head: &OutputHead) -> Result<Var> {
        let state = self.begin(g, source)?;
        self.teacher_force(g, state, target, head)
    }

    /// [`Generator::xent`] from an already encoded source.
    pub fn teacher_force(&self, g: &mut Graph<'_, T>, mut state: DecoderState, target: &[usize], head: &OutputHead) -> Result<Var> {
        let mut prev = BOS;
        let mut picks = Vec::with_capacity(target.len());
        for &y in target {
            let local = head
                .local(y)
                .ok_or_else(|| Error::Invalid(format!("gold id {y} is not in the output vocabulary")))?;
            let (next, logp) = self.step(g, &state, prev, head)?;
            picks.push(g.pick(logp, local));
            state = next;
            prev = y;
        }
        if picks.is_empty() {
            return Err(Error::Empty("target sequence"));
        }
        let total = g.add_n(&picks);
        Ok(g.scale(total, -T::one()))
    }

    /// Runs the decoder until EOS or `max_n` tokens, sampling from each
    /// step's distribution, or taking its argmax when `rng` is `None`.
    pub fn sample<R: Rng>(
        &self,
        g: &mut Graph<'_, T>,
        source: &Source,
        head: &OutputHead,
        max_n: usize,
        rng: Option<&mut R>,
    ) -> Result<Sampled> {
        let state = self.begin(g, source)?;
        self.sample_from(g, state, head, max_n, rng)
    }

    /// [`Generator::sample`] from an already encoded source.
    pub fn sample_from<R: Rng>(
        &self,
        g: &mut Graph<'_, T>,
        mut state: DecoderState,
        head: &OutputHead,
        max_n: usize,
        mut rng: Option<&mut R>,
    ) -> Result<Sampled> {
        let mut out = Sampled { tokens: Vec::new(), logps: Vec::new(), states: Vec::new() };
        let mut prev = BOS;
        while out.tokens.len() < max_n {
            let (next, logp) = self.step(g, &state, prev, head)?;
            g.check()?;
            let values = g.value(logp).data();
            let local = match rng.as_deref_mut() {
                Some(r) => draw(values, r.gen::<f64>()),
                None => argmax(values),
            };
            let y = head.global(local);
            out.logps.push(g.pick(logp, local));
            out.states.push(next.s.expect("step sets the output state"));
            out.tokens.push(y);
            state = next;
            prev = y;
            if y == EOS {
                break;
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(GENERATOR_KIND);
        let c = &self.config;
        let (kind, width) = match c.source {
            SourceKind::Tokens { vocab } => ("tokens", vocab),
            SourceKind::Features { dim } => ("features", dim),
        };
        ck.set_meta("source", kind);
        ck.set_meta("source_width", width);
        ck.set_meta("vocab", c.vocab);
        ck.set_meta("hidden", c.hidden);
        ck.set_meta("layers", c.layers);
        ck.set_meta("attention", if c.attention == Attention::Dot { "dot" } else { "general" });
        ck.set_meta("input_feed", c.input_feed);
        ck.set_meta("dropout", c.dropout);
        ck.put_params("", &self.params);
        ck
    }

    pub fn config_from_checkpoint(ck: &Checkpoint) -> Result<GeneratorConfig> {
        ck.expect_kind(GENERATOR_KIND)?;
        let width = ck.meta_parse("source_width")?;
        let source = match ck.meta_str("source")? {
            "tokens" => SourceKind::Tokens { vocab: width },
            "features" => SourceKind::Features { dim: width },
            other => return Err(Error::Checkpoint(format!("unknown source kind {other:?}"))),
        };
        let attention = match ck.meta_str("attention")? {
            "dot" => Attention::Dot,
            "general" => Attention::General,
            other => return Err(Error::Checkpoint(format!("unknown attention {other:?}"))),
        };
        Ok(GeneratorConfig {
            source,
            vocab: ck.meta_parse("vocab")?,
            hidden: ck.meta_parse("hidden")?,
            layers: ck.meta_parse("layers")?,
            attention,
            input_feed: ck.meta_parse("input_feed")?,
            dropout: ck.meta_parse("dropout")?,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(Self::config_from_checkpoint(ck)?, 0)?;
        ck.load_params("", &mut model.params)?;
        Ok(model)
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from log-probabilities with a uniform `u` in `[0, 1)`.
fn draw<T: Scalar>(logp: &[T], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, lp) in logp.iter().enumerate() {
        let p = lp.as_f64().exp();
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}
