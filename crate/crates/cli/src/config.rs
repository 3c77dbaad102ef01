//! Run configuration: a TOML file whose keys mirror the command-line flags.
//! Unknown keys are rejected; the resolved configuration is written to the
//! run directory so that it alone determines the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vocabrl::corpus::SyntheticSpec;
use vocabrl::generator::{Attention, GeneratorConfig};
use vocabrl::training::TrainConfig;

use crate::error::{CliError, CliResult};

/// Environment variable that may override `threads`.
pub const THREADS_ENV: &str = "VOCABRL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Full,
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Tokens,
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub runs_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    /// Single thread and wall-clock fields written as zero, so that every
    /// output file is reproducible byte for byte.
    pub deterministic: bool,
    pub precision: Precision,
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub predictor: PredictorSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "default".into(),
            runs_dir: "runs".into(),
            seed: 1,
            threads: 1,
            deterministic: false,
            precision: Precision::F32,
            data: DataSection::default(),
            synthetic: SyntheticSection::default(),
            predictor: PredictorSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            decode: DecodeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `tokens` for sentence sources, `features` for rows of floats.
    pub source: SourceFormat,
    pub train_src: PathBuf,
    pub train_tgt: PathBuf,
    pub dev_src: PathBuf,
    pub dev_tgt: PathBuf,
    pub test_src: PathBuf,
    pub test_tgt: PathBuf,
    pub min_count: u64,
    /// Longest target kept, EOS included.
    pub max_len: usize,
    /// Pads the target vocabulary with unused types up to this size; 0 keeps it.
    pub target_vocab_size: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: SourceFormat::Tokens,
            train_src: "data/train.src".into(),
            train_tgt: "data/train.tgt".into(),
            dev_src: "data/dev.src".into(),
            dev_tgt: "data/dev.tgt".into(),
            test_src: "data/test.src".into(),
            test_tgt: "data/test.tgt".into(),
            min_count: 1,
            max_len: 50,
            target_vocab_size: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub out: PathBuf,
    pub src_vocab: usize,
    pub variants: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub zipf: f64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub feature_dim: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        SyntheticSection {
            out: "data".into(),
            src_vocab: s.src_vocab,
            variants: s.variants,
            min_len: s.min_len,
            max_len: s.max_len,
            zipf: s.zipf,
            train: s.train,
            dev: s.dev,
            test: s.test,
            feature_dim: s.feature_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorSection {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub smoothing: f64,
    /// K of the dev recall that selects the kept epoch.
    pub select_k: usize,
    pub eval_ks: Vec<usize>,
}

impl Default for PredictorSection {
    fn default() -> Self {
        PredictorSection {
            hidden: 512,
            dropout: 0.4,
            epochs: 10,
            batch_size: 128,
            lr: 0.08,
            smoothing: 0.1,
            select_k: 1000,
            eval_ks: vec![20, 50, 100, 200, 500, 1000, 2000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub layers: usize,
    /// `general` or `dot`.
    pub attention: String,
    pub input_feed: bool,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { hidden: 256, layers: 1, attention: "general".into(), input_feed: true, dropout: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub head: Head,
    pub k: usize,
    pub batch_size: usize,
    pub split: usize,
    pub lambda: f64,
    pub ce_lr: f64,
    pub rl_lr: f64,
    pub momentum: f64,
    pub baseline_lr: f64,
    pub clip: f64,
    pub weight_decay: f64,
    pub ce_epochs: usize,
    pub rl_epochs: usize,
    pub evals_per_epoch: usize,
    pub rl_gold_union: bool,
    /// Pre-training epochs of a from-scratch `train-rl` run; several values
    /// give one curve each.
    pub pretrain_epochs: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            head: Head::Full,
            k: 1000,
            batch_size: t.batch_size,
            split: t.split,
            lambda: t.lambda,
            ce_lr: t.ce_lr,
            rl_lr: t.rl_lr,
            momentum: t.momentum,
            baseline_lr: t.baseline_lr,
            clip: t.clip,
            weight_decay: t.weight_decay,
            ce_epochs: t.ce_epochs,
            rl_epochs: t.rl_epochs,
            evals_per_epoch: t.evals_per_epoch,
            rl_gold_union: t.rl_gold_union,
            pretrain_epochs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    pub head: Head,
    pub k: usize,
    /// Beam width; 1 decodes greedily.
    pub beam: usize,
    /// Length-normalization exponent; 0 disables normalization.
    pub alpha: f64,
    pub max_len: usize,
    pub nbest: bool,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection { head: Head::Full, k: 1000, beam: 1, alpha: 1.0, max_len: 100, nbest: false }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return bad("name must be a plain directory name");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if self.data.max_len == 0 || self.decode.max_len == 0 {
            return bad("max_len must be positive");
        }
        if self.decode.beam == 0 {
            return bad("beam width must be at least 1");
        }
        if !(self.decode.alpha.is_finite() && self.decode.alpha >= 0.0) {
            return bad("alpha must be finite and nonnegative");
        }
        if self.train.k == 0 || self.decode.k == 0 {
            return bad("K must be positive");
        }
        if self.model.hidden == 0 || self.model.layers == 0 || self.predictor.hidden == 0 {
            return bad("model widths and layer counts must be positive");
        }
        if !(0.0..1.0).contains(&self.model.dropout) || !(0.0..1.0).contains(&self.predictor.dropout) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if self.predictor.batch_size == 0 || self.predictor.eval_ks.contains(&0) {
            return bad("predictor batch size and every K must be positive");
        }
        self.attention()?;
        self.train_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Worker threads after the environment override; 1 in deterministic mode.
    pub fn effective_threads(&self) -> usize {
        if self.deterministic {
            return 1;
        }
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .filter(|n| *n > 0)
            .unwrap_or(self.threads)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.name)
    }

    pub fn attention(&self) -> CliResult<Attention> {
        match self.model.attention.as_str() {
            "general" => Ok(Attention::General),
            "dot" => Ok(Attention::Dot),
            other => Err(CliError::Config(format!("unknown attention {other:?} (general | dot)"))),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            split: t.split,
            max_len: self.data.max_len,
            lambda: t.lambda,
            ce_lr: t.ce_lr,
            rl_lr: t.rl_lr,
            momentum: t.momentum,
            baseline_lr: t.baseline_lr,
            clip: t.clip,
            weight_decay: t.weight_decay,
            ce_epochs: t.ce_epochs,
            rl_epochs: t.rl_epochs,
            evals_per_epoch: t.evals_per_epoch,
            rl_gold_union: t.rl_gold_union,
            seed: self.seed,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let s = &self.synthetic;
        SyntheticSpec {
            src_vocab: s.src_vocab,
            variants: s.variants,
            min_len: s.min_len,
            max_len: s.max_len,
            zipf: s.zipf,
            train: s.train,
            dev: s.dev,
            test: s.test,
            feature_dim: s.feature_dim,
            seed: self.seed,
        }
    }

    /// Generator shape for a source width (vocabulary size or feature
    /// dimension) and target vocabulary size.
    pub fn generator_config(&self, source_width: usize, tgt_vocab: usize) -> CliResult<GeneratorConfig> {
        let mut c = match self.data.source {
            SourceFormat::Tokens => GeneratorConfig::translation(source_width, tgt_vocab, self.model.hidden),
            SourceFormat::Features => GeneratorConfig::captioning(source_width, tgt_vocab, self.model.hidden),
        };
        c.layers = self.model.layers;
        c.dropout = self.model.dropout;
        if c.has_attention() {
            c.attention = self.attention()?;
            c.input_feed = self.model.input_feed;
        }
        Ok(c)
    }
}
