//! `vocabrl`: vocabulary prediction, cross-entropy and REINFORCE training,
//! decoding and measurement over one run directory.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Head, Precision, RunConfig};
use error::CliResult;
#[cfg(test)]
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "vocabrl", version, about = "REINFORCE training over predicted target vocabularies")]
struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run name; outputs go to <runs-dir>/<name>.
    #[arg(long, global = true)]
    name: Option<String>,
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, with wall-clock fields written as zero.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, value_enum)]
    precision: Option<Precision>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the reverse-and-substitute toy corpus.
    MakeSynthetic {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        dev: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        src_vocab: Option<usize>,
        #[arg(long)]
        feature_dim: Option<usize>,
    },
    /// Build source and target vocabularies from the training files.
    BuildVocab {
        #[arg(long)]
        min_count: Option<u64>,
        /// Pad the target vocabulary with unused types up to this size.
        #[arg(long)]
        target_vocab_size: Option<usize>,
    },
    /// Train the vocabulary predictor, keeping the epoch with the best dev recall.
    TrainPredictor {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        select_k: Option<usize>,
    },
    /// Recall of the predictor at several K, as CSV.
    EvalPredictor {
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Evaluate on the test split instead of dev.
        #[arg(long)]
        test: bool,
    },
    /// Cross-entropy training of the generator.
    TrainXent {
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Joint REINFORCE and cross-entropy training.
    TrainRl {
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Initial checkpoint; defaults to the run's cross-entropy checkpoint.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Start from a random initialization.
        #[arg(long)]
        from_scratch: bool,
        /// Pre-train this many cross-entropy epochs from scratch first; a
        /// list gives one curve per value.
        #[arg(long, value_delimiter = ',')]
        pretrain_epochs: Option<Vec<usize>>,
    },
    /// Decode a source file, one hypothesis per line.
    Translate {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to <run>/hyp.txt.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Generator checkpoint; defaults to the run's latest.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeFlags,
    },
    /// BLEU and GLEU of a hypothesis file against references.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Defaults to <run>/evaluate.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Bootstrap resamples for a 95% BLEU interval.
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Share of output tokens per training-frequency decile.
    AnalyzePercentiles {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to <run>/percentiles.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-sentence decoding time, and optionally one RL epoch, small vs full.
    Benchmark {
        /// Sources to decode; defaults to the dev sources.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Generator for the small-head settings; defaults to --ckpt.
        #[arg(long)]
        small_ckpt: Option<PathBuf>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Also time one RL epoch with each head.
        #[arg(long)]
        rl_epoch: bool,
    },
}

#[derive(Debug, clap::Args)]
struct TrainFlags {
    #[arg(long, value_enum)]
    head: Option<Head>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sequential sub-batches per update.
    #[arg(long)]
    split: Option<usize>,
}

#[derive(Debug, clap::Args)]
struct DecodeFlags {
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    head: Option<Head>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Write every finished hypothesis as `index ||| text ||| score`.
    #[arg(long)]
    nbest: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl TrainFlags {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.train.head, self.head);
        set(&mut c.train.k, self.k);
        set(&mut c.train.batch_size, self.batch_size);
        set(&mut c.train.split, self.split);
    }
}

impl DecodeFlags {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.decode.beam, self.beam);
        set(&mut c.decode.alpha, self.alpha);
        set(&mut c.decode.k, self.k);
        set(&mut c.decode.head, self.head);
        set(&mut c.decode.max_len, self.max_len);
        c.decode.nbest |= self.nbest;
    }
}

fn resolve(cli: Cli) -> CliResult<(RunConfig, commands::Job)> {
    use commands::Job;
    let mut c = RunConfig::load(cli.config.as_deref())?;
    set(&mut c.name, cli.name);
    set(&mut c.runs_dir, cli.runs_dir);
    set(&mut c.seed, cli.seed);
    set(&mut c.threads, cli.threads);
    set(&mut c.precision, cli.precision);
    c.deterministic |= cli.deterministic;
    let job = match cli.command {
        Command::MakeSynthetic { out, train, dev, test, src_vocab, feature_dim } => {
            let s = &mut c.synthetic;
            set(&mut s.out, out);
            set(&mut s.train, train);
            set(&mut s.dev, dev);
            set(&mut s.test, test);
            set(&mut s.src_vocab, src_vocab);
            set(&mut s.feature_dim, feature_dim);
            Job::MakeSynthetic
        }
        Command::BuildVocab { min_count, target_vocab_size } => {
            set(&mut c.data.min_count, min_count);
            set(&mut c.data.target_vocab_size, target_vocab_size);
            Job::BuildVocab
        }
        Command::TrainPredictor { epochs, hidden, lr, batch_size, select_k } => {
            let p = &mut c.predictor;
            set(&mut p.epochs, epochs);
            set(&mut p.hidden, hidden);
            set(&mut p.lr, lr);
            set(&mut p.batch_size, batch_size);
            set(&mut p.select_k, select_k);
            Job::TrainPredictor
        }
        Command::EvalPredictor { ks, test } => {
            set(&mut c.predictor.eval_ks, ks);
            Job::EvalPredictor { test }
        }
        Command::TrainXent { train, epochs } => {
            train.apply(&mut c);
            set(&mut c.train.ce_epochs, epochs);
            Job::TrainXent
        }
        Command::TrainRl { train, epochs, lambda, init, from_scratch, pretrain_epochs } => {
            train.apply(&mut c);
            set(&mut c.train.rl_epochs, epochs);
            set(&mut c.train.lambda, lambda);
            set(&mut c.train.pretrain_epochs, pretrain_epochs);
            Job::TrainRl { init, from_scratch }
        }
        Command::Translate { input, output, ckpt, decode } => {
            decode.apply(&mut c);
            Job::Translate { input, output, ckpt }
        }
        Command::Evaluate { hyp, reference, out, bootstrap } => Job::Evaluate { hyp, reference, out, bootstrap },
        Command::AnalyzePercentiles { input, out } => Job::AnalyzePercentiles { input, out },
        Command::Benchmark { input, limit, ks, ckpt, small_ckpt, max_len, rl_epoch } => {
            set(&mut c.decode.max_len, max_len);
            Job::Benchmark { input, limit, ks, ckpt, small_ckpt, rl_epoch }
        }
    };
    c.validate()?;
    Ok((c, job))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = resolve(cli).and_then(|(config, job)| commands::execute(config, job));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vocabrl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
