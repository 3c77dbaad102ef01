use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use vocabrl::checkpoint::Checkpoint;
use vocabrl::corpus::{load_features, load_parallel, read_features, Example, Source, Vocabulary};

use crate::config::{RunConfig, SourceFormat};
use crate::error::{io_error, CliError, CliResult};

pub const SRC_VOCAB: &str = "vocab.src";
pub const TGT_VOCAB: &str = "vocab.tgt";
pub const PREDICTOR_CKPT: &str = "checkpoints/predictor.ckpt";
pub const XENT_CKPT: &str = "checkpoints/xent.ckpt";
pub const RL_CKPT: &str = "checkpoints/rl.ckpt";

/// One command's view of `runs/<name>/`: the resolved configuration, the
/// directory layout and a log file under `logs/`.
pub struct Run {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    log: File,
}

impl Run {
    pub fn open(cfg: RunConfig, command: &str) -> CliResult<Self> {
        let dir = cfg.run_dir();
        for sub in ["checkpoints", "logs"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| io_error(&p, e))?;
        }
        write_file(&dir.join("config.resolved"), &cfg.to_toml())?;
        let log_path = dir.join("logs").join(format!("{command}.log"));
        let log = File::create(&log_path).map_err(|e| io_error(&log_path, e))?;
        let mut run = Run { cfg, dir, log };
        run.log(&format!("{command} in {}", run.dir.display()));
        Ok(run)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Echoes to stderr and appends to the command log.
    pub fn log(&mut self, line: &str) {
        eprintln!("{line}");
        let _ = writeln!(self.log, "{line}");
    }

    /// Wall-clock value as written to output files.
    pub fn clock(&self, seconds: f64) -> f64 {
        if self.cfg.deterministic {
            0.0
        } else {
            seconds
        }
    }

    pub fn write(&mut self, path: &Path, text: &str) -> CliResult<()> {
        write_file(path, text)?;
        self.log(&format!("wrote {}", path.display()));
        Ok(())
    }

    pub fn vocabs(&self) -> CliResult<Vocabs> {
        let tgt_path = self.path(TGT_VOCAB);
        if !tgt_path.exists() {
            return Err(CliError::Data(format!("{} is missing; run build-vocab first", tgt_path.display())));
        }
        let tgt = Vocabulary::load(&tgt_path)?;
        let src = match self.cfg.data.source {
            SourceFormat::Tokens => Some(Vocabulary::load(&self.path(SRC_VOCAB))?),
            SourceFormat::Features => None,
        };
        Ok(Vocabs { src, tgt })
    }

    /// Encoded pairs of one split; over-long targets and empty sources are
    /// dropped and counted in the log.
    pub fn load_split(&mut self, vocabs: &Vocabs, src: &Path, tgt: &Path) -> CliResult<Vec<Example>> {
        let max_len = self.cfg.data.max_len;
        let loaded = match &vocabs.src {
            Some(sv) => load_parallel(src, tgt, sv, &vocabs.tgt, max_len)?,
            None => load_features(src, tgt, &vocabs.tgt, max_len)?,
        };
        self.log(&format!("{}: {} pairs, {} dropped", src.display(), loaded.examples.len(), loaded.dropped));
        if loaded.examples.is_empty() {
            return Err(CliError::Data(format!("{} has no usable pairs", src.display())));
        }
        Ok(loaded.examples)
    }

    pub fn train_dev(&mut self, vocabs: &Vocabs) -> CliResult<(Vec<Example>, Vec<Example>)> {
        let d = self.cfg.data.clone();
        let train = self.load_split(vocabs, &d.train_src, &d.train_tgt)?;
        let dev = self.load_split(vocabs, &d.dev_src, &d.dev_tgt)?;
        Ok((train, dev))
    }

    /// Source sentences or feature rows of an unpaired input file. Empty
    /// token lines stay in place as empty sources.
    pub fn read_sources(&self, vocabs: &Vocabs, path: &Path) -> CliResult<Vec<Source>> {
        match &vocabs.src {
            Some(sv) => {
                let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
                Ok(text.lines().map(|l| Source::Tokens(sv.encode(l))).collect())
            }
            None => Ok(read_features(path)?.into_iter().map(Source::Features).collect()),
        }
    }

    pub fn checkpoint(&self, path: &Path) -> CliResult<Checkpoint> {
        if !path.exists() {
            return Err(CliError::Data(format!("checkpoint {} not found", path.display())));
        }
        Ok(Checkpoint::load(path)?)
    }

    /// The explicit checkpoint, else the run's RL checkpoint, else its
    /// cross-entropy one.
    pub fn generator_path(&self, explicit: Option<&Path>) -> CliResult<PathBuf> {
        if let Some(p) = explicit {
            return Ok(p.to_path_buf());
        }
        [RL_CKPT, XENT_CKPT]
            .iter()
            .map(|r| self.path(r))
            .find(|p| p.exists())
            .ok_or_else(|| CliError::Data(format!("no generator checkpoint in {}", self.dir.join("checkpoints").display())))
    }
}

pub struct Vocabs {
    pub src: Option<Vocabulary>,
    pub tgt: Vocabulary,
}

impl Vocabs {
    /// Encoder input width: source vocabulary size or feature dimension.
    pub fn source_width(&self, examples: &[Example]) -> CliResult<usize> {
        match &self.src {
            Some(v) => Ok(v.len()),
            None => examples
                .first()
                .and_then(|e| e.source.features())
                .map(<[f64]>::len)
                .ok_or_else(|| CliError::Data("no feature rows".into())),
        }
    }
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}
