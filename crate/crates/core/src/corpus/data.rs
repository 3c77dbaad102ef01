use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// Input side of an example.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Tokens(Vec<usize>),
    Features(Vec<f64>),
}

impl Source {
    /// Token count, or zero for feature vectors.
    pub fn len(&self) -> usize {
        match self {
            Source::Tokens(t) => t.len(),
            Source::Features(_) => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Source::Tokens(t) => t.is_empty(),
            Source::Features(f) => f.is_empty(),
        }
    }

    pub fn tokens(&self) -> Option<&[usize]> {
        match self {
            Source::Tokens(t) => Some(t),
            Source::Features(_) => None,
        }
    }

    pub fn features(&self) -> Option<&[f64]> {
        match self {
            Source::Features(f) => Some(f),
            Source::Tokens(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Zero-based line number in the originating file.
    pub id: usize,
    pub source: Source,
    /// Target ids terminated by EOS.
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub examples: Vec<Example>,
    pub dropped: usize,
}

/// Sentence-aligned raw text, one sentence per entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParallelText {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl ParallelText {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Writes `<dir>/<name>.src` and `<dir>/<name>.tgt`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (ext, lines) in [("src", &self.source), ("tgt", &self.target)] {
            let path = dir.join(format!("{name}.{ext}"));
            let mut text = lines.join("\n");
            text.push('\n');
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn read(src: &Path, tgt: &Path) -> Result<Self> {
        let source = read_lines(src)?;
        let target = read_lines(tgt)?;
        if source.len() != target.len() {
            return Err(Error::Data(format!(
                "{} has {} lines but {} has {}",
                src.display(),
                source.len(),
                tgt.display(),
                target.len()
            )));
        }
        Ok(ParallelText { source, target })
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Encodes text pairs, dropping those whose EOS-terminated target is longer
/// than `max_n` or whose source is empty.
pub fn examples_from_text(text: &ParallelText, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary, max_n: usize) -> Loaded {
    let mut examples = Vec::new();
    let mut dropped = 0;
    for (id, (s, t)) in text.source.iter().zip(&text.target).enumerate() {
        let target = tgt_vocab.encode_target(t);
        let source = src_vocab.encode(s);
        if target.len() > max_n || source.is_empty() {
            dropped += 1;
            continue;
        }
        examples.push(Example { id, source: Source::Tokens(source), target });
    }
    Loaded { examples, dropped }
}

pub fn load_parallel(
    src: &Path,
    tgt: &Path,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    max_n: usize,
) -> Result<Loaded> {
    let text = ParallelText::read(src, tgt)?;
    Ok(examples_from_text(&text, src_vocab, tgt_vocab, max_n))
}

/// Reads rows of space-separated floats; all rows must share one width.
pub fn read_features(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut width = None;
    for (n, line) in text.lines().enumerate() {
        let row = line
            .split_whitespace()
            .map(|x| x.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Data(format!(
                    "{}:{}: row has {} values, expected {w}",
                    path.display(),
                    n + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        rows.push(row);
    }
    if width == Some(0) {
        return Err(Error::Data(format!("{}: empty feature rows", path.display())));
    }
    Ok(rows)
}

pub fn write_features(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:e}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Pairs feature rows with target sentences.
pub fn load_features(features: &Path, tgt: &Path, tgt_vocab: &Vocabulary, max_n: usize) -> Result<Loaded> {
    let rows = read_features(features)?;
    let targets = read_lines(tgt)?;
    if rows.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} has {} rows but {} has {} lines",
            features.display(),
            rows.len(),
            tgt.display(),
            targets.len()
        )));
    }
    let mut examples = Vec::new();
    let mut dropped = 0;
    for (id, (f, t)) in rows.into_iter().zip(&targets).enumerate() {
        let target = tgt_vocab.encode_target(t);
        if target.len() > max_n {
            dropped += 1;
            continue;
        }
        examples.push(Example { id, source: Source::Features(f), target });
    }
    Ok(Loaded { examples, dropped })
}
