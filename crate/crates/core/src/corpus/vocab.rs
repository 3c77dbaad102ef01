use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token inventory with dense ids; the four specials occupy ids 0..4.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    min_count: u64,
}

impl Vocabulary {
    fn with_specials(min_count: u64) -> Self {
        let mut v = Vocabulary { tokens: Vec::new(), index: HashMap::new(), counts: Vec::new(), min_count };
        for t in SPECIAL_TOKENS {
            v.push(t.to_string(), 0);
        }
        v
    }

    fn push(&mut self, token: String, count: u64) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.counts.push(count);
    }

    /// Builds from whitespace-tokenized lines. Tokens are ordered by
    /// descending count, ties by first occurrence; those below `min_count`
    /// are left out and map to UNK.
    pub fn build<I, S>(lines: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, (u64, usize)> = HashMap::new();
        let mut seen = 0;
        for line in lines {
            for tok in line.as_ref().split_whitespace() {
                let e = counts.entry(tok.to_string()).or_insert_with(|| {
                    seen += 1;
                    (0, seen)
                });
                e.0 += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let mut entries: Vec<(String, u64, usize)> = counts
            .into_iter()
            .filter(|(t, (c, _))| *c >= min_count.max(1) && !SPECIAL_TOKENS.contains(&t.as_str()))
            .map(|(t, (c, first))| (t, c, first))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let mut v = Self::with_specials(min_count);
        for (t, c, _) in entries {
            v.push(t, c);
        }
        Ok(v)
    }

    pub fn from_corpus_file(path: &Path, min_count: u64) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::build(text.lines(), min_count)
    }

    /// Reads `token<TAB>count` lines; file order defines ids after specials.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v = Self::with_specials(u64::MAX);
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("{}:{}: expected token<TAB>count", path.display(), n + 1)))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("{}:{}: bad count {count:?}", path.display(), n + 1)))?;
            if v.index.contains_key(tok) {
                return Err(Error::Data(format!("{}:{}: duplicate token {tok:?}", path.display(), n + 1)));
            }
            v.min_count = v.min_count.min(count);
            v.push(tok.to_string(), count);
        }
        if v.min_count == u64::MAX {
            v.min_count = 1;
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for id in NUM_SPECIALS..self.len() {
            let _ = writeln!(out, "{}\t{}", self.tokens[id], self.counts[id]);
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Appends never-seen filler types until the vocabulary holds `size`
    /// entries. Used to emulate large output vocabularies.
    pub fn extend_with_distractors(&mut self, size: usize) {
        let count = self.min_count.max(1);
        let mut i = 0;
        while self.len() < size {
            let tok = format!("<d{i}>");
            i += 1;
            if !self.index.contains_key(&tok) {
                self.push(tok, count);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    /// Training counts indexed by id; zero for specials.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn encode(&self, line: &str) -> Vec<usize> {
        line.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Encodes a target sentence and appends EOS.
    pub fn encode_target(&self, line: &str) -> Vec<usize> {
        let mut ids = self.encode(line);
        ids.push(EOS);
        ids
    }

    /// Joins tokens up to the first EOS, skipping PAD and BOS.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.tokens.get(i).map_or(SPECIAL_TOKENS[UNK], String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
