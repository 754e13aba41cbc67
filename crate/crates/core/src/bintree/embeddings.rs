use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Word vectors read from a GloVe-style text file: one word per line,
/// `<word> <f1> ... <fd>`, whitespace separated. Blank lines are skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub words: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(words: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if words.len() != vectors.len() {
            return Err(Error::domain("one vector per word is required"));
        }
        let mut seen = HashSet::new();
        for w in &words {
            if !seen.insert(w) {
                return Err(Error::domain(format!("duplicate word `{w}`")));
            }
        }
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return Err(Error::domain("all vectors must have the same dimension"));
            }
        }
        Ok(EmbeddingTable { words, vectors })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, &path.display().to_string())
    }

    /// `source` names the input in error messages.
    pub fn parse_str(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: source.to_string(),
            line,
            reason,
        };
        let mut words = Vec::new();
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let vec = fields
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| err(lineno, format!("`{f}` is not a finite number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if vec.is_empty() {
                return Err(err(lineno, format!("word `{word}` has no vector")));
            }
            if let Some(first) = vectors.first() {
                if first.len() != vec.len() {
                    return Err(err(
                        lineno,
                        format!("expected {} components, found {}", first.len(), vec.len()),
                    ));
                }
            }
            if !seen.insert(word.to_string()) {
                return Err(err(lineno, format!("duplicate word `{word}`")));
            }
            words.push(word.to_string());
            vectors.push(vec);
        }
        Ok(EmbeddingTable { words, vectors })
    }
}
