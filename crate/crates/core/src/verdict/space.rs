use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use super::VerdictError;

/// Word vectors for several languages aligned into one shared space.
#[derive(Debug, Clone, Default)]
pub struct MultilingualEmbeddingSpace {
    dim: usize,
    languages: BTreeMap<String, HashMap<String, Vec<f32>>>,
}

impl MultilingualEmbeddingSpace {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            languages: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(
        &mut self,
        language: &str,
        word: &str,
        vector: Vec<f32>,
    ) -> Result<(), VerdictError> {
        if self.dim == 0 {
            self.dim = vector.len();
        }
        if vector.len() != self.dim {
            return Err(VerdictError::InvalidSpace(format!(
                "{language}:{word} has dim {}, space has {}",
                vector.len(),
                self.dim
            )));
        }
        self.languages
            .entry(language.to_owned())
            .or_default()
            .insert(word.to_owned(), vector);
        Ok(())
    }

    /// Reads a word2vec/fastText text file (`word v1 .. vd` per line, with
    /// an optional `count dim` header) into `language`. The first occurrence
    /// of a word wins.
    pub fn load_vec(&mut self, language: &str, path: &Path) -> Result<usize, VerdictError> {
        let file = std::fs::File::open(path)
            .map_err(|e| VerdictError::InvalidSpace(format!("{}: {e}", path.display())))?;
        let mut added = 0;
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line =
                line.map_err(|e| VerdictError::InvalidSpace(format!("{}: {e}", path.display())))?;
            let mut fields = line.trim_end().split(' ');
            let Some(word) = fields.next() else { continue };
            let values: Result<Vec<f32>, _> = fields.map(str::parse::<f32>).collect();
            let values = values.map_err(|e| {
                VerdictError::InvalidSpace(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            if n == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
                continue;
            }
            if values.is_empty() {
                continue;
            }
            let exists = self
                .languages
                .get(language)
                .is_some_and(|m| m.contains_key(word));
            if !exists {
                self.insert(language, word, values)?;
                added += 1;
            }
        }
        Ok(added)
    }

    pub fn covers(&self, language: &str) -> bool {
        self.languages.contains_key(language)
    }

    pub fn covered_languages(&self) -> BTreeSet<&str> {
        self.languages.keys().map(String::as_str).collect()
    }

    /// Exact key first, then the lowercased key.
    pub fn lookup(&self, language: &str, word: &str) -> Option<&[f32]> {
        let words = self.languages.get(language)?;
        words
            .get(word)
            .or_else(|| words.get(&word.to_lowercase()))
            .map(Vec::as_slice)
    }
}

pub(crate) fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
