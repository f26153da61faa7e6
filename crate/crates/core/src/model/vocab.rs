use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{GraftError, Result};
use crate::store::Dataset;

pub const UNK: &str = "<unk>";

/// Word vocabulary for the embedding table. Row 0 is `<unk>`; the rest are
/// sorted, so the table is independent of data order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let sorted: BTreeSet<String> = words.into_iter().filter(|w| w != UNK).collect();
        let words: Vec<String> = std::iter::once(UNK.to_string()).chain(sorted).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    /// Corpus vocabulary plus every question token.
    pub fn from_dataset(ds: &Dataset) -> Self {
        let corpus = ds.corpus.vocabulary().keys().cloned();
        let questions = ds.questions.iter().flat_map(|q| q.tokens.iter().cloned());
        Self::from_words(corpus.chain(questions))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn ids(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.words.join("\n") + "\n").map_err(|e| GraftError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GraftError::io(path, e))?;
        let words: Vec<String> = text.lines().map(str::to_string).collect();
        if words.first().map(String::as_str) != Some(UNK) {
            return Err(GraftError::Parse {
                file: path.to_path_buf(),
                line: 1,
                msg: format!("vocabulary must start with {UNK}"),
            });
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(Self { words, index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unk_is_row_zero() {
        let v = Vocab::from_words(["b".to_string(), "a".to_string(), "b".to_string()]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("zzz"), 0);
    }
}
