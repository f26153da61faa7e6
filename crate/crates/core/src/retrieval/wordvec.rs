use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{GraftError, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Feature<'a> {
    Dense(usize),
    Token(&'a str),
}

/// Token vectors for relation/question similarity. Without a loaded table
/// every token is its own one-hot direction; with a table, tokens missing
/// from it fall back to their one-hot direction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn indicator() -> Self {
        Self::default()
    }

    pub fn from_vectors(vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        let dim = vectors.values().next().map_or(0, Vec::len);
        if let Some((t, _)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(GraftError::Integrity(format!(
                "word vector for {t:?} does not have dimension {dim}"
            )));
        }
        Ok(Self { dim, vectors })
    }

    /// Reads whitespace-separated `token v1 v2 ...` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GraftError::io(path, e))?;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let v = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| GraftError::Parse {
                    file: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            vectors.insert(tok.to_string(), v);
        }
        Self::from_vectors(vectors)
    }

    pub fn is_indicator(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn mean<'a>(&self, tokens: &'a [String]) -> BTreeMap<Feature<'a>, f64> {
        let mut acc = BTreeMap::new();
        let scale = 1.0 / tokens.len().max(1) as f64;
        for t in tokens {
            match self.vectors.get(t) {
                Some(v) => {
                    for (i, x) in v.iter().enumerate() {
                        *acc.entry(Feature::Dense(i)).or_insert(0.0) += x * scale;
                    }
                }
                None => *acc.entry(Feature::Token(t.as_str())).or_insert(0.0) += scale,
            }
        }
        acc
    }
}

/// Cosine between mean word vectors, clamped to `[0, 1]`; zero when either
/// side has no direction.
pub fn question_edge_weight(relation: &[String], question: &[String], table: &WordVectorTable) -> f64 {
    let a = table.mean(relation);
    let b = table.mean(question);
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_and_disjoint() {
        let t = WordVectorTable::indicator();
        let a = toks("directed by");
        assert!((question_edge_weight(&a, &a, &t) - 1.0).abs() < 1e-12);
        assert_eq!(question_edge_weight(&a, &toks("release year"), &t), 0.0);
        assert_eq!(question_edge_weight(&[], &a, &t), 0.0);
    }

    #[test]
    fn overlap_matches_hand_cosine() {
        let t = WordVectorTable::indicator();
        // relation {directed, by}; question has 8 distinct tokens, 2 shared
        let q = toks("what is the directed by of ent_3 alpha");
        let expected = 2.0 / (2f64.sqrt() * 8f64.sqrt());
        assert!((question_edge_weight(&toks("directed by"), &q, &t) - expected).abs() < 1e-12);
        // repeated token counts twice in the mean
        let expected = 3.0 / (2f64.sqrt() * 5f64.sqrt());
        assert!((question_edge_weight(&toks("a b"), &toks("a a b"), &t) - expected).abs() < 1e-12);
    }

    #[test]
    fn dense_table_clamps_negative_and_falls_back() {
        let mut v = HashMap::new();
        v.insert("up".to_string(), vec![1.0, 0.0]);
        v.insert("down".to_string(), vec![-1.0, 0.0]);
        let t = WordVectorTable::from_vectors(v).unwrap();
        assert_eq!(question_edge_weight(&toks("up"), &toks("down"), &t), 0.0);
        assert!((question_edge_weight(&toks("zzz"), &toks("zzz"), &t) - 1.0).abs() < 1e-12);
        assert!((question_edge_weight(&toks("up zzz"), &toks("up"), &t) - 0.5f64.sqrt()).abs() < 1e-12);
    }
}
