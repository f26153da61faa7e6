//! Two-stage text retrieval: TF-IDF article ranking over unigrams and
//! bigrams, then BM25 over the sentences of the top articles.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::ids::DocId;
use crate::store::Corpus;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub title_weight: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            title_weight: 1.0,
        }
    }
}

fn features(tokens: &[String]) -> impl Iterator<Item = String> + '_ {
    let bigrams = tokens.windows(2).map(|w| format!("{} {}", w[0], w[1]));
    tokens.iter().cloned().chain(bigrams)
}

#[derive(Debug, Clone)]
pub struct Article {
    pub title: Vec<String>,
    pub docs: Vec<DocId>,
}

/// Inverted TF-IDF index over articles, i.e. sentences grouped by title.
/// Articles are numbered by first appearance of their title.
#[derive(Debug, Clone)]
pub struct ArticleIndex {
    articles: Vec<Article>,
    vocab: HashMap<String, usize>,
    idf: Vec<f64>,
    postings: Vec<Vec<(usize, f64)>>,
    norms: Vec<f64>,
}

impl ArticleIndex {
    pub fn build(corpus: &Corpus) -> Self {
        let mut by_title: HashMap<&[String], usize> = HashMap::new();
        let mut articles: Vec<Article> = Vec::new();
        for (i, d) in corpus.documents().iter().enumerate() {
            let a = *by_title.entry(d.title.as_slice()).or_insert_with(|| {
                articles.push(Article {
                    title: d.title.clone(),
                    docs: Vec::new(),
                });
                articles.len() - 1
            });
            articles[a].docs.push(DocId(i as u32));
        }

        let mut vocab: HashMap<String, usize> = HashMap::new();
        let mut counts: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(articles.len());
        for a in &articles {
            let mut tf = BTreeMap::new();
            for d in &a.docs {
                // bigrams stay within a sentence
                for f in features(&corpus.doc(*d).tokens) {
                    let next = vocab.len();
                    let id = *vocab.entry(f).or_insert(next);
                    *tf.entry(id).or_insert(0.0) += 1.0;
                }
            }
            counts.push(tf);
        }
        let mut df = vec![0usize; vocab.len()];
        for tf in &counts {
            for &f in tf.keys() {
                df[f] += 1;
            }
        }
        let n = articles.len() as f64;
        let idf: Vec<f64> = df.iter().map(|&d| (1.0 + n / d as f64).ln()).collect();
        let mut postings = vec![Vec::new(); vocab.len()];
        let mut norms = Vec::with_capacity(articles.len());
        for (a, tf) in counts.iter().enumerate() {
            let mut sq = 0.0;
            for (&f, &c) in tf {
                let w = (1.0 + c).ln() * idf[f];
                postings[f].push((a, w));
                sq += w * w;
            }
            norms.push(sq.sqrt());
        }
        Self {
            articles,
            vocab,
            idf,
            postings,
            norms,
        }
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    /// Cosine scores of every article against the question.
    pub fn scores(&self, question: &[String]) -> Vec<f64> {
        let mut q: BTreeMap<usize, f64> = BTreeMap::new();
        for f in features(question) {
            if let Some(&id) = self.vocab.get(&f) {
                *q.entry(id).or_insert(0.0) += 1.0;
            }
        }
        let mut scores = vec![0.0; self.articles.len()];
        let mut qnorm = 0.0;
        for (&f, &c) in &q {
            let w = (1.0 + c).ln() * self.idf[f];
            qnorm += w * w;
            for &(a, aw) in &self.postings[f] {
                scores[a] += w * aw;
            }
        }
        let qnorm = qnorm.sqrt();
        for (s, &n) in scores.iter_mut().zip(&self.norms) {
            if qnorm > 0.0 && n > 0.0 {
                *s /= qnorm * n;
            } else {
                *s = 0.0;
            }
        }
        scores
    }

    /// Top `k` article indices by descending score, ties by ascending index.
    pub fn rank_articles(&self, question: &[String], k: usize) -> Vec<usize> {
        if question.is_empty() {
            return Vec::new();
        }
        let scores = self.scores(question);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(k);
        order
    }
}

/// BM25 over virtual documents made of sentence tokens plus title tokens
/// counted `title_weight` times. Statistics come from the candidate set.
pub fn bm25_scores(question: &[String], candidates: &[DocId], corpus: &Corpus, params: &Bm25Params) -> Vec<f64> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let docs: Vec<(HashMap<&str, f64>, f64)> = candidates
        .iter()
        .map(|&d| {
            let doc = corpus.doc(d);
            let mut tf: HashMap<&str, f64> = HashMap::new();
            for t in &doc.tokens {
                *tf.entry(t.as_str()).or_insert(0.0) += 1.0;
            }
            for t in &doc.title {
                *tf.entry(t.as_str()).or_insert(0.0) += params.title_weight;
            }
            let len = doc.tokens.len() as f64 + params.title_weight * doc.title.len() as f64;
            (tf, len)
        })
        .collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.1).sum::<f64>() / n;
    let terms: BTreeSet<&str> = question.iter().map(String::as_str).collect();
    let mut scores = vec![0.0; docs.len()];
    for t in terms {
        let df = docs.iter().filter(|d| d.0.get(t).is_some_and(|&c| c > 0.0)).count() as f64;
        if df == 0.0 {
            continue;
        }
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        for (s, (tf, len)) in scores.iter_mut().zip(&docs) {
            let f = tf.get(t).copied().unwrap_or(0.0);
            if f > 0.0 {
                let norm = params.k1 * (1.0 - params.b + params.b * len / avg.max(f64::MIN_POSITIVE));
                *s += idf * f * (params.k1 + 1.0) / (f + norm);
            }
        }
    }
    scores
}

/// Top `d` candidates by BM25, ties by ascending document id.
pub fn rank_sentences(
    question: &[String],
    candidates: &[DocId],
    corpus: &Corpus,
    d: usize,
    params: &Bm25Params,
) -> Vec<(DocId, f64)> {
    let scores = bm25_scores(question, candidates, corpus, params);
    let mut ranked: Vec<(DocId, f64)> = candidates.iter().copied().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(d);
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Document;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn corpus(docs: &[(&str, &str)]) -> Corpus {
        Corpus::new(
            docs.iter()
                .map(|(t, s)| Document {
                    title: toks(t),
                    tokens: toks(s),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unique_term_article_ranks_first() {
        let c = corpus(&[
            ("a", "red fish"),
            ("b", "blue fish"),
            ("b", "more blue"),
            ("c", "green cat"),
        ]);
        let idx = ArticleIndex::build(&c);
        assert_eq!(idx.articles().len(), 3);
        assert_eq!(idx.rank_articles(&toks("cat"), 5)[0], 2);
        assert_eq!(idx.rank_articles(&toks("blue"), 1), vec![1]);
        assert!(idx.rank_articles(&[], 5).is_empty());
        assert_eq!(idx.rank_articles(&toks("zebra"), 5), vec![0, 1, 2]);
        assert!(idx.scores(&toks("zebra")).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn term_frequency_is_monotone() {
        // both articles contain "x" and "y"; article 0 repeats "x"
        let c = corpus(&[("a", "x x x y"), ("b", "x y y y")]);
        let idx = ArticleIndex::build(&c);
        let s = idx.scores(&toks("x"));
        assert!(s[0] > s[1], "{s:?}");
        let s = idx.scores(&toks("y"));
        assert!(s[1] > s[0], "{s:?}");
    }

    #[test]
    fn bm25_matches_hand_computation() {
        let c = corpus(&[("t", "a b"), ("t", "a c c"), ("u", "d")]);
        let cand = [DocId(0), DocId(1), DocId(2)];
        let p = Bm25Params {
            title_weight: 0.0,
            ..Default::default()
        };
        let s = bm25_scores(&toks("a c"), &cand, &c, &p);
        let avg = (2.0 + 3.0 + 1.0) / 3.0;
        let idf = |df: f64| (1.0f64 + (3.0 - df + 0.5) / (df + 0.5)).ln();
        let term = |tf: f64, len: f64| tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / avg));
        let e0 = idf(2.0) * term(1.0, 2.0);
        let e1 = idf(2.0) * term(1.0, 3.0) + idf(1.0) * term(2.0, 3.0);
        assert!((s[0] - e0).abs() < 1e-12);
        assert!((s[1] - e1).abs() < 1e-12);
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn title_field_counts_and_dominance() {
        let c = corpus(&[("alpha", "x y"), ("beta", "q r"), ("gamma", "alpha y")]);
        let cand = [DocId(0), DocId(1), DocId(2)];
        let s = bm25_scores(&toks("alpha"), &cand, &c, &Bm25Params::default());
        assert!(s[0] > 0.0);
        assert_eq!(s[1], 0.0);
        let r = rank_sentences(&toks("x y"), &cand, &c, 2, &Bm25Params::default());
        assert_eq!(r[0].0, DocId(0));
        assert_eq!(r.len(), 2);
    }
}
