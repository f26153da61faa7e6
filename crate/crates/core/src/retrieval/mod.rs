//! Question subgraph retrieval: PPR over the KB around the seeds, TF-IDF
//! then BM25 over the corpus, and assembly of the joint graph.

mod ppr;
mod subgraph;
mod text;
mod wordvec;

pub use ppr::{personalized_pagerank, retrieve_kb_entities, transition_rows, PprConfig};
pub use subgraph::{assemble_subgraph, QuestionSubgraph, ScoredDoc, ScoredEntity};
pub use text::{bm25_scores, rank_sentences, Article, ArticleIndex, Bm25Params};
pub use wordvec::{question_edge_weight, WordVectorTable};

use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};
use crate::ids::{EntityId, RelationId};
use crate::store::{Dataset, KnowledgeBase, QuestionRecord};

/// Which evidence goes into a subgraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    /// KB facts only.
    Kb,
    /// Seeds plus retrieved sentences, no KB facts.
    Text,
    /// Both.
    Fused,
}

impl std::str::FromStr for SourceMode {
    type Err = GraftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kb" => Ok(Self::Kb),
            "text" => Ok(Self::Text),
            "fused" | "ef" => Ok(Self::Fused),
            _ => Err(GraftError::config("retrieval.mode", format!("unknown mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for SourceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Kb => "kb",
            Self::Text => "text",
            Self::Fused => "fused",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub max_entities: usize,
    pub max_sentences: usize,
    pub articles_top_k: usize,
    pub restart_probability: f64,
    pub ppr_tolerance: f64,
    pub ppr_max_iters: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub title_weight: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            max_entities: 50,
            max_sentences: 50,
            articles_top_k: 5,
            restart_probability: 0.2,
            ppr_tolerance: 1e-6,
            ppr_max_iters: 100,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            title_weight: 1.0,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_entities == 0 {
            return Err(GraftError::config("retrieval.E", "must be positive"));
        }
        if self.max_sentences == 0 {
            return Err(GraftError::config("retrieval.D", "must be positive"));
        }
        if !(self.restart_probability > 0.0 && self.restart_probability < 1.0) {
            return Err(GraftError::config(
                "retrieval.restart_probability",
                "must lie in (0, 1)",
            ));
        }
        if !(self.ppr_tolerance > 0.0) {
            return Err(GraftError::config("retrieval.ppr_tolerance", "must be positive"));
        }
        Ok(())
    }

    pub fn ppr(&self) -> PprConfig {
        PprConfig {
            restart: self.restart_probability,
            tolerance: self.ppr_tolerance,
            max_iters: self.ppr_max_iters,
        }
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params {
            k1: self.bm25_k1,
            b: self.bm25_b,
            title_weight: self.title_weight,
        }
    }
}

/// Builds subgraphs for questions against one (possibly downsampled) KB and
/// the corpus. Immutable once built.
pub struct Retriever<'a> {
    data: &'a Dataset,
    kb: &'a KnowledgeBase,
    cfg: RetrievalConfig,
    mode: SourceMode,
    table: WordVectorTable,
    index: Option<ArticleIndex>,
}

impl<'a> Retriever<'a> {
    pub fn new(
        data: &'a Dataset,
        kb: &'a KnowledgeBase,
        cfg: RetrievalConfig,
        mode: SourceMode,
        table: WordVectorTable,
    ) -> Result<Self> {
        cfg.validate()?;
        let index = (mode != SourceMode::Kb).then(|| ArticleIndex::build(&data.corpus));
        Ok(Self {
            data,
            kb,
            cfg,
            mode,
            table,
            index,
        })
    }

    pub fn mode(&self) -> SourceMode {
        self.mode
    }

    /// Question-conditioned weight of every relation type.
    pub fn relation_weights(&self, question: &[String]) -> Vec<f64> {
        self.kb
            .relation_surfaces()
            .iter()
            .map(|s| question_edge_weight(s, question, &self.table))
            .collect()
    }

    pub fn retrieve(&self, q: &QuestionRecord) -> Result<QuestionSubgraph> {
        let linking = RelationId(self.kb.num_relations() as u32);
        if q.seeds.is_empty() {
            return Ok(QuestionSubgraph::empty(q.id, linking));
        }
        let (retained, ppr) = match self.mode {
            SourceMode::Text => {
                let mut seeds = q.seeds.clone();
                seeds.dedup();
                (seeds.iter().map(|&id| ScoredEntity { id, score: 0.0 }).collect(), None)
            }
            _ => {
                let w = self.relation_weights(&q.tokens);
                let weight = |_: EntityId, r: RelationId| w[r.index()];
                let scores = personalized_pagerank(self.kb, &q.seeds, &weight, &self.cfg.ppr())?;
                let kept = retrieve_kb_entities(&scores, &q.seeds, self.cfg.max_entities);
                let kept = kept
                    .into_iter()
                    .map(|id| ScoredEntity {
                        id,
                        score: scores[id.index()],
                    })
                    .collect::<Vec<_>>();
                (kept, Some(scores))
            }
        };
        let docs = match &self.index {
            Some(index) => {
                let articles = index.rank_articles(&q.tokens, self.cfg.articles_top_k);
                let mut candidates: Vec<_> = articles
                    .iter()
                    .flat_map(|&a| index.articles()[a].docs.iter().copied())
                    .collect();
                candidates.sort_unstable();
                rank_sentences(
                    &q.tokens,
                    &candidates,
                    &self.data.corpus,
                    self.cfg.max_sentences,
                    &self.cfg.bm25(),
                )
                .into_iter()
                .map(|(id, score)| ScoredDoc { id, score })
                .collect()
            }
            None => Vec::new(),
        };
        let mut g = assemble_subgraph(
            self.kb,
            &self.data.links,
            q.id,
            &q.seeds,
            &retained,
            &docs,
            ppr.as_deref(),
        );
        if self.mode == SourceMode::Text {
            g.kb_edges.clear();
        }
        Ok(g)
    }
}

/// Fraction of questions whose subgraph holds at least one gold answer.
pub fn answer_recall(questions: &[QuestionRecord], graphs: &[QuestionSubgraph]) -> f64 {
    if questions.is_empty() {
        return 0.0;
    }
    let hit = questions
        .iter()
        .zip(graphs)
        .filter(|(q, g)| q.answers.iter().any(|a| g.contains_entity(*a)))
        .count();
    hit as f64 / questions.len() as f64
}
