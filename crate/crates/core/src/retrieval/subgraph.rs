use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};
use crate::ids::{DocId, EntityId, RelationId};
use crate::store::{mention_index, EntityLinkSet, KnowledgeBase, Link, MentionMap, PositionMap, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub id: EntityId,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub id: DocId,
    pub score: f64,
}

/// The retained entities, documents, KB edges and linking edges for one
/// question. Linking edges carry the extra relation id `num_relations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSubgraph {
    pub question: u32,
    pub seeds: Vec<EntityId>,
    pub entities: Vec<ScoredEntity>,
    pub documents: Vec<ScoredDoc>,
    pub kb_edges: Vec<Triple>,
    pub link_edges: Vec<Link>,
    pub linking_relation: RelationId,
}

impl QuestionSubgraph {
    pub fn empty(question: u32, linking_relation: RelationId) -> Self {
        Self {
            question,
            seeds: Vec::new(),
            entities: Vec::new(),
            documents: Vec::new(),
            kb_edges: Vec::new(),
            link_edges: Vec::new(),
            linking_relation,
        }
    }

    pub fn facts(&self) -> usize {
        self.kb_edges.len()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.entities.iter().map(|e| e.id)
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        self.entities.iter().any(|x| x.id == e)
    }

    pub fn mention_maps(&self) -> (MentionMap, PositionMap) {
        mention_index(&self.link_edges)
    }

    /// Checks every structural invariant against the stores it came from.
    pub fn validate(&self, kb: &KnowledgeBase) -> Result<()> {
        let ents: BTreeSet<EntityId> = self.entity_ids().collect();
        if ents.len() != self.entities.len() {
            return Err(GraftError::Integrity("duplicate entity node".into()));
        }
        let docs: BTreeSet<DocId> = self.documents.iter().map(|d| d.id).collect();
        if docs.len() != self.documents.len() {
            return Err(GraftError::Integrity("duplicate document node".into()));
        }
        if let Some(s) = self.seeds.iter().find(|s| !ents.contains(s)) {
            return Err(GraftError::Integrity(format!("seed {s} not retained")));
        }
        for t in &self.kb_edges {
            if !kb.contains(t) || !ents.contains(&t.subject) || !ents.contains(&t.object) {
                return Err(GraftError::Integrity(format!(
                    "edge ({}, {}, {}) outside the subgraph",
                    t.subject, t.relation, t.object
                )));
            }
        }
        for l in &self.link_edges {
            if !docs.contains(&l.doc) || !ents.contains(&l.entity) {
                return Err(GraftError::Integrity(format!(
                    "link into {} outside the subgraph",
                    l.doc
                )));
            }
        }
        if self.linking_relation.index() < kb.num_relations() {
            return Err(GraftError::Integrity(
                "linking relation collides with a KB relation".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| GraftError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GraftError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Entity set is the retained entities followed by any entity linked from a
/// retained document (ascending id). KB edges are every triple between two
/// entity nodes.
pub fn assemble_subgraph(
    kb: &KnowledgeBase,
    links: &EntityLinkSet,
    question: u32,
    seeds: &[EntityId],
    retained: &[ScoredEntity],
    docs: &[ScoredDoc],
    ppr: Option<&[f64]>,
) -> QuestionSubgraph {
    let mut entities = retained.to_vec();
    let mut present: BTreeSet<EntityId> = retained.iter().map(|e| e.id).collect();
    let mut extra = BTreeSet::new();
    let mut link_edges = Vec::new();
    for d in docs {
        for &(p, e) in links.in_doc(d.id) {
            link_edges.push(Link {
                entity: e,
                doc: d.id,
                position: p,
            });
            if !present.contains(&e) {
                extra.insert(e);
            }
        }
    }
    for e in extra {
        present.insert(e);
        let score = ppr.map_or(0.0, |p| p[e.index()]);
        entities.push(ScoredEntity { id: e, score });
    }
    let kb_edges = kb
        .triples()
        .iter()
        .filter(|t| present.contains(&t.subject) && present.contains(&t.object))
        .copied()
        .collect();
    QuestionSubgraph {
        question,
        seeds: seeds.to_vec(),
        entities,
        documents: docs.to_vec(),
        kb_edges,
        link_edges,
        linking_relation: RelationId(kb.num_relations() as u32),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Corpus, Document, Triple};

    fn world() -> (KnowledgeBase, Corpus, EntityLinkSet) {
        let kb = KnowledgeBase::new(
            (0..5).map(|i| format!("e{i}")).collect(),
            vec![vec!["a".into()]],
            vec![
                Triple::new(0, 0, 1),
                Triple::new(1, 0, 2),
                Triple::new(3, 0, 4),
                Triple::new(2, 0, 4),
            ],
        )
        .unwrap();
        let corpus = Corpus::new(vec![
            Document {
                title: vec!["e0".into()],
                tokens: vec!["e0".into(), "a".into(), "e4".into()],
            },
            Document {
                title: vec!["e3".into()],
                tokens: vec!["e3".into(), "a".into(), "e4".into()],
            },
        ])
        .unwrap();
        let l = |e, d, p| Link {
            entity: EntityId(e),
            doc: DocId(d),
            position: p,
        };
        let links = EntityLinkSet::new(vec![l(0, 0, 0), l(4, 0, 2), l(3, 1, 0), l(4, 1, 2)], &kb, &corpus).unwrap();
        (kb, corpus, links)
    }

    fn se(ids: &[u32]) -> Vec<ScoredEntity> {
        ids.iter()
            .map(|&i| ScoredEntity {
                id: EntityId(i),
                score: 0.0,
            })
            .collect()
    }

    #[test]
    fn pure_kb_subgraph() {
        let (kb, _, links) = world();
        let g = assemble_subgraph(&kb, &links, 0, &[EntityId(0)], &se(&[0, 1, 2]), &[], None);
        assert!(g.link_edges.is_empty());
        assert_eq!(g.facts(), 2);
        g.validate(&kb).unwrap();
    }

    #[test]
    fn linked_entities_join_and_counts_match_enumeration() {
        let (kb, _, links) = world();
        let docs = [ScoredDoc {
            id: DocId(1),
            score: 1.0,
        }];
        let g = assemble_subgraph(&kb, &links, 0, &[EntityId(0)], &se(&[0, 1]), &docs, None);
        let ids: Vec<u32> = g.entity_ids().map(|e| e.0).collect();
        assert_eq!(ids, vec![0, 1, 3, 4]);
        // enumerate all 5x5 pairs for edges between members
        let member = |e: u32| ids.contains(&e);
        let expected = kb
            .triples()
            .iter()
            .filter(|t| member(t.subject.0) && member(t.object.0))
            .count();
        assert_eq!(g.facts(), expected);
        assert_eq!(g.facts(), 2);
        assert_eq!(g.link_edges.len(), 2);
        assert_eq!(g.linking_relation, RelationId(1));
        g.validate(&kb).unwrap();
    }
}
