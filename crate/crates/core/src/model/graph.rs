use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{GraftError, Result};
use crate::ids::{EntityId, RelationId};
use crate::retrieval::QuestionSubgraph;
use crate::store::{Corpus, QuestionRecord};

use super::vocab::Vocab;

/// All out-edges of one source node that share a relation type. Attention
/// and messages are computed once per group.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGroup {
    pub src: usize,
    pub relation: RelationId,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocInput {
    pub words: Vec<usize>,
    /// Local entity indices linked at each position.
    pub links: Vec<Vec<usize>>,
}

impl DocInput {
    pub fn linked_entities(&self) -> BTreeSet<usize> {
        self.links.iter().flatten().copied().collect()
    }
}

/// Index-only view of one question subgraph, ready for the forward pass.
/// Entities are addressed by their position in `entity_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub entity_ids: Vec<EntityId>,
    pub seeds: Vec<usize>,
    pub question: Vec<usize>,
    pub groups: Vec<EdgeGroup>,
    /// Group indices per source node, for nodes with out-edges.
    pub partition: Vec<Vec<usize>>,
    pub docs: Vec<DocInput>,
    /// `(doc, position)` mentions per entity.
    pub mentions: Vec<Vec<(usize, usize)>>,
    /// KB out-edges plus link edges per entity.
    pub outdeg: Vec<usize>,
}

impl GraphInput {
    /// `keep` masks KB edges (fact dropout); link edges are always kept.
    pub fn build(
        g: &QuestionSubgraph,
        q: &QuestionRecord,
        corpus: &Corpus,
        vocab: &Vocab,
        keep: Option<&[bool]>,
    ) -> Result<Self> {
        let entity_ids: Vec<EntityId> = g.entity_ids().collect();
        let local: HashMap<EntityId, usize> = entity_ids.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let lookup = |e: EntityId| {
            local
                .get(&e)
                .copied()
                .ok_or_else(|| GraftError::Integrity(format!("{e} is not a node of the subgraph")))
        };
        let mut seeds = Vec::new();
        for &s in &g.seeds {
            let i = lookup(s)?;
            if !seeds.contains(&i) {
                seeds.push(i);
            }
        }
        if let Some(k) = keep {
            if k.len() != g.kb_edges.len() {
                return Err(GraftError::Contract("edge mask length differs from edge count".into()));
            }
        }

        let mut by_group: BTreeMap<(usize, RelationId), Vec<usize>> = BTreeMap::new();
        let mut outdeg = vec![0usize; entity_ids.len()];
        for (i, t) in g.kb_edges.iter().enumerate() {
            if keep.is_some_and(|k| !k[i]) {
                continue;
            }
            let (s, o) = (lookup(t.subject)?, lookup(t.object)?);
            by_group.entry((s, t.relation)).or_default().push(o);
            outdeg[s] += 1;
        }
        let mut groups = Vec::with_capacity(by_group.len());
        let mut partition: Vec<Vec<usize>> = Vec::new();
        let mut last_src = usize::MAX;
        for ((src, relation), targets) in by_group {
            if src != last_src {
                partition.push(Vec::new());
                last_src = src;
            }
            partition.last_mut().unwrap().push(groups.len());
            groups.push(EdgeGroup { src, relation, targets });
        }

        let doc_index: HashMap<_, _> = g.documents.iter().enumerate().map(|(i, d)| (d.id, i)).collect();
        let mut docs: Vec<DocInput> = g
            .documents
            .iter()
            .map(|d| {
                let doc = corpus.doc(d.id);
                DocInput {
                    words: vocab.ids(&doc.tokens),
                    links: vec![Vec::new(); doc.tokens.len()],
                }
            })
            .collect();
        let mut mentions = vec![Vec::new(); entity_ids.len()];
        for l in &g.link_edges {
            let d = *doc_index
                .get(&l.doc)
                .ok_or_else(|| GraftError::Integrity(format!("link into unretained {}", l.doc)))?;
            let v = lookup(l.entity)?;
            let p = l.position as usize;
            if p >= docs[d].links.len() {
                return Err(GraftError::Integrity(format!("link position {p} beyond {}", l.doc)));
            }
            docs[d].links[p].push(v);
            mentions[v].push((d, p));
            outdeg[v] += 1;
        }
        Ok(Self {
            entity_ids,
            seeds,
            question: vocab.ids(&q.tokens),
            groups,
            partition,
            docs,
            mentions,
            outdeg,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn num_kb_edges(&self) -> usize {
        self.groups.iter().map(|g| g.targets.len()).sum()
    }

    /// Distinct relation types on kept KB edges, ascending.
    pub fn relations(&self) -> Vec<RelationId> {
        let set: BTreeSet<RelationId> = self.groups.iter().map(|g| g.relation).collect();
        set.into_iter().collect()
    }

    /// Hop distance from the nearest seed along kept KB edges.
    pub fn seed_distances(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_entities()];
        let mut frontier: Vec<usize> = self.seeds.clone();
        for &s in &frontier {
            dist[s] = Some(0);
        }
        let mut depth = 0;
        while !frontier.is_empty() {
            depth += 1;
            let mut next = Vec::new();
            for g in self.groups.iter().filter(|g| frontier.contains(&g.src)) {
                for &t in &g.targets {
                    if dist[t].is_none() {
                        dist[t] = Some(depth);
                        next.push(t);
                    }
                }
            }
            frontier = next;
        }
        dist
    }
}
