use crate::error::{GraftError, Result};
use crate::ids::{EntityId, RelationId};
use crate::store::KnowledgeBase;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PprConfig {
    pub restart: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for PprConfig {
    fn default() -> Self {
        Self {
            restart: 0.2,
            tolerance: 1e-6,
            max_iters: 100,
        }
    }
}

/// Row-stochastic transition structure: for each node, `(target, prob)`
/// pairs. Empty rows are sinks.
pub fn transition_rows(kb: &KnowledgeBase, weight: &dyn Fn(EntityId, RelationId) -> f64) -> Vec<Vec<(usize, f64)>> {
    (0..kb.num_entities() as u32)
        .map(|u| {
            let u = EntityId(u);
            let edges = kb.out_edges(u);
            // edges are sorted by relation, so same-type runs are contiguous
            let mut groups: Vec<(RelationId, usize, f64)> = Vec::new();
            for &(r, _) in edges {
                match groups.last_mut() {
                    Some(g) if g.0 == r => g.1 += 1,
                    _ => groups.push((r, 1, weight(u, r).max(0.0))),
                }
            }
            let total: f64 = groups.iter().map(|g| g.2).sum();
            if total <= 0.0 {
                return Vec::new();
            }
            let mut row = Vec::with_capacity(edges.len());
            let mut gi = 0;
            for &(r, o) in edges {
                while groups[gi].0 != r {
                    gi += 1;
                }
                let (_, count, w) = groups[gi];
                if w > 0.0 {
                    row.push((o.index(), w / total / count as f64));
                }
            }
            row
        })
        .collect()
}

/// Random walk with restart to the uniform seed distribution. Returns a
/// dense score vector over all entities.
pub fn personalized_pagerank(
    kb: &KnowledgeBase,
    seeds: &[EntityId],
    weight: &dyn Fn(EntityId, RelationId) -> f64,
    cfg: &PprConfig,
) -> Result<Vec<f64>> {
    if seeds.is_empty() {
        return Err(GraftError::Contract(
            "personalized pagerank needs at least one seed".into(),
        ));
    }
    if !(cfg.restart > 0.0 && cfg.restart < 1.0) {
        return Err(GraftError::config(
            "retrieval.restart_probability",
            "must lie in (0, 1)",
        ));
    }
    if let Some(s) = seeds.iter().find(|s| !kb.has_entity(**s)) {
        return Err(GraftError::Contract(format!("seed {s} is not in the knowledge base")));
    }
    let n = kb.num_entities();
    let rows = transition_rows(kb, weight);
    let mut restart = vec![0.0; n];
    let mut uniq = seeds.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    for s in &uniq {
        restart[s.index()] = 1.0 / uniq.len() as f64;
    }
    let g = cfg.restart;
    let mut p = restart.clone();
    let mut next = vec![0.0; n];
    for _ in 0..cfg.max_iters {
        let mut sink = 0.0;
        next.iter_mut().for_each(|x| *x = 0.0);
        for (u, row) in rows.iter().enumerate() {
            if row.is_empty() {
                sink += p[u];
            }
            for &(v, w) in row {
                next[v] += p[u] * w;
            }
        }
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let x = g * restart[i] + (1.0 - g) * (next[i] + sink * restart[i]);
            delta = delta.max((x - p[i]).abs());
            p[i] = x;
        }
        if delta < cfg.tolerance {
            break;
        }
    }
    Ok(p)
}

/// Seeds first, then the highest-scoring remaining entities (ties by id)
/// until `e` entities are kept.
pub fn retrieve_kb_entities(scores: &[f64], seeds: &[EntityId], e: usize) -> Vec<EntityId> {
    let mut out: Vec<EntityId> = Vec::with_capacity(e.min(scores.len()));
    for s in seeds {
        if !out.contains(s) {
            out.push(*s);
        }
    }
    let mut rest: Vec<usize> = (0..scores.len())
        .filter(|i| !out.iter().any(|s| s.index() == *i))
        .collect();
    rest.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let room = e.saturating_sub(out.len());
    out.extend(rest.into_iter().take(room).map(|i| EntityId(i as u32)));
    out
}
