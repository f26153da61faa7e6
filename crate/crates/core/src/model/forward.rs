use std::collections::HashMap;

use graftnet_autodiff::{seq_encode, LstmWeights, ParamId, ParamStore, Real, Tape, Var};

use crate::error::{GraftError, Result};
use crate::ids::RelationId;

use super::config::ModelConfig;
use super::graph::GraphInput;
use super::params::ParamIds;

/// Per-layer intermediate values kept for inspection.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `pr^(0..=L)`, empty when directed propagation is off.
    pub pr: Vec<Var>,
    /// Attention per edge group at each layer.
    pub alpha: Vec<Option<Var>>,
    /// Neighbor-aggregation term per entity at each layer; `None` when no
    /// message arrived.
    pub neighbor: Vec<Vec<Option<Var>>>,
    pub entity_states: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub probs: Var,
    pub trace: Trace,
}

/// Caches tape copies of embedding rows so each row enters a tape once.
struct Rows {
    id: ParamId,
    cache: HashMap<usize, Var>,
}

impl Rows {
    fn new(id: ParamId) -> Self {
        Self {
            id,
            cache: HashMap::new(),
        }
    }

    fn get<T: Real>(&mut self, tape: &mut Tape<T>, store: &ParamStore<T>, row: usize) -> Result<Var> {
        if let Some(&v) = self.cache.get(&row) {
            return Ok(v);
        }
        let v = tape.param_row(store, self.id, row)?;
        self.cache.insert(row, v);
        Ok(v)
    }
}

/// Softmax of `x_r · h_q` over the distinct out-relation types of each
/// node, one entry per edge group. Uniform over types when disabled.
pub fn relation_attention<T: Real>(
    tape: &mut Tape<T>,
    x: &GraphInput,
    h_q: Var,
    relation_rows: &HashMap<RelationId, Var>,
    enabled: bool,
) -> Result<Option<Var>> {
    if x.groups.is_empty() {
        return Ok(None);
    }
    if !enabled {
        let mut a = vec![T::zero(); x.groups.len()];
        for part in &x.partition {
            for &g in part {
                a[g] = T::lit(1.0 / part.len() as f64);
            }
        }
        return Ok(Some(tape.vector(a)?));
    }
    let rels = x.relations();
    let mut scores = Vec::with_capacity(rels.len());
    for r in &rels {
        let row = relation_rows
            .get(r)
            .copied()
            .ok_or_else(|| GraftError::Contract(format!("no relation vector for {r}")))?;
        scores.push(tape.dot(row, h_q)?);
    }
    let scores = tape.concat(&scores)?;
    let idx: Vec<usize> = x
        .groups
        .iter()
        .map(|g| rels.binary_search(&g.relation).expect("relation listed"))
        .collect();
    let per_group = tape.gather(scores, &idx)?;
    Ok(Some(tape.grouped_softmax(per_group, &x.partition)?))
}

/// `α_g / |edges in g|` for every group: each edge's share of its source's
/// attention mass.
fn edge_share<T: Real>(tape: &mut Tape<T>, x: &GraphInput, alpha: Var) -> Result<Var> {
    let inv = x.groups.iter().map(|g| T::lit(1.0 / g.targets.len() as f64)).collect();
    let inv = tape.vector(inv)?;
    Ok(tape.mul(alpha, inv)?)
}

/// `pr' = (1-λ) pr + λ Σ_edges (α_g / |g|) pr_src`.
pub fn propagate_pagerank<T: Real>(
    tape: &mut Tape<T>,
    x: &GraphInput,
    pr: Var,
    alpha: Option<Var>,
    lambda: f64,
) -> Result<Var> {
    let kept = tape.scale_const(pr, T::lit(1.0 - lambda));
    let Some(alpha) = alpha else { return Ok(kept) };
    let share = edge_share(tape, x, alpha)?;
    let src: Vec<usize> = x.groups.iter().map(|g| g.src).collect();
    let pr_src = tape.gather(pr, &src)?;
    let per_group = tape.mul(share, pr_src)?;
    let (mut edge_group, mut edge_dst) = (Vec::new(), Vec::new());
    for (gi, g) in x.groups.iter().enumerate() {
        for &t in &g.targets {
            edge_group.push(gi);
            edge_dst.push(t);
        }
    }
    let per_edge = tape.gather(per_group, &edge_group)?;
    let inflow = tape.scatter_add(per_edge, &edge_dst, x.num_entities())?;
    let inflow = tape.scale_const(inflow, T::lit(lambda));
    Ok(tape.add(kept, inflow)?)
}

/// Single-layer feed-forward network, `tanh(w · x + b)`.
fn ffn<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let z = tape.linear(x, w, Some(b))?;
    Ok(tape.tanh(z))
}

fn sum_or<T: Real>(tape: &mut Tape<T>, xs: &[Var], zero: Var) -> Result<Var> {
    match xs.len() {
        0 => Ok(zero),
        1 => Ok(xs[0]),
        _ => Ok(tape.sum(xs)?),
    }
}

/// Runs the full propagation and returns `Pr(v ∈ answers)` for every
/// entity node in `x.entity_ids` order.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ids: &ParamIds,
    cfg: &ModelConfig,
    x: &GraphInput,
) -> Result<Forward> {
    let n = cfg.dim;
    let ne = x.num_entities();
    if ne == 0 || x.seeds.is_empty() {
        return Err(GraftError::Contract("forward needs at least one seed entity".into()));
    }
    if x.question.is_empty() {
        return Err(GraftError::Contract("empty question".into()));
    }
    let zero = tape.zeros(n)?;
    let mut words = Rows::new(ids.word);
    let mut relations = Rows::new(ids.relation);
    let mut trace = Trace::default();

    // initial states
    let mut h: Vec<Var> = Vec::with_capacity(ne);
    for e in &x.entity_ids {
        h.push(tape.param_row(store, ids.entity, e.index())?);
    }
    let q_lstm = LstmWeights {
        w: tape.param(store, ids.question_lstm_w),
        b: tape.param(store, ids.question_lstm_b),
        hidden: n,
    };
    let q_tokens = x
        .question
        .iter()
        .map(|&w| words.get(tape, store, w))
        .collect::<Result<Vec<_>>>()?;
    let mut h_q = *seq_encode(tape, &q_tokens, q_lstm)?.last().expect("nonempty question");

    let mut docs: Vec<Vec<Var>> = Vec::with_capacity(x.docs.len());
    if !x.docs.is_empty() {
        let d_lstm = LstmWeights {
            w: tape.param(store, ids.doc_lstm_w),
            b: tape.param(store, ids.doc_lstm_b),
            hidden: n,
        };
        for d in &x.docs {
            let toks = d
                .words
                .iter()
                .map(|&w| words.get(tape, store, w))
                .collect::<Result<Vec<_>>>()?;
            docs.push(seq_encode(tape, &toks, d_lstm)?);
        }
    }

    let mut rel_rows = HashMap::new();
    for r in x.relations() {
        rel_rows.insert(r, relations.get(tape, store, r.index())?);
    }

    let mut pr = if cfg.directed {
        let mut p0 = vec![T::zero(); ne];
        for &s in &x.seeds {
            p0[s] = T::lit(1.0 / x.seeds.len() as f64);
        }
        let p = tape.vector(p0)?;
        trace.pr.push(p);
        Some(p)
    } else {
        None
    };
    trace.entity_states.push(h.clone());

    for layer in &ids.layers {
        let edge_w = tape.param(store, layer.edge_w);
        let edge_b = tape.param(store, layer.edge_b);
        let ent_w = tape.param(store, layer.entity_w);
        let ent_b = tape.param(store, layer.entity_b);

        let alpha = relation_attention(tape, x, h_q, &rel_rows, cfg.relation_attention)?;
        trace.alpha.push(alpha);

        // neighbor messages, scaled by attention and (optionally) pr
        let mut incoming: Vec<Vec<Var>> = vec![Vec::new(); ne];
        if let Some(alpha) = alpha {
            let share = edge_share(tape, x, alpha)?;
            let coef = match pr {
                Some(p) => {
                    let src: Vec<usize> = x.groups.iter().map(|g| g.src).collect();
                    let pr_src = tape.gather(p, &src)?;
                    tape.mul(share, pr_src)?
                }
                None => share,
            };
            for (gi, g) in x.groups.iter().enumerate() {
                // a source with structurally zero pr sends nothing
                if tape.value(coef)[gi] == T::zero() {
                    continue;
                }
                let xr = rel_rows[&g.relation];
                let inp = tape.concat(&[xr, h[g.src]])?;
                let msg = ffn(tape, inp, edge_w, edge_b)?;
                let c = tape.slice(coef, gi, 1)?;
                let scaled = tape.scale(msg, c)?;
                for &t in &g.targets {
                    incoming[t].push(scaled);
                }
            }
        }
        let mut neighbor = Vec::with_capacity(ne);
        for msgs in &incoming {
            neighbor.push(if msgs.is_empty() {
                None
            } else {
                Some(sum_or(tape, msgs, zero)?)
            });
        }

        // text evidence at mention positions
        let pooled: Vec<Var> = if cfg.heterogeneous {
            Vec::new()
        } else {
            docs.iter()
                .map(|rows| sum_or(tape, rows, zero))
                .collect::<Result<_>>()?
        };
        let mut new_h = Vec::with_capacity(ne);
        for v in 0..ne {
            let mention = if cfg.heterogeneous {
                let rows: Vec<Var> = x.mentions[v].iter().map(|&(d, p)| docs[d][p]).collect();
                sum_or(tape, &rows, zero)?
            } else {
                let mut ds: Vec<usize> = x.mentions[v].iter().map(|&(d, _)| d).collect();
                ds.dedup();
                let rows: Vec<Var> = ds.iter().map(|&d| pooled[d]).collect();
                sum_or(tape, &rows, zero)?
            };
            let inp = tape.concat(&[h[v], h_q, neighbor[v].unwrap_or(zero), mention])?;
            new_h.push(ffn(tape, inp, ent_w, ent_b)?);
        }

        // documents read layer l-1 entity states
        if let Some(dl) = layer.doc {
            if !docs.is_empty() {
                let pos_w = tape.param(store, dl.position_w);
                let pos_b = tape.param(store, dl.position_b);
                let lstm = LstmWeights {
                    w: tape.param(store, dl.lstm_w),
                    b: tape.param(store, dl.lstm_b),
                    hidden: n,
                };
                let mut normed: HashMap<usize, Var> = HashMap::new();
                let mut norm_h = |tape: &mut Tape<T>, v: usize| -> Var {
                    *normed
                        .entry(v)
                        .or_insert_with(|| tape.scale_const(h[v], T::lit(1.0 / x.outdeg[v].max(1) as f64)))
                };
                let mut next_docs = Vec::with_capacity(docs.len());
                for (d, input) in x.docs.iter().enumerate() {
                    let shared = if cfg.heterogeneous {
                        None
                    } else {
                        let ents: Vec<Var> = input.linked_entities().into_iter().map(|v| norm_h(tape, v)).collect();
                        Some(sum_or(tape, &ents, zero)?)
                    };
                    let mut rows = Vec::with_capacity(input.links.len());
                    for (p, linked) in input.links.iter().enumerate() {
                        let ent = match shared {
                            Some(s) => s,
                            None => {
                                let ents: Vec<Var> = linked.iter().map(|&v| norm_h(tape, v)).collect();
                                sum_or(tape, &ents, zero)?
                            }
                        };
                        let inp = tape.concat(&[docs[d][p], ent])?;
                        rows.push(ffn(tape, inp, pos_w, pos_b)?);
                    }
                    next_docs.push(seq_encode(tape, &rows, lstm)?);
                }
                docs = next_docs;
            }
        }

        if let Some(p) = pr {
            let next = propagate_pagerank(tape, x, p, alpha, cfg.lambda)?;
            trace.pr.push(next);
            pr = Some(next);
        }
        h = new_h;
        trace.neighbor.push(neighbor);
        trace.entity_states.push(h.clone());

        if let Some((qw, qb)) = layer.question {
            let qw = tape.param(store, qw);
            let qb = tape.param(store, qb);
            let seeds: Vec<Var> = x.seeds.iter().map(|&s| h[s]).collect();
            let s = sum_or(tape, &seeds, zero)?;
            h_q = ffn(tape, s, qw, qb)?;
        }
    }

    let out_w = tape.param(store, ids.out_w);
    let out_b = tape.param(store, ids.out_b);
    let mut logits = Vec::with_capacity(ne);
    for &hv in &h {
        logits.push(tape.linear(hv, out_w, Some(out_b))?);
    }
    let z = tape.concat(&logits)?;
    let probs = tape.sigmoid(z);
    Ok(Forward { probs, trace })
}
