//! Distant supervision, fact-dropout training, evaluation, threshold
//! tuning and late fusion.

use std::collections::{BTreeMap, BTreeSet};

use graftnet_autodiff::{AdamConfig, GradBuffer, Tape};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};
use crate::ids::EntityId;
use crate::model::{forward, GraphInput, Model};
use crate::retrieval::QuestionSubgraph;
use crate::store::{Corpus, QuestionRecord};

/// Entity → answer probability for one question.
pub type Scores = BTreeMap<EntityId, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub p0: f64,
    pub patience: usize,
    /// Scale on the positive term of the loss; 1 is plain BCE.
    pub positive_weight: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            epochs: 30,
            learning_rate: 1e-3,
            p0: 0.0,
            patience: 8,
            positive_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(GraftError::config("trainer.B", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(GraftError::config("trainer.p0", "must lie in [0, 1]"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(GraftError::config("trainer.learning_rate", "must be positive"));
        }
        if !(self.positive_weight > 0.0 && self.positive_weight.is_finite()) {
            return Err(GraftError::config("trainer.positive_weight", "must be positive"));
        }
        Ok(())
    }
}

pub const THRESHOLD_GRID: [f64; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95,
];

/// Scores closer than this count as tied during grid tuning, so summation
/// order cannot break a tie.
const TIE_EPSILON: f64 = 1e-9;

pub fn beta_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// A question, its subgraph and per-node labels `y_v = [v ∈ answers]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub question: QuestionRecord,
    pub graph: QuestionSubgraph,
    pub labels: Vec<f64>,
}

impl LabeledExample {
    pub fn new(question: QuestionRecord, graph: QuestionSubgraph) -> Self {
        let labels = distant_labels(&graph, &question.answers);
        Self {
            question,
            graph,
            labels,
        }
    }

    /// No seed or no entity node: never trained on, always scored wrong.
    pub fn is_unanswerable(&self) -> bool {
        self.graph.seeds.is_empty() || self.graph.entities.is_empty()
    }

    pub fn has_positive(&self) -> bool {
        self.labels.iter().any(|&y| y > 0.0)
    }
}

pub fn distant_labels(graph: &QuestionSubgraph, answers: &[EntityId]) -> Vec<f64> {
    let gold: BTreeSet<EntityId> = answers.iter().copied().collect();
    graph
        .entity_ids()
        .map(|e| if gold.contains(&e) { 1.0 } else { 0.0 })
        .collect()
}

/// Fraction of examples with at least one positive node.
pub fn label_recall(examples: &[LabeledExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    examples.iter().filter(|e| e.has_positive()).count() as f64 / examples.len() as f64
}

/// Keep-mask over KB edges: each edge dropped independently with prob `p0`.
pub fn fact_dropout<R: Rng>(num_edges: usize, p0: f64, rng: &mut R) -> Vec<bool> {
    (0..num_edges)
        .map(|_| p0 <= 0.0 || (p0 < 1.0 && !rng.gen_bool(p0)))
        .collect()
}

fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for x in [epoch as u64, index as u64] {
        h = (h ^ x).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_hits1: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Loss and gradient of one example on its own tape.
fn example_grad(
    model: &Model,
    ex: &LabeledExample,
    corpus: &Corpus,
    keep: Option<&[bool]>,
    positive_weight: f32,
) -> Result<(f64, GradBuffer<f32>)> {
    let x = GraphInput::build(&ex.graph, &ex.question, corpus, &model.vocab, keep)?;
    let mut tape = Tape::new();
    let out = forward(&mut tape, &model.store, &model.ids, &model.cfg, &x)?;
    let labels: Vec<f32> = ex.labels.iter().map(|&y| y as f32).collect();
    let loss = tape.weighted_bce(out.probs, &labels, positive_weight)?;
    let value = tape.scalar(loss) as f64;
    if !value.is_finite() {
        return Err(GraftError::Numeric(format!(
            "non-finite loss {value} on question {} ({} entities, {} facts)",
            ex.question.id,
            ex.graph.entities.len(),
            ex.graph.facts()
        )));
    }
    tape.backward(loss)?;
    let mut buf = GradBuffer::zeros_like(&model.store);
    tape.harvest(&mut buf);
    Ok((value, buf))
}

/// Mean BCE per question, averaged over a batch, one Adam step per batch.
/// Stops early on dev Hits@1 and restores the best parameters. Per-example
/// work may run in parallel; reduction happens in example order.
pub fn train(
    model: &mut Model,
    train_set: &[LabeledExample],
    dev_set: &[LabeledExample],
    corpus: &Corpus,
    cfg: &TrainerConfig,
) -> Result<History> {
    cfg.validate()?;
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let usable: Vec<usize> = (0..train_set.len())
        .filter(|&i| !train_set[i].is_unanswerable())
        .collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = History::default();
    let mut best: Option<(f64, graftnet_autodiff::ParamStore<f32>)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let mut order = usable.clone();
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, GradBuffer<f32>)>> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    let keep = (cfg.p0 > 0.0).then(|| {
                        let mut rng = example_rng(cfg.seed, epoch, i);
                        fact_dropout(ex.graph.kb_edges.len(), cfg.p0, &mut rng)
                    });
                    example_grad(model, ex, corpus, keep.as_deref(), cfg.positive_weight as f32)
                })
                .collect();
            model.store.zero_grad();
            for r in results {
                let (loss, buf) = r?;
                loss_sum += loss;
                buf.add_to_store(&mut model.store);
            }
            model.store.scale_grads(1.0 / batch.len() as f32);
            model
                .store
                .adam_step(&adam)
                .map_err(|e| GraftError::Numeric(e.to_string()))?;
        }
        let train_loss = if usable.is_empty() {
            0.0
        } else {
            loss_sum / usable.len() as f64
        };

        let (dev_hits1, dev_f1) = if dev_set.is_empty() {
            (0.0, 0.0)
        } else {
            let m = evaluate(model, dev_set, corpus, 0.5)?;
            (m.hits1, m.f1)
        };
        log::info!("epoch {epoch}: loss {train_loss:.4} dev hits@1 {dev_hits1:.4} f1 {dev_f1:.4}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_hits1,
            dev_f1,
        });

        if dev_set.is_empty() {
            continue;
        }
        if best.as_ref().is_none_or(|(b, _)| dev_hits1 > *b) {
            best = Some((dev_hits1, model.store.clone()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    Ok(history)
}

/// Scores per example; `None` for unanswerable questions.
pub fn predict_all(model: &Model, examples: &[LabeledExample], corpus: &Corpus) -> Result<Vec<Option<Scores>>> {
    examples
        .par_iter()
        .map(|ex| {
            if ex.is_unanswerable() {
                return Ok(None);
            }
            let x = GraphInput::build(&ex.graph, &ex.question, corpus, &model.vocab, None)?;
            let probs = model.predict(&x)?;
            Ok(Some(x.entity_ids.iter().copied().zip(probs).collect()))
        })
        .collect()
}

/// Highest-probability entity, ties to the smallest id.
pub fn top1(scores: &Scores) -> Option<EntityId> {
    let mut best: Option<(EntityId, f64)> = None;
    for (&e, &p) in scores {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((e, p));
        }
    }
    best.map(|b| b.0)
}

pub fn f1_score(predicted: &BTreeSet<EntityId>, gold: &BTreeSet<EntityId>) -> f64 {
    let tp = predicted.intersection(gold).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / predicted.len() as f64;
    let r = tp / gold.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hits1: f64,
    pub f1: f64,
    pub recall: f64,
    pub questions: usize,
}

pub fn metrics(preds: &[Option<Scores>], questions: &[QuestionRecord], theta: f64) -> Metrics {
    let n = questions.len();
    if n == 0 {
        return Metrics {
            hits1: 0.0,
            f1: 0.0,
            recall: 0.0,
            questions: 0,
        };
    }
    let (mut hits, mut f1, mut recall) = (0.0, 0.0, 0.0);
    for (pred, q) in preds.iter().zip(questions) {
        let gold: BTreeSet<EntityId> = q.answers.iter().copied().collect();
        let Some(scores) = pred else { continue };
        if top1(scores).is_some_and(|e| gold.contains(&e)) {
            hits += 1.0;
        }
        let chosen: BTreeSet<EntityId> = scores.iter().filter(|(_, &p)| p >= theta).map(|(&e, _)| e).collect();
        f1 += f1_score(&chosen, &gold);
        if scores.keys().any(|e| gold.contains(e)) {
            recall += 1.0;
        }
    }
    let n = n as f64;
    Metrics {
        hits1: hits / n,
        f1: f1 / n,
        recall: recall / n,
        questions: questions.len(),
    }
}

pub fn evaluate(model: &Model, examples: &[LabeledExample], corpus: &Corpus, theta: f64) -> Result<Metrics> {
    let preds = predict_all(model, examples, corpus)?;
    let qs: Vec<QuestionRecord> = examples.iter().map(|e| e.question.clone()).collect();
    Ok(metrics(&preds, &qs, theta))
}

/// Grid value with the best mean F1; ties go to the smaller threshold.
pub fn tune_threshold(preds: &[Option<Scores>], questions: &[QuestionRecord], grid: &[f64]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &t in &sorted {
        let f = metrics(preds, questions, t).f1;
        if best.is_none_or(|(_, b)| f > b + TIE_EPSILON) {
            best = Some((t, f));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| GraftError::Contract("empty threshold grid".into()))
}

/// `β p_kb + (1-β) p_text` where both models scored an entity, otherwise
/// whichever probability exists.
pub fn late_fuse(p_kb: &Scores, p_text: &Scores, beta: f64) -> Scores {
    let mut out = p_text.clone();
    for (&e, &p) in p_kb {
        out.entry(e)
            .and_modify(|t| *t = beta * p + (1.0 - beta) * *t)
            .or_insert(p);
    }
    out
}

pub fn late_fuse_all(kb: &[Option<Scores>], text: &[Option<Scores>], beta: f64) -> Vec<Option<Scores>> {
    kb.iter()
        .zip(text)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some(late_fuse(a, b, beta)),
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()),
            (None, None) => None,
        })
        .collect()
}

/// β on the grid with the best dev Hits@1; ties go to the smaller β.
pub fn tune_beta(kb: &[Option<Scores>], text: &[Option<Scores>], questions: &[QuestionRecord]) -> f64 {
    let mut best = (0.0, f64::NEG_INFINITY);
    for b in beta_grid() {
        let h = metrics(&late_fuse_all(kb, text, b), questions, 0.5).hits1;
        if h > best.1 + TIE_EPSILON {
            best = (b, h);
        }
    }
    best.0
}
