use std::collections::BTreeSet;

use graftnet::config::RunConfig;
use graftnet::model::{GraphInput, Model, ModelConfig, Vocab};
use graftnet::pipeline;
use graftnet::retrieval::SourceMode;
use graftnet::store::QuestionRecord;
use graftnet::synth::{self, World, WorldSpec};
use graftnet::trainer::{
    self, fact_dropout, label_recall, late_fuse, late_fuse_all, top1, tune_threshold, LabeledExample, Scores,
    TrainerConfig, THRESHOLD_GRID,
};
use graftnet::EntityId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn world() -> World {
    synth::generate(&WorldSpec {
        num_entities: 40,
        num_relation_types: 4,
        triples_per_relation: 30,
        text_coverage: 1.0,
        one_hop_questions: 30,
        two_hop_questions: 15,
        seed: 3,
    })
    .unwrap()
}

fn examples(w: &World, mode: SourceMode) -> Vec<LabeledExample> {
    let cfg = RunConfig {
        mode,
        ..RunConfig::default()
    };
    pipeline::build_examples(&w.dataset, &w.dataset.kb, &w.dataset.questions, &cfg, mode).unwrap()
}

fn model(w: &World, dim: usize, seed: u64) -> Model {
    let cfg = ModelConfig {
        dim,
        layers: 2,
        ..Default::default()
    };
    let ds = &w.dataset;
    Model::new(
        cfg,
        Vocab::from_dataset(ds),
        ds.kb.num_entities(),
        ds.kb.num_relations(),
        seed,
    )
    .unwrap()
}

fn bce(p: &[f64], y: &[f64]) -> f64 {
    let eps = 1e-7;
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / p.len() as f64
}

#[test]
fn a_single_example_can_be_memorized() {
    let w = world();
    let ex: Vec<_> = examples(&w, SourceMode::Fused)
        .into_iter()
        .filter(|e| e.has_positive() && e.labels.len() > 3)
        .take(1)
        .collect();
    let mut m = model(&w, 16, 1);
    let cfg = TrainerConfig {
        batch_size: 1,
        epochs: 200,
        learning_rate: 0.01,
        ..Default::default()
    };
    let h = trainer::train(&mut m, &ex, &[], &w.dataset.corpus, &cfg).unwrap();
    let last = h.epochs.last().unwrap().train_loss;
    assert!(last < 0.05, "loss after 200 steps: {last}");
    assert!(h.epochs[0].train_loss > last);
}

#[test]
fn training_is_deterministic_given_the_seed() {
    let w = world();
    let ex = examples(&w, SourceMode::Fused);
    let (train, dev) = ex.split_at(35);
    let cfg = TrainerConfig {
        epochs: 3,
        p0: 0.2,
        seed: 11,
        ..Default::default()
    };
    let run = || {
        let mut m = model(&w, 8, 2);
        let h = trainer::train(&mut m, train, dev, &w.dataset.corpus, &cfg).unwrap();
        (h, m)
    };
    let (h1, m1) = run();
    let (h2, m2) = run();
    assert_eq!(h1, h2);
    assert!(m1.store.same_values(&m2.store));
    assert!(!m1.store.same_values(&model(&w, 8, 2).store));
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let w = world();
    let ex = examples(&w, SourceMode::Kb);
    let mut m = model(&w, 8, 3);
    let before = m.clone();
    let cfg = TrainerConfig {
        epochs: 0,
        ..Default::default()
    };
    let h = trainer::train(&mut m, &ex, &ex, &w.dataset.corpus, &cfg).unwrap();
    assert!(h.epochs.is_empty());
    assert_eq!(m, before);
}

#[test]
fn untrained_loss_is_near_chance_on_balanced_labels() {
    let w = world();
    let m = model(&w, 16, 4);
    let mut total = 0.0;
    let mut count = 0;
    for ex in examples(&w, SourceMode::Fused).iter().filter(|e| !e.is_unanswerable()) {
        let x = GraphInput::build(&ex.graph, &ex.question, &w.dataset.corpus, &m.vocab, None).unwrap();
        let p = m.predict(&x).unwrap();
        let y: Vec<f64> = (0..p.len()).map(|i| (i % 2) as f64).collect();
        if p.len().is_multiple_of(2) {
            total += bce(&p, &y);
            count += 1;
        }
    }
    let mean = total / count as f64;
    let ln2 = std::f64::consts::LN_2;
    assert!((mean - ln2).abs() <= 0.1 * ln2, "{mean}");
}

#[test]
fn label_recall_matches_direct_count() {
    let w = world();
    for mode in [SourceMode::Kb, SourceMode::Text, SourceMode::Fused] {
        let ex = examples(&w, mode);
        let direct = ex
            .iter()
            .filter(|e| {
                let gold: BTreeSet<EntityId> = e.question.answers.iter().copied().collect();
                e.graph.entities.iter().any(|s| gold.contains(&s.id))
            })
            .count() as f64
            / ex.len() as f64;
        assert!((label_recall(&ex) - direct).abs() < 1e-12, "{mode:?}");
    }
}

fn random_preds(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Option<Scores>>, Vec<QuestionRecord>) {
    let mut preds = Vec::new();
    let mut qs = Vec::new();
    for i in 0..n {
        let k = rng.gen_range(1..6u32);
        let answers: Vec<EntityId> = (0..rng.gen_range(1..3u32)).map(|a| EntityId(a * 2)).collect();
        qs.push(QuestionRecord {
            id: i as u32,
            tokens: vec!["q".into()],
            seeds: vec![EntityId(99)],
            answers,
        });
        preds.push(if rng.gen_bool(0.1) {
            None
        } else {
            Some(
                (0..k)
                    .map(|e| (EntityId(e), (rng.gen_range(0..20) as f64) / 20.0))
                    .collect(),
            )
        });
    }
    (preds, qs)
}

/// Mean F1 of the set `{v : p_v ≥ θ}`, computed without the library.
fn mean_f1(preds: &[Option<Scores>], qs: &[QuestionRecord], theta: f64) -> f64 {
    let mut total = 0.0;
    for (p, q) in preds.iter().zip(qs) {
        let Some(p) = p else { continue };
        let chosen: Vec<EntityId> = p.iter().filter(|(_, &v)| v >= theta).map(|(&e, _)| e).collect();
        let tp = chosen.iter().filter(|e| q.answers.contains(e)).count() as f64;
        if tp > 0.0 {
            let (pr, rc) = (tp / chosen.len() as f64, tp / q.answers.len() as f64);
            total += 2.0 * pr * rc / (pr + rc);
        }
    }
    total / qs.len() as f64
}

#[test]
fn threshold_tuning_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let (preds, qs) = random_preds(&mut rng, 20);
        let mut best = (0.0, f64::NEG_INFINITY);
        for &t in &THRESHOLD_GRID {
            let f = mean_f1(&preds, &qs, t);
            if f > best.1 + 1e-9 {
                best = (t, f);
            }
        }
        assert_eq!(tune_threshold(&preds, &qs, &THRESHOLD_GRID).unwrap(), best.0);
    }
}

#[test]
fn full_kb_weight_reproduces_kb_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let kb: Scores = (0..6).map(|e| (EntityId(e), rng.gen::<f64>())).collect();
        let text: Scores = (0..6).map(|e| (EntityId(e), rng.gen::<f64>())).collect();
        assert_eq!(top1(&late_fuse(&kb, &text, 1.0)), top1(&kb));
        assert_eq!(top1(&late_fuse(&kb, &text, 0.0)), top1(&text));
    }
    let kb = vec![Some(Scores::from([(EntityId(1), 0.9)])), None];
    let text = vec![None, Some(Scores::from([(EntityId(2), 0.4)]))];
    let fused = late_fuse_all(&kb, &text, 0.3);
    assert_eq!(fused[0], kb[0]);
    assert_eq!(fused[1], text[1]);
}

#[test]
fn dropout_keeps_the_expected_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let kept = fact_dropout(10_000, 0.4, &mut rng).iter().filter(|&&k| k).count() as f64 / 1e4;
    assert!((kept - 0.6).abs() <= 0.02, "{kept}");
}

proptest! {
    #[test]
    fn dropout_mask_has_one_flag_per_edge(n in 0usize..200, p0 in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = fact_dropout(n, p0, &mut rng);
        prop_assert_eq!(mask.len(), n);
        if p0 == 0.0 {
            prop_assert!(mask.iter().all(|&k| k));
        }
    }

    #[test]
    fn tuned_threshold_is_on_the_grid_and_optimal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, qs) = random_preds(&mut rng, 10);
        let t = tune_threshold(&preds, &qs, &THRESHOLD_GRID).unwrap();
        prop_assert!(THRESHOLD_GRID.contains(&t));
        let f = mean_f1(&preds, &qs, t);
        for &g in &THRESHOLD_GRID {
            prop_assert!(mean_f1(&preds, &qs, g) <= f + 1e-9);
        }
    }
}
