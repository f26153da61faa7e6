//! End-to-end stages shared by the command-line front end and the
//! acceptance suite.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{stage_seed, RunConfig};
use crate::error::{GraftError, Result};
use crate::model::{Model, Vocab};
use crate::retrieval::{Retriever, SourceMode, WordVectorTable};
use crate::store::{load_dataset, subsample_kb, Dataset, KnowledgeBase, QuestionRecord};
use crate::synth::{self, WorldManifest, WorldSpec};
use crate::trainer::{self, History, LabeledExample, Metrics, Scores, TrainerConfig};

pub fn world_spec(cfg: &RunConfig) -> WorldSpec {
    WorldSpec {
        seed: stage_seed(cfg.seed, "world"),
        ..cfg.world.clone()
    }
}

pub fn load_world(dir: &Path) -> Result<(Dataset, WorldManifest)> {
    if !dir.join(synth::MANIFEST_FILE).exists() {
        return Err(GraftError::Dependency(format!(
            "no world in {}; run `generate` first",
            dir.display()
        )));
    }
    let manifest = synth::load_manifest(dir)?;
    let dataset = load_dataset(dir)?;
    if dataset.questions.len() != manifest.split.train + manifest.split.dev + manifest.split.test {
        return Err(GraftError::Integrity(
            "question count differs from the world manifest".into(),
        ));
    }
    Ok((dataset, manifest))
}

/// Train, dev and test question slices.
pub fn splits<'a>(ds: &'a Dataset, manifest: &WorldManifest) -> [&'a [QuestionRecord]; 3] {
    let [a, b, c] = manifest.split.ranges();
    [&ds.questions[a], &ds.questions[b], &ds.questions[c]]
}

/// The KB the models see: the full KB downsampled to `kb_fraction`.
pub fn training_kb(ds: &Dataset, cfg: &RunConfig) -> Result<KnowledgeBase> {
    if cfg.kb_fraction >= 1.0 {
        return Ok(ds.kb.clone());
    }
    subsample_kb(&ds.kb, cfg.kb_fraction, stage_seed(cfg.seed, "subsample"))
}

pub fn word_table(cfg: &RunConfig) -> Result<WordVectorTable> {
    match &cfg.word_vectors {
        Some(p) => WordVectorTable::load(p),
        None => Ok(WordVectorTable::indicator()),
    }
}

pub fn build_examples(
    ds: &Dataset,
    kb: &KnowledgeBase,
    questions: &[QuestionRecord],
    cfg: &RunConfig,
    mode: SourceMode,
) -> Result<Vec<LabeledExample>> {
    let retriever = Retriever::new(ds, kb, cfg.retrieval.clone(), mode, word_table(cfg)?)?;
    questions
        .par_iter()
        .map(|q| Ok(LabeledExample::new(q.clone(), retriever.retrieve(q)?)))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub hits1: f64,
    pub f1: f64,
    pub recall: f64,
    pub theta: f64,
    pub beta: Option<f64>,
    pub questions: usize,
}

impl Report {
    pub fn from_metrics(m: Metrics, theta: f64, beta: Option<f64>) -> Self {
        Self {
            hits1: m.hits1,
            f1: m.f1,
            recall: m.recall,
            theta,
            beta,
            questions: m.questions,
        }
    }
}

pub fn trainer_config(cfg: &RunConfig) -> TrainerConfig {
    TrainerConfig {
        seed: stage_seed(cfg.seed, "train"),
        ..cfg.trainer.clone()
    }
}

pub fn new_model(ds: &Dataset, cfg: &RunConfig) -> Result<Model> {
    Model::new(
        cfg.model.clone(),
        Vocab::from_dataset(ds),
        ds.kb.num_entities(),
        ds.kb.num_relations(),
        stage_seed(cfg.seed, "init"),
    )
}

/// Retrieval on train and dev, then training under `cfg`.
pub fn train_model(ds: &Dataset, manifest: &WorldManifest, cfg: &RunConfig) -> Result<(Model, History)> {
    cfg.validate()?;
    let kb = training_kb(ds, cfg)?;
    let [train_q, dev_q, _] = splits(ds, manifest);
    let train_set = build_examples(ds, &kb, train_q, cfg, cfg.mode)?;
    let dev_set = build_examples(ds, &kb, dev_q, cfg, cfg.mode)?;
    let mut model = new_model(ds, cfg)?;
    let history = trainer::train(&mut model, &train_set, &dev_set, &ds.corpus, &trainer_config(cfg))?;
    Ok((model, history))
}

pub struct Evaluation {
    pub theta: f64,
    pub dev_preds: Vec<Option<Scores>>,
    pub test_preds: Vec<Option<Scores>>,
    pub test: Report,
    /// Test questions with no seed in the subgraph, scored as wrong.
    pub unanswerable: usize,
}

/// Threshold tuning on dev (unless fixed) and test metrics.
pub fn evaluate_model(ds: &Dataset, manifest: &WorldManifest, cfg: &RunConfig, model: &Model) -> Result<Evaluation> {
    let kb = training_kb(ds, cfg)?;
    let [_, dev_q, test_q] = splits(ds, manifest);
    let dev_set = build_examples(ds, &kb, dev_q, cfg, cfg.mode)?;
    let test_set = build_examples(ds, &kb, test_q, cfg, cfg.mode)?;
    let dev_preds = trainer::predict_all(model, &dev_set, &ds.corpus)?;
    let theta = match cfg.theta {
        Some(t) => t,
        None if dev_q.is_empty() => 0.5,
        None => trainer::tune_threshold(&dev_preds, dev_q, &trainer::THRESHOLD_GRID)?,
    };
    let test_preds = trainer::predict_all(model, &test_set, &ds.corpus)?;
    let test = Report::from_metrics(trainer::metrics(&test_preds, test_q, theta), theta, None);
    let unanswerable = test_set.iter().filter(|e| e.is_unanswerable()).count();
    Ok(Evaluation {
        theta,
        dev_preds,
        test_preds,
        test,
        unanswerable,
    })
}

pub struct Experiment {
    pub model: Model,
    pub history: History,
    pub eval: Evaluation,
}

/// Retrieval, training, threshold tuning on dev and test evaluation for
/// one configuration.
pub fn run_experiment(ds: &Dataset, manifest: &WorldManifest, cfg: &RunConfig) -> Result<Experiment> {
    let (model, history) = train_model(ds, manifest, cfg)?;
    let eval = evaluate_model(ds, manifest, cfg, &model)?;
    Ok(Experiment { model, history, eval })
}

pub struct Fusion {
    pub beta: f64,
    pub theta: f64,
    pub test: Report,
}

/// Ensembles a KB-only and a text-only model: β tuned on dev Hits@1, then
/// θ tuned on the fused dev scores.
pub fn fuse(
    dev_q: &[QuestionRecord],
    test_q: &[QuestionRecord],
    kb: (&[Option<Scores>], &[Option<Scores>]),
    text: (&[Option<Scores>], &[Option<Scores>]),
    theta: Option<f64>,
) -> Result<Fusion> {
    let beta = trainer::tune_beta(kb.0, text.0, dev_q);
    let dev = trainer::late_fuse_all(kb.0, text.0, beta);
    let theta = match theta {
        Some(t) => t,
        None if dev_q.is_empty() => 0.5,
        None => trainer::tune_threshold(&dev, dev_q, &trainer::THRESHOLD_GRID)?,
    };
    let test = trainer::late_fuse_all(kb.1, text.1, beta);
    let m = trainer::metrics(&test, test_q, theta);
    Ok(Fusion {
        beta,
        theta,
        test: Report::from_metrics(m, theta, Some(beta)),
    })
}

/// Late fusion from scratch: trains the KB-only and text-only models under
/// `cfg` and ensembles them.
pub fn run_late_fusion(ds: &Dataset, manifest: &WorldManifest, cfg: &RunConfig) -> Result<Fusion> {
    let kb_run = run_experiment(
        ds,
        manifest,
        &RunConfig {
            mode: SourceMode::Kb,
            ..cfg.clone()
        },
    )?;
    let text_run = run_experiment(
        ds,
        manifest,
        &RunConfig {
            mode: SourceMode::Text,
            ..cfg.clone()
        },
    )?;
    let [_, dev_q, test_q] = splits(ds, manifest);
    fuse(
        dev_q,
        test_q,
        (&kb_run.eval.dev_preds, &kb_run.eval.test_preds),
        (&text_run.eval.dev_preds, &text_run.eval.test_preds),
        cfg.theta,
    )
}
