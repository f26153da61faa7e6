//! Flat `section.key = value` run configuration. Every key has a default;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use crate::error::{GraftError, Result};
use crate::model::ModelConfig;
use crate::retrieval::{RetrievalConfig, SourceMode};
use crate::synth::WorldSpec;
use crate::trainer::TrainerConfig;

/// Derives an independent seed for a named pipeline stage.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, mixed with the global seed (splitmix64)
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = global ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub p0: Vec<f64>,
    pub kb_fraction: Vec<f64>,
    pub heterogeneous: Vec<bool>,
    pub directed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub work_dir: PathBuf,
    pub world: WorldSpec,
    pub retrieval: RetrievalConfig,
    pub mode: SourceMode,
    pub kb_fraction: f64,
    pub word_vectors: Option<PathBuf>,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    /// Fixed answer threshold; tuned on dev when absent.
    pub theta: Option<f64>,
    pub ablate: AblationGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            work_dir: PathBuf::from("runs"),
            world: WorldSpec::default(),
            retrieval: RetrievalConfig::default(),
            mode: SourceMode::Kb,
            kb_fraction: 1.0,
            word_vectors: None,
            model: ModelConfig::default(),
            trainer: TrainerConfig::default(),
            theta: None,
            ablate: AblationGrid {
                p0: vec![0.0],
                kb_fraction: vec![1.0],
                heterogeneous: vec![true],
                directed: vec![true],
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| GraftError::config(key, format!("{value:?}: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(GraftError::config(key, "empty list"));
    }
    Ok(items)
}

pub const KEYS: &[&str] = &[
    "seed",
    "paths.data",
    "paths.work",
    "world.num_entities",
    "world.num_relation_types",
    "world.triples_per_relation",
    "world.text_coverage",
    "world.one_hop_questions",
    "world.two_hop_questions",
    "retrieval.E",
    "retrieval.D",
    "retrieval.articles_top_k",
    "retrieval.restart_probability",
    "retrieval.ppr_tolerance",
    "retrieval.ppr_max_iters",
    "retrieval.bm25_k1",
    "retrieval.bm25_b",
    "retrieval.title_weight",
    "retrieval.mode",
    "retrieval.kb_fraction",
    "retrieval.word_vectors",
    "model.n",
    "model.L",
    "model.lambda",
    "model.heterogeneous",
    "model.directed",
    "model.relation_attention",
    "trainer.B",
    "trainer.epochs",
    "trainer.learning_rate",
    "trainer.p0",
    "trainer.patience",
    "trainer.positive_weight",
    "eval.theta",
    "ablate.p0",
    "ablate.kb_fraction",
    "ablate.heterogeneous",
    "ablate.directed",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "paths.data" => self.data_dir = PathBuf::from(value),
            "paths.work" => self.work_dir = PathBuf::from(value),
            "world.num_entities" => self.world.num_entities = parse(key, value)?,
            "world.num_relation_types" => self.world.num_relation_types = parse(key, value)?,
            "world.triples_per_relation" => self.world.triples_per_relation = parse(key, value)?,
            "world.text_coverage" => self.world.text_coverage = parse(key, value)?,
            "world.one_hop_questions" => self.world.one_hop_questions = parse(key, value)?,
            "world.two_hop_questions" => self.world.two_hop_questions = parse(key, value)?,
            "retrieval.E" => self.retrieval.max_entities = parse(key, value)?,
            "retrieval.D" => self.retrieval.max_sentences = parse(key, value)?,
            "retrieval.articles_top_k" => self.retrieval.articles_top_k = parse(key, value)?,
            "retrieval.restart_probability" => self.retrieval.restart_probability = parse(key, value)?,
            "retrieval.ppr_tolerance" => self.retrieval.ppr_tolerance = parse(key, value)?,
            "retrieval.ppr_max_iters" => self.retrieval.ppr_max_iters = parse(key, value)?,
            "retrieval.bm25_k1" => self.retrieval.bm25_k1 = parse(key, value)?,
            "retrieval.bm25_b" => self.retrieval.bm25_b = parse(key, value)?,
            "retrieval.title_weight" => self.retrieval.title_weight = parse(key, value)?,
            "retrieval.mode" => self.mode = value.parse()?,
            "retrieval.kb_fraction" => self.kb_fraction = parse(key, value)?,
            "retrieval.word_vectors" => self.word_vectors = (!value.is_empty()).then(|| PathBuf::from(value)),
            "trainer.B" => self.trainer.batch_size = parse(key, value)?,
            "trainer.epochs" => self.trainer.epochs = parse(key, value)?,
            "trainer.learning_rate" => self.trainer.learning_rate = parse(key, value)?,
            "trainer.p0" => self.trainer.p0 = parse(key, value)?,
            "trainer.patience" => self.trainer.patience = parse(key, value)?,
            "trainer.positive_weight" => self.trainer.positive_weight = parse(key, value)?,
            "eval.theta" => {
                self.theta = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "ablate.p0" => self.ablate.p0 = parse_list(key, value)?,
            "ablate.kb_fraction" => self.ablate.kb_fraction = parse_list(key, value)?,
            "ablate.heterogeneous" => self.ablate.heterogeneous = parse_list(key, value)?,
            "ablate.directed" => self.ablate.directed = parse_list(key, value)?,
            _ => {
                if !self.model.set(key, value)? {
                    return Err(GraftError::config(key, "unknown key"));
                }
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GraftError::config(line, "expected key = value"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| GraftError::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| GraftError::config(kv, "expected key=value"))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.retrieval.validate()?;
        self.model.validate()?;
        self.trainer.validate()?;
        if !(0.0..=1.0).contains(&self.kb_fraction) {
            return Err(GraftError::config("retrieval.kb_fraction", "must lie in [0, 1]"));
        }
        if let Some(t) = self.theta {
            if !(t > 0.0 && t < 1.0) {
                return Err(GraftError::config("eval.theta", "must lie in (0, 1)"));
            }
        }
        for &f in &self.ablate.kb_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(GraftError::config("ablate.kb_fraction", "values must lie in [0, 1]"));
            }
        }
        for &p in &self.ablate.p0 {
            if !(0.0..=1.0).contains(&p) {
                return Err(GraftError::config("ablate.p0", "values must lie in [0, 1]"));
            }
        }
        if let Some(p) = &self.word_vectors {
            if !p.exists() {
                return Err(GraftError::config(
                    "retrieval.word_vectors",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        Ok(())
    }

    /// Every key with its current value, in `KEYS` order.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let blist = |v: &[bool]| v.iter().map(bool::to_string).collect::<Vec<_>>().join(",");
        let r = &self.retrieval;
        let w = &self.world;
        let t = &self.trainer;
        let mut s = format!(
            "seed = {}\npaths.data = {}\npaths.work = {}\n",
            self.seed,
            self.data_dir.display(),
            self.work_dir.display()
        );
        s += &format!(
            "world.num_entities = {}\nworld.num_relation_types = {}\nworld.triples_per_relation = {}\nworld.text_coverage = {}\nworld.one_hop_questions = {}\nworld.two_hop_questions = {}\n",
            w.num_entities, w.num_relation_types, w.triples_per_relation, w.text_coverage, w.one_hop_questions, w.two_hop_questions
        );
        s += &format!(
            "retrieval.E = {}\nretrieval.D = {}\nretrieval.articles_top_k = {}\nretrieval.restart_probability = {}\nretrieval.ppr_tolerance = {}\nretrieval.ppr_max_iters = {}\nretrieval.bm25_k1 = {}\nretrieval.bm25_b = {}\nretrieval.title_weight = {}\nretrieval.mode = {}\nretrieval.kb_fraction = {}\nretrieval.word_vectors = {}\n",
            r.max_entities, r.max_sentences, r.articles_top_k, r.restart_probability, r.ppr_tolerance, r.ppr_max_iters,
            r.bm25_k1, r.bm25_b, r.title_weight, self.mode, self.kb_fraction,
            self.word_vectors.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        );
        s += &self.model.to_kv();
        s += &format!(
            "trainer.B = {}\ntrainer.epochs = {}\ntrainer.learning_rate = {}\ntrainer.p0 = {}\ntrainer.patience = {}\ntrainer.positive_weight = {}\n",
            t.batch_size, t.epochs, t.learning_rate, t.p0, t.patience, t.positive_weight
        );
        s += &format!(
            "eval.theta = {}\n",
            self.theta.map(|x| x.to_string()).unwrap_or_else(|| "auto".into())
        );
        s += &format!(
            "ablate.p0 = {}\nablate.kb_fraction = {}\nablate.heterogeneous = {}\nablate.directed = {}\n",
            list(&self.ablate.p0),
            list(&self.ablate.kb_fraction),
            blist(&self.ablate.heterogeneous),
            blist(&self.ablate.directed)
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let mut c = RunConfig::default();
        c.apply_text(
            "model.n = 8\ntrainer.p0 = 0.2 # comment\nablate.p0 = 0,0.1\nretrieval.mode = fused\neval.theta = 0.3",
        )
        .unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        assert_eq!(d.model.dim, 8);
        assert_eq!(d.ablate.p0, vec![0.0, 0.1]);
        assert_eq!(d.mode, SourceMode::Fused);
    }

    #[test]
    fn unknown_and_bad_keys_name_the_key() {
        let mut c = RunConfig::default();
        match c.apply_text("trainer.bogus = 1") {
            Err(GraftError::Config { key, .. }) => assert_eq!(key, "trainer.bogus"),
            other => panic!("{other:?}"),
        }
        match c.apply_override("model.L=three") {
            Err(GraftError::Config { key, .. }) => assert_eq!(key, "model.L"),
            other => panic!("{other:?}"),
        }
        c.set("trainer.p0", "1.5").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_listed_key_is_settable() {
        let text = RunConfig::default().to_text();
        let written: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(written, KEYS);
    }

    #[test]
    fn stage_seeds_differ_and_repeat() {
        assert_eq!(stage_seed(3, "train"), stage_seed(3, "train"));
        assert_ne!(stage_seed(3, "train"), stage_seed(3, "generate"));
        assert_ne!(stage_seed(3, "train"), stage_seed(4, "train"));
    }
}
