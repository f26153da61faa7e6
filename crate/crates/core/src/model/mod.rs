//! The propagation model: entity and document nodes updated jointly over
//! a question subgraph, gated by attention-weighted PageRank from the
//! seeds, with a per-entity answer classifier on top.

mod config;
mod forward;
mod graph;
mod params;
mod vocab;

pub use config::ModelConfig;
pub use forward::{forward, propagate_pagerank, relation_attention, Forward, Trace};
pub use graph::{DocInput, EdgeGroup, GraphInput};
pub use params::{init_params, param_shapes, DocLayerIds, LayerIds, ParamIds};
pub use vocab::{Vocab, UNK};

use std::path::Path;

use graftnet_autodiff::{checkpoint, ParamStore, Tape};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GraftError, Result};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "model.cfg";

/// Trained (or freshly initialized) single-precision model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore<f32>,
    pub ids: ParamIds,
}

impl Model {
    pub fn new(cfg: ModelConfig, vocab: Vocab, entities: usize, relations: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = init_params(&mut store, &cfg, vocab.len(), entities, relations, &mut rng)?;
        Ok(Self { cfg, vocab, store, ids })
    }

    /// Answer probabilities in `x.entity_ids` order.
    pub fn predict(&self, x: &GraphInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = forward(&mut tape, &self.store, &self.ids, &self.cfg, x)?;
        Ok(tape.value(out.probs).iter().map(|&p| p as f64).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| GraftError::io(dir, e))?;
        checkpoint::save(&self.store, &dir.join(CHECKPOINT_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let cfg = dir.join(CONFIG_FILE);
        std::fs::write(&cfg, self.cfg.to_kv()).map_err(|e| GraftError::io(&cfg, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = dir.join(CHECKPOINT_FILE);
        if !manifest.exists() {
            return Err(GraftError::Dependency(format!(
                "no checkpoint at {}; run `train` first",
                manifest.display()
            )));
        }
        let cfg_path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| GraftError::io(&cfg_path, e))?;
        let cfg = ModelConfig::from_kv(&text)?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let store = checkpoint::load(&manifest)?;
        let ids = ParamIds::resolve(&store, &cfg)?;
        Ok(Self { cfg, vocab, store, ids })
    }
}
