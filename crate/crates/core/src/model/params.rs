use graftnet_autodiff::{ParamId, ParamStore, Real};
use rand::Rng;

use crate::error::{GraftError, Result};

use super::config::ModelConfig;

/// Parameters of one propagation layer. Document and question updates only
/// exist below the top layer, since nothing reads their top-layer output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerIds {
    pub entity_w: ParamId,
    pub entity_b: ParamId,
    pub edge_w: ParamId,
    pub edge_b: ParamId,
    pub doc: Option<DocLayerIds>,
    pub question: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DocLayerIds {
    pub position_w: ParamId,
    pub position_b: ParamId,
    pub lstm_w: ParamId,
    pub lstm_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamIds {
    pub word: ParamId,
    pub entity: ParamId,
    pub relation: ParamId,
    pub question_lstm_w: ParamId,
    pub question_lstm_b: ParamId,
    pub doc_lstm_w: ParamId,
    pub doc_lstm_b: ParamId,
    pub layers: Vec<LayerIds>,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

fn layer_name(l: usize, part: &str) -> String {
    format!("layer{l}.{part}")
}

/// Tensor names and shapes in registration order.
pub fn param_shapes(cfg: &ModelConfig, vocab: usize, entities: usize, relations: usize) -> Vec<(String, Vec<usize>)> {
    let n = cfg.dim;
    let mut out = vec![
        ("word_emb".to_string(), vec![vocab, n]),
        ("entity_emb".to_string(), vec![entities, n]),
        // one extra row for the linking relation
        ("relation_emb".to_string(), vec![relations + 1, n]),
        ("question_lstm.w".to_string(), vec![4 * n, 2 * n]),
        ("question_lstm.b".to_string(), vec![4 * n]),
        ("doc_lstm.w".to_string(), vec![4 * n, 2 * n]),
        ("doc_lstm.b".to_string(), vec![4 * n]),
    ];
    for l in 1..=cfg.layers {
        out.push((layer_name(l, "entity.w"), vec![n, 4 * n]));
        out.push((layer_name(l, "entity.b"), vec![n]));
        out.push((layer_name(l, "edge.w"), vec![n, 2 * n]));
        out.push((layer_name(l, "edge.b"), vec![n]));
        if l < cfg.layers {
            out.push((layer_name(l, "position.w"), vec![n, 2 * n]));
            out.push((layer_name(l, "position.b"), vec![n]));
            out.push((layer_name(l, "doc_lstm.w"), vec![4 * n, 2 * n]));
            out.push((layer_name(l, "doc_lstm.b"), vec![4 * n]));
            out.push((layer_name(l, "question.w"), vec![n, n]));
            out.push((layer_name(l, "question.b"), vec![n]));
        }
    }
    out.push(("out.w".to_string(), vec![1, n]));
    out.push(("out.b".to_string(), vec![1]));
    out
}

/// Registers every tensor with Glorot-uniform matrices, uniform embeddings,
/// zero biases and LSTM forget-gate bias 1.
pub fn init_params<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    vocab: usize,
    entities: usize,
    relations: usize,
    rng: &mut R,
) -> Result<ParamIds> {
    let n = cfg.dim;
    for (name, shape) in param_shapes(cfg, vocab, entities, relations) {
        if name.ends_with("_emb") {
            store.register_uniform(&name, &shape, 0.5, rng)?;
        } else if shape.len() == 2 {
            let scale = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            store.register_uniform(&name, &shape, scale, rng)?;
        } else if name.ends_with("lstm.b") {
            let mut b = vec![T::zero(); 4 * n];
            b[n..2 * n].iter_mut().for_each(|x| *x = T::one());
            store.register(&name, &shape, b)?;
        } else {
            store.register_constant(&name, &shape, 0.0)?;
        }
    }
    ParamIds::resolve(store, cfg)
}

impl ParamIds {
    /// Looks every tensor up by name, e.g. after loading a checkpoint.
    pub fn resolve<T: Real>(store: &ParamStore<T>, cfg: &ModelConfig) -> Result<Self> {
        let get = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| GraftError::Integrity(format!("checkpoint lacks tensor {name}")))
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 1..=cfg.layers {
            let g = |part: &str| get(&layer_name(l, part));
            let doc = if l < cfg.layers {
                Some(DocLayerIds {
                    position_w: g("position.w")?,
                    position_b: g("position.b")?,
                    lstm_w: g("doc_lstm.w")?,
                    lstm_b: g("doc_lstm.b")?,
                })
            } else {
                None
            };
            let question = if l < cfg.layers {
                Some((g("question.w")?, g("question.b")?))
            } else {
                None
            };
            layers.push(LayerIds {
                entity_w: g("entity.w")?,
                entity_b: g("entity.b")?,
                edge_w: g("edge.w")?,
                edge_b: g("edge.b")?,
                doc,
                question,
            });
        }
        let ids = Self {
            word: get("word_emb")?,
            entity: get("entity_emb")?,
            relation: get("relation_emb")?,
            question_lstm_w: get("question_lstm.w")?,
            question_lstm_b: get("question_lstm.b")?,
            doc_lstm_w: get("doc_lstm.w")?,
            doc_lstm_b: get("doc_lstm.b")?,
            layers,
            out_w: get("out.w")?,
            out_b: get("out.b")?,
        };
        let n = store.get(ids.word).shape[1];
        if n != cfg.dim {
            return Err(GraftError::Integrity(format!(
                "checkpoint dimension {n} differs from configured {}",
                cfg.dim
            )));
        }
        Ok(ids)
    }
}
