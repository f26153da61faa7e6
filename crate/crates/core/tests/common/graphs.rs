use std::collections::{BTreeMap, HashSet};

use graftnet::model::{init_params, DocInput, EdgeGroup, GraphInput, ModelConfig, ParamIds};
use graftnet::{EntityId, RelationId};
use graftnet_autodiff::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 12;
pub const ENTITIES: usize = 16;
pub const RELATIONS: usize = 4;

pub fn graph(
    entity_ids: &[u32],
    edges: &[(usize, u32, usize)],
    seeds: &[usize],
    docs: Vec<DocInput>,
    question: Vec<usize>,
) -> GraphInput {
    let ne = entity_ids.len();
    let mut by_group: BTreeMap<(usize, u32), Vec<usize>> = BTreeMap::new();
    let mut outdeg = vec![0; ne];
    for &(s, r, o) in edges {
        by_group.entry((s, r)).or_default().push(o);
        outdeg[s] += 1;
    }
    let mut groups = Vec::new();
    let mut partition: Vec<Vec<usize>> = Vec::new();
    let mut last = usize::MAX;
    for ((src, r), targets) in by_group {
        if src != last {
            partition.push(Vec::new());
            last = src;
        }
        partition.last_mut().unwrap().push(groups.len());
        groups.push(EdgeGroup {
            src,
            relation: RelationId(r),
            targets,
        });
    }
    let mut mentions = vec![Vec::new(); ne];
    for (d, doc) in docs.iter().enumerate() {
        for (p, linked) in doc.links.iter().enumerate() {
            for &v in linked {
                mentions[v].push((d, p));
                outdeg[v] += 1;
            }
        }
    }
    GraphInput {
        entity_ids: entity_ids.iter().map(|&e| EntityId(e)).collect(),
        seeds: seeds.to_vec(),
        question,
        groups,
        partition,
        docs,
        mentions,
        outdeg,
    }
}

pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, with_docs: bool) -> GraphInput {
    let ne = rng.gen_range(2..=max_nodes);
    sized_graph(rng, ne, with_docs)
}

pub fn sized_graph(rng: &mut ChaCha8Rng, ne: usize, with_docs: bool) -> GraphInput {
    let mut pool: Vec<u32> = (0..ENTITIES as u32).collect();
    for i in 0..ne {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    let ids = &pool[..ne];
    let mut edges = HashSet::new();
    for _ in 0..rng.gen_range(0..=2 * ne) {
        let (s, o) = (rng.gen_range(0..ne), rng.gen_range(0..ne));
        if s != o {
            edges.insert((s, rng.gen_range(0..RELATIONS as u32), o));
        }
    }
    let mut edges: Vec<_> = edges.into_iter().collect();
    edges.sort_unstable();
    let seeds: Vec<usize> = if rng.gen_bool(0.3) && ne > 2 {
        vec![0, 1]
    } else {
        vec![0]
    };
    let mut docs = Vec::new();
    if with_docs {
        for _ in 0..rng.gen_range(1..=2) {
            let len = rng.gen_range(3..=6);
            let words = (0..len).map(|_| rng.gen_range(0..VOCAB)).collect();
            let links = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.4) {
                        vec![rng.gen_range(0..ne)]
                    } else {
                        Vec::new()
                    }
                })
                .collect();
            docs.push(DocInput { words, links });
        }
    }
    let question = (0..rng.gen_range(2..=4)).map(|_| rng.gen_range(0..VOCAB)).collect();
    graph(ids, &edges, &seeds, docs, question)
}

pub fn small_cfg(layers: usize) -> ModelConfig {
    ModelConfig {
        dim: 4,
        layers,
        ..Default::default()
    }
}

pub fn f64_store(cfg: &ModelConfig, seed: u64) -> (ParamStore<f64>, ParamIds) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = init_params(&mut store, cfg, VOCAB, ENTITIES, RELATIONS, &mut rng).unwrap();
    (store, ids)
}
