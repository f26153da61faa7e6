//! Toy worlds: random typed triples, one templated sentence per covered
//! triple, and 1-hop / 2-hop questions whose answers come from a
//! relation-path oracle over the full triple set.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};
use crate::ids::{DocId, EntityId, RelationId};
use crate::store::{Corpus, Dataset, Document, EntityLinkSet, KnowledgeBase, Link, QuestionRecord, Triple};

const GREEK: [&str; 24] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu", "nu", "xi",
    "omicron", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega",
];

const RELATION_SURFACES: [&str; 8] = [
    "directed by",
    "written by",
    "starring actor",
    "release year",
    "spoken language",
    "film genre",
    "tagged topic",
    "rated score",
];

pub const MANIFEST_FILE: &str = "world.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub num_entities: usize,
    pub num_relation_types: usize,
    pub triples_per_relation: usize,
    pub text_coverage: f64,
    pub one_hop_questions: usize,
    pub two_hop_questions: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            num_entities: 500,
            num_relation_types: 8,
            triples_per_relation: 375,
            text_coverage: 1.0,
            one_hop_questions: 1400,
            two_hop_questions: 600,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_entities", self.num_entities),
            ("num_relation_types", self.num_relation_types),
            ("triples_per_relation", self.triples_per_relation),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(GraftError::config(format!("world.{key}"), "must be positive"));
            }
        }
        if self.one_hop_questions + self.two_hop_questions == 0 {
            return Err(GraftError::config("world.one_hop_questions", "no questions requested"));
        }
        if !(0.0..=1.0).contains(&self.text_coverage) {
            return Err(GraftError::config("world.text_coverage", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn entity_name(i: usize) -> String {
    format!("ent_{i} {}", GREEK[i % GREEK.len()])
}

pub fn relation_surface(r: usize) -> Vec<String> {
    match RELATION_SURFACES.get(r) {
        Some(s) => s.split(' ').map(str::to_string).collect(),
        None => vec![format!("rel_{r}"), "of".to_string()],
    }
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// A relation path of length 1 or 2 plus its surface pattern. The pattern
/// holds exactly one `{seed}` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub path: Vec<RelationId>,
    pub pattern: String,
}

impl QuestionTemplate {
    pub fn new(path: Vec<RelationId>, kb: &KnowledgeBase) -> Self {
        let surf = |r: RelationId| kb.relation_surface(r).join(" ");
        let pattern = match path.as_slice() {
            [r] => format!("what is the {} of {{seed}}", surf(*r)),
            [r1, r2] => format!("what is the {} of the {} of {{seed}}", surf(*r2), surf(*r1)),
            _ => String::new(),
        };
        Self { path, pattern }
    }

    pub fn instantiate(&self, seed_name: &str) -> Vec<String> {
        tokens(&self.pattern.replace("{seed}", seed_name))
    }
}

/// One template per relation and one per ordered relation pair.
pub fn default_templates(kb: &KnowledgeBase) -> (Vec<QuestionTemplate>, Vec<QuestionTemplate>) {
    let rels: Vec<RelationId> = (0..kb.num_relations() as u32).map(RelationId).collect();
    let one = rels.iter().map(|&r| QuestionTemplate::new(vec![r], kb)).collect();
    let two = rels
        .iter()
        .flat_map(|&a| rels.iter().map(move |&b| (a, b)))
        .map(|(a, b)| QuestionTemplate::new(vec![a, b], kb))
        .collect();
    (one, two)
}

/// Follows `path` from `seed` over `kb`, breadth first.
pub fn oracle_answers(kb: &KnowledgeBase, seed: EntityId, path: &[RelationId]) -> BTreeSet<EntityId> {
    let mut frontier = BTreeSet::from([seed]);
    for &r in path {
        frontier = frontier
            .iter()
            .flat_map(|&e| kb.out_edges(e).iter().filter(|(rel, _)| *rel == r).map(|&(_, o)| o))
            .collect();
        if frontier.is_empty() {
            break;
        }
    }
    frontier
}

pub fn generate_world(spec: &WorldSpec) -> Result<(KnowledgeBase, Corpus, EntityLinkSet)> {
    spec.validate()?;
    let n = spec.num_entities;
    let pairs = n * n.saturating_sub(1);
    if spec.triples_per_relation > pairs {
        return Err(GraftError::Generation(format!(
            "{} distinct triples per relation requested but only {pairs} entity pairs exist",
            spec.triples_per_relation
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let entities: Vec<String> = (0..n).map(entity_name).collect();
    let relations: Vec<Vec<String>> = (0..spec.num_relation_types).map(relation_surface).collect();

    let mut triples = Vec::with_capacity(spec.num_relation_types * spec.triples_per_relation);
    for r in 0..spec.num_relation_types {
        for i in sample(&mut rng, pairs, spec.triples_per_relation) {
            let s = i / (n - 1);
            let mut o = i % (n - 1);
            if o >= s {
                o += 1;
            }
            triples.push(Triple::new(s as u32, r as u32, o as u32));
        }
    }
    let kb = KnowledgeBase::new(entities, relations, triples)?;

    let total = kb.triples().len();
    let covered = (spec.text_coverage * total as f64).round() as usize;
    let mut chosen = sample(&mut rng, total, covered).into_vec();
    chosen.sort_unstable();

    let mut documents = Vec::with_capacity(covered);
    let mut links = Vec::new();
    for (d, &ti) in chosen.iter().enumerate() {
        let t = kb.triples()[ti];
        let subj = tokens(kb.entity_name(t.subject));
        let obj = tokens(kb.entity_name(t.object));
        let rel = kb.relation_surface(t.relation);
        let obj_start = subj.len() + rel.len();
        let doc = DocId(d as u32);
        for p in 0..subj.len() {
            links.push(Link {
                entity: t.subject,
                doc,
                position: p as u32,
            });
        }
        for p in 0..obj.len() {
            links.push(Link {
                entity: t.object,
                doc,
                position: (obj_start + p) as u32,
            });
        }
        let mut toks = subj.clone();
        toks.extend(rel.iter().cloned());
        toks.extend(obj);
        documents.push(Document {
            title: subj,
            tokens: toks,
        });
    }
    let corpus = Corpus::new(documents)?;
    let links = EntityLinkSet::new(links, &kb, &corpus)?;
    Ok((kb, corpus, links))
}

/// A question together with the relation path that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub record: QuestionRecord,
    pub path: Vec<RelationId>,
}

fn sample_for(
    kb: &KnowledgeBase,
    templates: &[QuestionTemplate],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, EntityId, BTreeSet<EntityId>)> {
    let mut candidates = Vec::new();
    for (ti, t) in templates.iter().enumerate() {
        let before = candidates.len();
        for e in 0..kb.num_entities() as u32 {
            let answers = oracle_answers(kb, EntityId(e), &t.path);
            if !answers.is_empty() {
                candidates.push((ti, EntityId(e), answers));
            }
        }
        if candidates.len() == before {
            log::warn!("template {:?} has no satisfying seed; skipped", t.pattern);
        }
    }
    if candidates.len() < count {
        log::warn!(
            "only {} distinct questions available, {count} requested",
            candidates.len()
        );
    }
    let take = count.min(candidates.len());
    let mut picked = sample(rng, candidates.len(), take).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| candidates[i].clone()).collect()
}

pub fn generate_questions(
    kb: &KnowledgeBase,
    one_hop: &[QuestionTemplate],
    two_hop: &[QuestionTemplate],
    counts: (usize, usize),
    seed: u64,
) -> Vec<GeneratedQuestion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    for (templates, count) in [(one_hop, counts.0), (two_hop, counts.1)] {
        for (ti, s, answers) in sample_for(kb, templates, count, &mut rng) {
            all.push((templates[ti].clone(), s, answers));
        }
    }
    all.shuffle(&mut rng);
    all.into_iter()
        .enumerate()
        .map(|(i, (t, s, answers))| GeneratedQuestion {
            record: QuestionRecord {
                id: i as u32,
                tokens: t.instantiate(kb.entity_name(s)),
                seeds: vec![s],
                answers: answers.into_iter().collect(),
            },
            path: t.path,
        })
        .collect()
}

/// Questions whose gold answers are no longer reachable along their path in
/// the (possibly downsampled) `kb`.
pub fn kb_unanswerable(kb: &KnowledgeBase, questions: &[GeneratedQuestion]) -> usize {
    questions
        .iter()
        .filter(|q| {
            let reach = oracle_answers(kb, q.record.seeds[0], &q.path);
            !q.record.answers.iter().any(|a| reach.contains(a))
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Split {
    /// 70/10/20 by question order.
    pub fn for_count(n: usize) -> Self {
        let train = (0.7 * n as f64).round() as usize;
        let dev = ((0.1 * n as f64).round() as usize).min(n - train);
        Self {
            train,
            dev,
            test: n - train - dev,
        }
    }

    pub fn ranges(&self) -> [std::ops::Range<usize>; 3] {
        [
            0..self.train,
            self.train..self.train + self.dev,
            self.train + self.dev..self.train + self.dev + self.test,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub spec: WorldSpec,
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub documents: usize,
    pub links: usize,
    pub one_hop: usize,
    pub two_hop: usize,
    pub split: Split,
    pub paths: Vec<Vec<RelationId>>,
}

pub struct World {
    pub dataset: Dataset,
    pub questions: Vec<GeneratedQuestion>,
    pub manifest: WorldManifest,
}

pub fn generate(spec: &WorldSpec) -> Result<World> {
    let (kb, corpus, links) = generate_world(spec)?;
    let (one, two) = default_templates(&kb);
    let questions = generate_questions(
        &kb,
        &one,
        &two,
        (spec.one_hop_questions, spec.two_hop_questions),
        spec.seed.wrapping_add(1),
    );
    if questions.is_empty() {
        return Err(GraftError::Generation("world admits no questions".into()));
    }
    let one_hop = questions.iter().filter(|q| q.path.len() == 1).count();
    let manifest = WorldManifest {
        spec: spec.clone(),
        entities: kb.num_entities(),
        relations: kb.num_relations(),
        triples: kb.triples().len(),
        documents: corpus.len(),
        links: links.len(),
        one_hop,
        two_hop: questions.len() - one_hop,
        split: Split::for_count(questions.len()),
        paths: questions.iter().map(|q| q.path.clone()).collect(),
    };
    let dataset = Dataset {
        kb,
        corpus,
        links,
        questions: questions.iter().map(|q| q.record.clone()).collect(),
    };
    Ok(World {
        dataset,
        questions,
        manifest,
    })
}

pub fn save_world(world: &World, dir: &Path) -> Result<()> {
    crate::store::save_dataset(&world.dataset, dir)?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&world.manifest)?;
    std::fs::write(&path, text).map_err(|e| GraftError::io(&path, e))
}

pub fn load_manifest(dir: &Path) -> Result<WorldManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| GraftError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldSpec {
        WorldSpec {
            num_entities: 30,
            num_relation_types: 3,
            triples_per_relation: 40,
            text_coverage: 1.0,
            one_hop_questions: 30,
            two_hop_questions: 15,
            seed: 5,
        }
    }

    #[test]
    fn coverage_extremes() {
        let (kb, corpus, links) = generate_world(&WorldSpec {
            text_coverage: 0.0,
            ..small()
        })
        .unwrap();
        assert!(corpus.is_empty() && links.is_empty());
        assert_eq!(kb.triples().len(), 120);

        let (kb, corpus, links) = generate_world(&small()).unwrap();
        assert_eq!(corpus.len(), kb.triples().len());
        // every entity name is two tokens
        assert_eq!(links.len(), corpus.len() * 2 * 2);
    }

    #[test]
    fn no_self_loops_and_deterministic() {
        let (kb, ..) = generate_world(&small()).unwrap();
        assert!(kb.triples().iter().all(|t| t.subject != t.object));
        let (kb2, ..) = generate_world(&small()).unwrap();
        assert_eq!(kb, kb2);
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        let spec = WorldSpec {
            num_entities: 3,
            triples_per_relation: 7,
            ..small()
        };
        assert!(matches!(generate_world(&spec), Err(GraftError::Generation(_))));
    }

    #[test]
    fn two_hop_chain() {
        let names = (0..3).map(entity_name).collect();
        let kb = KnowledgeBase::new(
            names,
            vec![relation_surface(0), relation_surface(1)],
            vec![Triple::new(0, 0, 1), Triple::new(1, 1, 2)],
        )
        .unwrap();
        let path = [RelationId(0), RelationId(1)];
        assert_eq!(oracle_answers(&kb, EntityId(0), &path), BTreeSet::from([EntityId(2)]));
        assert!(oracle_answers(&kb, EntityId(2), &path).is_empty());
    }

    #[test]
    fn template_mentions_relation_and_seed() {
        let (kb, ..) = generate_world(&small()).unwrap();
        let (_, two) = default_templates(&kb);
        let t = &two[1];
        assert_eq!(t.pattern.matches("{seed}").count(), 1);
        let q = t.instantiate("ent_4 epsilon");
        assert_eq!(
            q.join(" "),
            "what is the written by of the directed by of ent_4 epsilon"
        );
    }

    #[test]
    fn split_sums() {
        for n in [1, 2, 9, 10, 2000] {
            let s = Split::for_count(n);
            assert_eq!(s.train + s.dev + s.test, n);
        }
        assert_eq!(
            Split::for_count(2000),
            Split {
                train: 1400,
                dev: 200,
                test: 400
            }
        );
    }
}
