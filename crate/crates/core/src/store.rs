//! In-memory knowledge base, sentence corpus, entity links and questions,
//! plus their on-disk JSON-lines/TSV formats.
//!
//! All stores are immutable after construction and validate referential
//! integrity up front, so downstream code can index without checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GraftError, Result};
use crate::ids::{DocId, EntityId, RelationId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    #[serde(rename = "s")]
    pub subject: EntityId,
    #[serde(rename = "r")]
    pub relation: RelationId,
    #[serde(rename = "o")]
    pub object: EntityId,
}

impl Triple {
    pub fn new(s: u32, r: u32, o: u32) -> Self {
        Self {
            subject: EntityId(s),
            relation: RelationId(r),
            object: EntityId(o),
        }
    }
}

/// Entities, relation surface forms and a duplicate-free triple set.
/// Entity and relation ids are dense: `0..entities.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    entities: Vec<String>,
    relations: Vec<Vec<String>>,
    triples: Vec<Triple>,
    out_edges: Vec<Vec<(RelationId, EntityId)>>,
}

impl KnowledgeBase {
    pub fn new(entities: Vec<String>, relations: Vec<Vec<String>>, mut triples: Vec<Triple>) -> Result<Self> {
        if let Some((i, _)) = relations.iter().enumerate().find(|(_, r)| r.is_empty()) {
            return Err(GraftError::Integrity(format!("relation {i} has an empty surface form")));
        }
        for t in &triples {
            if t.subject.index() >= entities.len() || t.object.index() >= entities.len() {
                return Err(GraftError::Integrity(format!(
                    "triple ({}, {}, {}) references an unknown entity",
                    t.subject, t.relation, t.object
                )));
            }
            if t.relation.index() >= relations.len() {
                return Err(GraftError::Integrity(format!(
                    "triple ({}, {}, {}) references an unknown relation",
                    t.subject, t.relation, t.object
                )));
            }
        }
        triples.sort_unstable();
        if let Some(w) = triples.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraftError::Integrity(format!(
                "duplicate triple ({}, {}, {})",
                w[0].subject, w[0].relation, w[0].object
            )));
        }
        let mut out_edges = vec![Vec::new(); entities.len()];
        for t in &triples {
            out_edges[t.subject.index()].push((t.relation, t.object));
        }
        Ok(Self {
            entities,
            relations,
            triples,
            out_edges,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        &self.entities[e.index()]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities
    }

    pub fn relation_surface(&self, r: RelationId) -> &[String] {
        &self.relations[r.index()]
    }

    pub fn relation_surfaces(&self) -> &[Vec<String>] {
        &self.relations
    }

    /// Triples in ascending `(s, r, o)` order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Outgoing `(relation, object)` pairs of `e`, ascending.
    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_edges[e.index()]
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }

    pub fn has_entity(&self, e: EntityId) -> bool {
        e.index() < self.entities.len()
    }

    /// Same vocabularies, different triple subset.
    pub fn with_triples(&self, triples: Vec<Triple>) -> Result<Self> {
        Self::new(self.entities.clone(), self.relations.clone(), triples)
    }
}

/// Keeps exactly `round(fraction * |triples|)` triples, chosen uniformly
/// without replacement under `seed`. Vocabularies are untouched.
pub fn subsample_kb(kb: &KnowledgeBase, fraction: f64, seed: u64) -> Result<KnowledgeBase> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(GraftError::Contract(format!("kb fraction {fraction} outside [0, 1]")));
    }
    let n = kb.triples.len();
    let keep = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, keep.min(n)).into_vec();
    picked.sort_unstable();
    kb.with_triples(picked.into_iter().map(|i| kb.triples[i]).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub title: Vec<String>,
    pub tokens: Vec<String>,
}

/// Sentence-level documents with dense ids and a token vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    vocabulary: BTreeMap<String, u32>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        if let Some((i, _)) = documents.iter().enumerate().find(|(_, d)| d.tokens.is_empty()) {
            return Err(GraftError::Integrity(format!("document {i} has no tokens")));
        }
        let mut vocabulary = BTreeMap::new();
        for d in &documents {
            for t in d.title.iter().chain(&d.tokens) {
                let next = vocabulary.len() as u32;
                vocabulary.entry(t.clone()).or_insert(next);
            }
        }
        Ok(Self { documents, vocabulary })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn doc(&self, d: DocId) -> &Document {
        &self.documents[d.index()]
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, u32> {
        &self.vocabulary
    }

    pub fn has_doc(&self, d: DocId) -> bool {
        d.index() < self.documents.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub entity: EntityId,
    pub doc: DocId,
    pub position: u32,
}

/// Per-position entity links. Multi-word mentions contribute one link per
/// covered position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntityLinkSet {
    links: Vec<Link>,
    by_doc: Vec<Vec<(u32, EntityId)>>,
    by_entity: BTreeMap<EntityId, Vec<(DocId, u32)>>,
}

impl EntityLinkSet {
    pub fn new(mut links: Vec<Link>, kb: &KnowledgeBase, corpus: &Corpus) -> Result<Self> {
        for l in &links {
            if !kb.has_entity(l.entity) {
                return Err(GraftError::Integrity(format!(
                    "link to unknown entity {} in {}",
                    l.entity, l.doc
                )));
            }
            if !corpus.has_doc(l.doc) {
                return Err(GraftError::Integrity(format!("link into unknown document {}", l.doc)));
            }
            let len = corpus.doc(l.doc).tokens.len();
            if l.position as usize >= len {
                return Err(GraftError::Integrity(format!(
                    "link position {} beyond length {len} of {}",
                    l.position, l.doc
                )));
            }
        }
        links.sort_unstable_by_key(|l| (l.doc, l.position, l.entity));
        links.dedup();
        let mut by_doc = vec![Vec::new(); corpus.len()];
        let mut by_entity: BTreeMap<EntityId, Vec<(DocId, u32)>> = BTreeMap::new();
        for l in &links {
            by_doc[l.doc.index()].push((l.position, l.entity));
            by_entity.entry(l.entity).or_default().push((l.doc, l.position));
        }
        Ok(Self {
            links,
            by_doc,
            by_entity,
        })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// `(position, entity)` links of `d` in ascending order.
    pub fn in_doc(&self, d: DocId) -> &[(u32, EntityId)] {
        self.by_doc.get(d.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn mentions_of(&self, e: EntityId) -> &[(DocId, u32)] {
        self.by_entity.get(&e).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub type MentionMap = BTreeMap<EntityId, BTreeSet<(DocId, u32)>>;
pub type PositionMap = BTreeMap<(DocId, u32), BTreeSet<EntityId>>;

/// Builds `M(v)` (entity to mention positions) and `L(d, p)` (position to
/// linked entities). The two maps are inverses over `links`.
pub fn mention_index<'a>(links: impl IntoIterator<Item = &'a Link>) -> (MentionMap, PositionMap) {
    let mut m = MentionMap::new();
    let mut l = PositionMap::new();
    for link in links {
        m.entry(link.entity).or_default().insert((link.doc, link.position));
        l.entry((link.doc, link.position)).or_default().insert(link.entity);
    }
    (m, l)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: u32,
    pub tokens: Vec<String>,
    pub seeds: Vec<EntityId>,
    pub answers: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kb: KnowledgeBase,
    pub corpus: Corpus,
    pub links: EntityLinkSet,
    pub questions: Vec<QuestionRecord>,
}

/// File names inside a dataset directory.
pub mod files {
    pub const KB: &str = "kb.jsonl";
    pub const ENTITIES: &str = "entities.tsv";
    pub const RELATIONS: &str = "relations.tsv";
    pub const CORPUS: &str = "corpus.jsonl";
    pub const QUESTIONS: &str = "questions.jsonl";
}

#[derive(Debug, Serialize, Deserialize)]
struct SpanLink {
    entity: EntityId,
    start: u32,
    end: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    id: u32,
    title: Vec<String>,
    tokens: Vec<String>,
    links: Vec<SpanLink>,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| GraftError::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GraftError {
    GraftError::Parse {
        file: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            serde_json::from_str(&l)
                .map(|v| (n, v))
                .map_err(|e| parse_err(path, n, e.to_string()))
        })
        .collect()
}

/// Reads `id<TAB>value` rows whose ids must be exactly `0..rows`.
fn read_dense_tsv(path: &Path) -> Result<Vec<String>> {
    let mut rows: Vec<(usize, u32, String)> = Vec::new();
    for (n, line) in read_lines(path)? {
        let (id, value) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected id<TAB>value"))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|e| parse_err(path, n, format!("bad id: {e}")))?;
        rows.push((n, id, value.to_string()));
    }
    rows.sort_by_key(|r| r.1);
    for (i, (n, id, _)) in rows.iter().enumerate() {
        if *id as usize != i {
            return Err(parse_err(
                path,
                *n,
                format!("ids must be dense from 0; expected {i}, found {id}"),
            ));
        }
    }
    Ok(rows.into_iter().map(|r| r.2).collect())
}

pub fn load_kb(dir: &Path) -> Result<KnowledgeBase> {
    let entities = read_dense_tsv(&dir.join(files::ENTITIES))?;
    let relations: Vec<Vec<String>> = read_dense_tsv(&dir.join(files::RELATIONS))?
        .into_iter()
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .collect();
    let kb_path = dir.join(files::KB);
    let mut triples = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, t) in read_jsonl::<Triple>(&kb_path)? {
        if t.subject.index() >= entities.len() || t.object.index() >= entities.len() {
            return Err(GraftError::Integrity(format!(
                "{}:{n}: unknown entity in triple",
                kb_path.display()
            )));
        }
        if t.relation.index() >= relations.len() {
            return Err(GraftError::Integrity(format!(
                "{}:{n}: unknown relation {}",
                kb_path.display(),
                t.relation
            )));
        }
        if !seen.insert(t) {
            return Err(GraftError::Integrity(format!(
                "{}:{n}: duplicate triple",
                kb_path.display()
            )));
        }
        triples.push(t);
    }
    KnowledgeBase::new(entities, relations, triples)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let kb = load_kb(dir)?;

    let corpus_path = dir.join(files::CORPUS);
    let mut records = read_jsonl::<CorpusRecord>(&corpus_path)?;
    records.sort_by_key(|(_, r)| r.id);
    let mut documents = Vec::with_capacity(records.len());
    let mut links = Vec::new();
    for (i, (n, rec)) in records.into_iter().enumerate() {
        if rec.id as usize != i {
            return Err(parse_err(
                &corpus_path,
                n,
                format!("document ids must be dense from 0; expected {i}, found {}", rec.id),
            ));
        }
        if rec.tokens.is_empty() {
            return Err(parse_err(&corpus_path, n, "document has no tokens"));
        }
        for sl in &rec.links {
            if sl.start >= sl.end {
                return Err(parse_err(&corpus_path, n, "empty link span"));
            }
            if sl.end as usize > rec.tokens.len() {
                return Err(GraftError::Integrity(format!(
                    "{}:{n}: link span [{}, {}) beyond document length {}",
                    corpus_path.display(),
                    sl.start,
                    sl.end,
                    rec.tokens.len()
                )));
            }
            if !kb.has_entity(sl.entity) {
                return Err(GraftError::Integrity(format!(
                    "{}:{n}: link to unknown entity {}",
                    corpus_path.display(),
                    sl.entity
                )));
            }
            for p in sl.start..sl.end {
                links.push(Link {
                    entity: sl.entity,
                    doc: DocId(rec.id),
                    position: p,
                });
            }
        }
        documents.push(Document {
            title: rec.title,
            tokens: rec.tokens,
        });
    }
    let corpus = Corpus::new(documents)?;
    let links = EntityLinkSet::new(links, &kb, &corpus)?;

    let q_path = dir.join(files::QUESTIONS);
    let mut questions = Vec::new();
    for (n, q) in read_jsonl::<QuestionRecord>(&q_path)? {
        if let Some(bad) = q.seeds.iter().chain(&q.answers).find(|e| !kb.has_entity(**e)) {
            return Err(GraftError::Integrity(format!(
                "{}:{n}: question {} references unknown entity {bad}",
                q_path.display(),
                q.id
            )));
        }
        questions.push(q);
    }

    Ok(Dataset {
        kb,
        corpus,
        links,
        questions,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| GraftError::io(path, e))
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, path: &Path, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v)?;
    w.write_all(b"\n").map_err(|e| GraftError::io(path, e))
}

fn finish(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| GraftError::io(path, e))
}

/// Collapses per-position links of one document back into contiguous spans.
fn spans(doc_links: &[(u32, EntityId)]) -> Vec<SpanLink> {
    let mut by_entity: BTreeMap<EntityId, Vec<u32>> = BTreeMap::new();
    for &(p, e) in doc_links {
        by_entity.entry(e).or_default().push(p);
    }
    let mut out = Vec::new();
    for (e, mut ps) in by_entity {
        ps.sort_unstable();
        let mut start = ps[0];
        let mut prev = ps[0];
        for &p in &ps[1..] {
            if p != prev + 1 {
                out.push(SpanLink {
                    entity: e,
                    start,
                    end: prev + 1,
                });
                start = p;
            }
            prev = p;
        }
        out.push(SpanLink {
            entity: e,
            start,
            end: prev + 1,
        });
    }
    out.sort_by_key(|s| (s.start, s.entity));
    out
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| GraftError::io(dir, e))?;
    let mut written = Vec::new();

    let p = dir.join(files::ENTITIES);
    let mut w = create(&p)?;
    for (i, name) in ds.kb.entity_names().iter().enumerate() {
        writeln!(w, "{i}\t{name}").map_err(|e| GraftError::io(&p, e))?;
    }
    finish(w, &p)?;
    written.push(p);

    let p = dir.join(files::RELATIONS);
    let mut w = create(&p)?;
    for (i, surface) in ds.kb.relation_surfaces().iter().enumerate() {
        writeln!(w, "{i}\t{}", surface.join(" ")).map_err(|e| GraftError::io(&p, e))?;
    }
    finish(w, &p)?;
    written.push(p);

    let p = dir.join(files::KB);
    let mut w = create(&p)?;
    for t in ds.kb.triples() {
        write_json_line(&mut w, &p, t)?;
    }
    finish(w, &p)?;
    written.push(p);

    let p = dir.join(files::CORPUS);
    let mut w = create(&p)?;
    for (i, d) in ds.corpus.documents().iter().enumerate() {
        let rec = CorpusRecord {
            id: i as u32,
            title: d.title.clone(),
            tokens: d.tokens.clone(),
            links: spans(ds.links.in_doc(DocId(i as u32))),
        };
        write_json_line(&mut w, &p, &rec)?;
    }
    finish(w, &p)?;
    written.push(p);

    let p = dir.join(files::QUESTIONS);
    let mut w = create(&p)?;
    for q in &ds.questions {
        write_json_line(&mut w, &p, q)?;
    }
    finish(w, &p)?;
    written.push(p);

    Ok(written)
}
