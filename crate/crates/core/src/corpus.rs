//! Data model and JSONL ingestion for chunked multi-KB corpora and query sets.
//!
//! A [`Corpus`] is immutable once loaded. Chunks keep their ingestion order,
//! which doubles as the adjacency order used by [`Corpus::neighbors`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Short tag naming one knowledge base, e.g. `E`, `T` or `P`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KbId(String);

impl KbId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Config("KB id must be non-empty".into()));
        }
        Ok(KbId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for KbId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        KbId::new(value)
    }
}

impl From<KbId> for String {
    fn from(value: KbId) -> Self {
        value.0
    }
}

impl fmt::Display for KbId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for KbId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        KbId::new(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    Disease,
    Symptom,
    Drug,
    Formula,
    Therapy,
    Concept,
    Other,
}

impl EntityType {
    pub const ALL: [EntityType; 7] = [
        EntityType::Disease,
        EntityType::Symptom,
        EntityType::Drug,
        EntityType::Formula,
        EntityType::Therapy,
        EntityType::Concept,
        EntityType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Disease => "Disease",
            EntityType::Symptom => "Symptom",
            EntityType::Drug => "Drug",
            EntityType::Formula => "Formula",
            EntityType::Therapy => "Therapy",
            EntityType::Concept => "Concept",
            EntityType::Other => "Other",
        }
    }
}

impl FromStr for EntityType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        EntityType::ALL
            .into_iter()
            .find(|ty| ty.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("unknown entity type `{s}`"))
    }
}

/// Trim, case-fold and NFC-normalize an entity surface form.
pub fn normalize_entity_name(name: &str) -> String {
    let folded: String = name.trim().nfc().collect::<String>().to_lowercase();
    folded.nfc().collect()
}

/// Typed entity mention. Identity is the normalized `(name, type)` pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityRef {
    name: String,
    #[serde(rename = "type")]
    kind: EntityType,
}

impl EntityRef {
    pub fn new(name: &str, kind: EntityType) -> Result<Self> {
        let name = normalize_entity_name(name);
        if name.is_empty() {
            return Err(Error::Config("entity name is empty after normalization".into()));
        }
        Ok(EntityRef { name, kind })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> EntityType {
        self.kind
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub kb: KbId,
    pub doc_id: String,
    pub path: Vec<String>,
    pub text: String,
    pub entities: BTreeSet<EntityRef>,
    pub token_len: usize,
}

/// Count of Unicode scalar values after NFC normalization.
pub fn compute_token_len(text: &str) -> usize {
    text.nfc().count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Definition,
    ClassicsPrinciple,
    ClinicalEvidence,
    CrossKbSynthesis,
}

impl QuestionType {
    pub const ALL: [QuestionType; 4] = [
        QuestionType::Definition,
        QuestionType::ClassicsPrinciple,
        QuestionType::ClinicalEvidence,
        QuestionType::CrossKbSynthesis,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub primary_kb: KbId,
    pub required_kbs: BTreeSet<KbId>,
    pub evidence_chunk_ids: BTreeSet<String>,
    pub question_type: QuestionType,
}

impl GoldLabel {
    fn validate(&self, query_id: &str, corpus: &Corpus) -> Result<()> {
        let bad = |message: String| Error::InvalidGold {
            query_id: query_id.to_string(),
            message,
        };
        if self.required_kbs.is_empty() {
            return Err(bad("required_kbs is empty".into()));
        }
        if !self.required_kbs.contains(&self.primary_kb) {
            return Err(bad(format!("primary KB `{}` not in required_kbs", self.primary_kb)));
        }
        if self.question_type == QuestionType::CrossKbSynthesis && self.required_kbs.len() < 2 {
            return Err(bad("cross-KB synthesis needs at least two required KBs".into()));
        }
        if self.evidence_chunk_ids.is_empty() {
            return Err(bad("evidence_chunk_ids is empty".into()));
        }
        for kb in &self.required_kbs {
            if !corpus.has_kb(kb) {
                return Err(bad(format!("unknown KB `{kb}`")));
            }
        }
        if let Some(missing) = self.evidence_chunk_ids.iter().find(|id| corpus.get(id).is_none()) {
            return Err(bad(format!("evidence chunk `{missing}` not in corpus")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    pub entities: BTreeSet<EntityRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldLabel>,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            query_id: query_id.into(),
            text: text.into(),
            entities: BTreeSet::new(),
            gold: None,
        }
    }

    pub fn with_entities(mut self, entities: impl IntoIterator<Item = EntityRef>) -> Self {
        self.entities.extend(entities);
        self
    }
}

// Wire records. Entity type stays a string here so that a bad type is a
// schema error with a line number rather than an opaque serde message.

#[derive(Serialize, Deserialize)]
struct EntityRecord {
    name: String,
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Serialize, Deserialize)]
struct ChunkRecord {
    chunk_id: String,
    kb: String,
    doc_id: String,
    path: Vec<String>,
    text: String,
    entities: Vec<EntityRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_len: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct GoldRecord {
    primary_kb: String,
    required_kbs: Vec<String>,
    evidence_chunk_ids: Vec<String>,
    question_type: QuestionType,
}

#[derive(Serialize, Deserialize)]
struct QueryRecord {
    query_id: String,
    text: String,
    entities: Vec<EntityRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<GoldRecord>,
}

fn parse_entities(records: Vec<EntityRecord>, line: usize) -> Result<BTreeSet<EntityRef>> {
    records
        .into_iter()
        .map(|e| {
            let kind = e
                .kind
                .parse::<EntityType>()
                .map_err(|message| Error::Schema { line, message })?;
            EntityRef::new(&e.name, kind).map_err(|_| Error::Schema {
                line,
                message: format!("entity name `{}` is empty after normalization", e.name),
            })
        })
        .collect()
}

fn entity_records(entities: &BTreeSet<EntityRef>) -> Vec<EntityRecord> {
    entities
        .iter()
        .map(|e| EntityRecord {
            name: e.name().to_string(),
            kind: e.kind().as_str().to_string(),
        })
        .collect()
}

/// Iterate non-blank JSONL lines with their 1-based line numbers.
fn jsonl_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(Ok((i + 1, l))),
            Err(e) => Some(Err(Error::Schema {
                line: i + 1,
                message: e.to_string(),
            })),
        })
}

/// Immutable multi-KB corpus indexed by chunk id, by KB and by document.
#[derive(Clone, Debug)]
pub struct Corpus {
    kbs: Vec<KbId>,
    chunks: Vec<Chunk>,
    by_id: HashMap<String, usize>,
    by_kb: BTreeMap<KbId, Vec<usize>>,
    by_doc: HashMap<String, Vec<usize>>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.kbs == other.kbs && self.chunks == other.chunks
    }
}

impl Corpus {
    /// Build a corpus from chunks in ingestion order. The whole input is
    /// rejected on the first invariant violation.
    pub fn from_chunks(kbs: Vec<KbId>, chunks: Vec<Chunk>) -> Result<Self> {
        let mut seen = HashSet::new();
        for kb in &kbs {
            if !seen.insert(kb.clone()) {
                return Err(Error::Config(format!("KB `{kb}` declared twice")));
            }
        }
        let mut by_id = HashMap::with_capacity(chunks.len());
        let mut by_kb: BTreeMap<KbId, Vec<usize>> = kbs.iter().map(|k| (k.clone(), Vec::new())).collect();
        let mut by_doc: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, chunk) in chunks.iter().enumerate() {
            if by_id.insert(chunk.chunk_id.clone(), i).is_some() {
                return Err(Error::DuplicateChunkId(chunk.chunk_id.clone()));
            }
            match by_kb.get_mut(&chunk.kb) {
                Some(v) => v.push(i),
                None => {
                    return Err(Error::UnknownKb {
                        chunk_id: chunk.chunk_id.clone(),
                        kb: chunk.kb.to_string(),
                    })
                }
            }
            let doc = by_doc.entry(chunk.doc_id.clone()).or_default();
            if let Some(&first) = doc.first() {
                if chunks[first].kb != chunk.kb {
                    return Err(Error::DocSpansKbs {
                        doc_id: chunk.doc_id.clone(),
                        first: chunks[first].kb.to_string(),
                        second: chunk.kb.to_string(),
                    });
                }
            }
            doc.push(i);
        }
        Ok(Corpus {
            kbs,
            chunks,
            by_id,
            by_kb,
            by_doc,
        })
    }

    /// Load chunk JSONL. A missing `token_len` is computed from the text.
    pub fn from_jsonl<R: BufRead>(reader: R, kbs: Vec<KbId>) -> Result<Self> {
        let mut chunks = Vec::new();
        for item in jsonl_lines(reader) {
            let (line, text) = item?;
            let rec: ChunkRecord = serde_json::from_str(&text).map_err(|e| Error::Schema {
                line,
                message: e.to_string(),
            })?;
            let kb = KbId::new(rec.kb).map_err(|_| Error::Schema {
                line,
                message: "empty `kb`".into(),
            })?;
            if rec.chunk_id.is_empty() {
                return Err(Error::Schema {
                    line,
                    message: "empty `chunk_id`".into(),
                });
            }
            let entities = parse_entities(rec.entities, line)?;
            let token_len = rec.token_len.unwrap_or_else(|| compute_token_len(&rec.text));
            if token_len == 0 && !rec.text.is_empty() {
                return Err(Error::Schema {
                    line,
                    message: "token_len must be positive for non-empty text".into(),
                });
            }
            chunks.push(Chunk {
                chunk_id: rec.chunk_id,
                kb,
                doc_id: rec.doc_id,
                path: rec.path,
                text: rec.text,
                entities,
                token_len,
            });
        }
        Corpus::from_chunks(kbs, chunks)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for c in &self.chunks {
            let rec = ChunkRecord {
                chunk_id: c.chunk_id.clone(),
                kb: c.kb.to_string(),
                doc_id: c.doc_id.clone(),
                path: c.path.clone(),
                text: c.text.clone(),
                entities: entity_records(&c.entities),
                token_len: Some(c.token_len),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
        }
        Ok(())
    }

    pub fn kbs(&self) -> &[KbId] {
        &self.kbs
    }

    pub fn has_kb(&self, kb: &KbId) -> bool {
        self.by_kb.contains_key(kb)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// All chunks in ingestion order.
    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn get(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn kb_chunks<'a>(&'a self, kb: &KbId) -> impl Iterator<Item = &'a Chunk> + 'a {
        self.by_kb
            .get(kb)
            .into_iter()
            .flat_map(move |ix| ix.iter().map(move |&i| &self.chunks[i]))
    }

    pub fn kb_len(&self, kb: &KbId) -> usize {
        self.by_kb.get(kb).map_or(0, Vec::len)
    }

    pub fn doc_chunks<'a>(&'a self, doc_id: &str) -> impl Iterator<Item = &'a Chunk> + 'a {
        self.by_doc
            .get(doc_id)
            .into_iter()
            .flat_map(move |ix| ix.iter().map(move |&i| &self.chunks[i]))
    }

    /// Structural neighbours: the previous and next chunk of the same document
    /// and full path, plus the first chunk sitting at the parent path (the
    /// section summary). Returned in ingestion order; never contains `chunk`.
    pub fn neighbors(&self, chunk: &Chunk) -> Vec<&Chunk> {
        let Some(&self_ix) = self.by_id.get(&chunk.chunk_id) else {
            return Vec::new();
        };
        let doc = match self.by_doc.get(&chunk.doc_id) {
            Some(d) => d,
            None => return Vec::new(),
        };
        let same_section: Vec<usize> = doc
            .iter()
            .copied()
            .filter(|&i| self.chunks[i].path == chunk.path)
            .collect();
        let mut out = Vec::with_capacity(3);
        if let Some(pos) = same_section.iter().position(|&i| i == self_ix) {
            if pos > 0 {
                out.push(same_section[pos - 1]);
            }
            if let Some(&next) = same_section.get(pos + 1) {
                out.push(next);
            }
        }
        if let Some((_, parent_path)) = chunk.path.split_last() {
            if let Some(&parent) = doc
                .iter()
                .find(|&&i| i != self_ix && self.chunks[i].path.as_slice() == parent_path)
            {
                out.push(parent);
            }
        }
        out.sort_unstable();
        out.dedup();
        out.into_iter().map(|i| &self.chunks[i]).collect()
    }
}

/// Load query JSONL, validating any gold labels against `corpus`.
pub fn load_queries<R: BufRead>(reader: R, corpus: &Corpus) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for item in jsonl_lines(reader) {
        let (line, text) = item?;
        let rec: QueryRecord = serde_json::from_str(&text).map_err(|e| Error::Schema {
            line,
            message: e.to_string(),
        })?;
        if rec.text.trim().is_empty() {
            return Err(Error::Schema {
                line,
                message: format!("query `{}` has empty text", rec.query_id),
            });
        }
        if !seen.insert(rec.query_id.clone()) {
            return Err(Error::Schema {
                line,
                message: format!("duplicate query id `{}`", rec.query_id),
            });
        }
        let entities = parse_entities(rec.entities, line)?;
        let gold = match rec.gold {
            None => None,
            Some(g) => {
                let kb = |s: String| {
                    KbId::new(s).map_err(|_| Error::Schema {
                        line,
                        message: "empty KB id in gold".into(),
                    })
                };
                let gold = GoldLabel {
                    primary_kb: kb(g.primary_kb)?,
                    required_kbs: g.required_kbs.into_iter().map(kb).collect::<Result<_>>()?,
                    evidence_chunk_ids: g.evidence_chunk_ids.into_iter().collect(),
                    question_type: g.question_type,
                };
                gold.validate(&rec.query_id, corpus)?;
                Some(gold)
            }
        };
        out.push(Query {
            query_id: rec.query_id,
            text: rec.text,
            entities,
            gold,
        });
    }
    Ok(out)
}

pub fn write_queries<W: Write>(queries: &[Query], mut out: W) -> Result<()> {
    for q in queries {
        let rec = QueryRecord {
            query_id: q.query_id.clone(),
            text: q.text.clone(),
            entities: entity_records(&q.entities),
            gold: q.gold.as_ref().map(|g| GoldRecord {
                primary_kb: g.primary_kb.to_string(),
                required_kbs: g.required_kbs.iter().map(KbId::to_string).collect(),
                evidence_chunk_ids: g.evidence_chunk_ids.iter().cloned().collect(),
                question_type: g.question_type,
            }),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io("<queries>", e))?;
    }
    Ok(())
}
