//! On-disk index and graph artifacts.
//!
//! Layout under the artifacts directory: `<kb>.json` per non-empty KB,
//! `merged.json`, `graph.json` and `manifest.json`. The manifest pins the
//! corpus digest and scorer parameters so stale artifacts are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aligngraph::AlignmentGraph;
use crate::corpus::{Corpus, KbId};
use crate::error::{Error, Result};
use crate::scorers::{LexIndex, LexicalScorer, ScorerConfig};

pub const MANIFEST_FORMAT: &str = "polykb-artifacts";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub corpus_digest: String,
    pub n_chunks: usize,
    pub kbs: Vec<KbId>,
    pub scorer: ScorerConfig,
}

impl Manifest {
    pub fn new(corpus: &Corpus, scorer: ScorerConfig) -> Result<Self> {
        Ok(Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            corpus_digest: corpus_digest(corpus)?,
            n_chunks: corpus.len(),
            kbs: corpus.kbs().to_vec(),
            scorer,
        })
    }
}

/// FNV-1a over the canonical JSONL dump of the corpus.
pub fn corpus_digest(corpus: &Corpus) -> Result<String> {
    let mut bytes = Vec::new();
    corpus.write_jsonl(&mut bytes)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    std::fs::read_to_string(&path)
        .map_err(|_| Error::StaleArtifacts(format!("{} is missing; run `polykb build`", path.display())))
}

fn write_manifest(dir: &Path, corpus: &Corpus, scorer: ScorerConfig) -> Result<()> {
    let m = Manifest::new(corpus, scorer)?;
    write(dir, "manifest.json", &serde_json::to_string_pretty(&m)?)
}

pub fn index_file(kb: &KbId) -> String {
    format!("{kb}.json")
}

pub fn write_indexes(dir: &Path, corpus: &Corpus, lexical: &LexicalScorer, scorer: ScorerConfig) -> Result<()> {
    for (kb, idx) in lexical.indexes() {
        write(dir, &index_file(kb), &idx.to_json()?)?;
    }
    if let Some(m) = lexical.merged() {
        write(dir, "merged.json", &m.to_json()?)?;
    }
    write_manifest(dir, corpus, scorer)
}

pub fn write_graph(dir: &Path, corpus: &Corpus, graph: &AlignmentGraph, scorer: ScorerConfig) -> Result<()> {
    write(dir, "graph.json", &graph.to_json()?)?;
    write_manifest(dir, corpus, scorer)
}

fn check_ids<'a>(what: &str, got: &[String], want: impl Iterator<Item = &'a str>) -> Result<()> {
    if got.iter().map(String::as_str).ne(want) {
        return Err(Error::StaleArtifacts(format!("{what} does not match the corpus chunks")));
    }
    Ok(())
}

/// Loads and validates artifacts against `corpus` and `scorer`.
pub fn load(dir: &Path, corpus: &Corpus, scorer: ScorerConfig) -> Result<(LexicalScorer, AlignmentGraph)> {
    let manifest: Manifest = serde_json::from_str(&read(dir, "manifest.json")?)?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::StaleArtifacts(format!(
            "unsupported manifest {} v{}",
            manifest.format, manifest.version
        )));
    }
    if manifest.corpus_digest != corpus_digest(corpus)? || manifest.kbs != corpus.kbs() {
        return Err(Error::StaleArtifacts("corpus changed since build".into()));
    }
    if manifest.scorer != scorer {
        return Err(Error::StaleArtifacts("scorer parameters changed since build".into()));
    }
    let mut indexes = BTreeMap::new();
    for kb in corpus.kbs() {
        if corpus.kb_len(kb) == 0 {
            continue;
        }
        let idx = LexIndex::from_json(&read(dir, &index_file(kb))?)?;
        check_ids(&format!("index {kb}"), idx.chunk_ids(), corpus.kb_chunks(kb).map(|c| c.chunk_id.as_str()))?;
        indexes.insert(kb.clone(), idx);
    }
    let merged = if corpus.is_empty() {
        None
    } else {
        let m = LexIndex::from_json(&read(dir, "merged.json")?)?;
        check_ids("merged index", m.chunk_ids(), corpus.chunks().iter().map(|c| c.chunk_id.as_str()))?;
        Some(m)
    };
    let graph = AlignmentGraph::from_json(&read(dir, "graph.json")?)?;
    let mut graph_ids: Vec<&str> = graph.chunk_nodes().iter().map(|n| n.chunk_id.as_str()).collect();
    let mut corpus_ids: Vec<&str> = corpus.chunks().iter().map(|c| c.chunk_id.as_str()).collect();
    graph_ids.sort_unstable();
    corpus_ids.sort_unstable();
    if graph_ids != corpus_ids {
        return Err(Error::StaleArtifacts("graph does not match the corpus chunks".into()));
    }
    Ok((LexicalScorer::from_parts(indexes, merged), graph))
}
