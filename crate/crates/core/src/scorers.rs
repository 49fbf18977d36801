//! Relevance scoring.
//!
//! The built-in retriever is BM25 over character bigrams plus whole entity
//! names. External retriever or ranker scores can be supplied as JSONL
//! `{query_id, chunk_id, score}` records and plugged in through [`Scorer`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{Chunk, Corpus, EntityRef, KbId, Query};
use crate::error::{Error, Result};

pub const INDEX_FORMAT: &str = "polykb-lexindex";
pub const INDEX_VERSION: u32 = 1;

/// Entity terms live in their own namespace so that a two-character entity
/// name never collides with a text bigram.
const ENTITY_PREFIX: char = '\u{1f}';

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Retriever,
    Ranker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    pub score: f64,
    pub source: ScoreSource,
}

impl ScoredChunk {
    pub fn retriever(chunk_id: impl Into<String>, score: f64) -> Self {
        ScoredChunk {
            chunk_id: chunk_id.into(),
            score,
            source: ScoreSource::Retriever,
        }
    }
}

/// Standard tie rule: score descending, then chunk id ascending.
pub fn sort_scored(list: &mut [ScoredChunk]) {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub k1: f64,
    pub b: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig { k1: 1.2, b: 0.75 }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::Config(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("b must be in [0,1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Character bigrams of the NFC text, taken within whitespace-separated runs.
/// A run of a single character contributes that character as a unigram.
pub fn text_terms(text: &str) -> Vec<String> {
    let norm: String = text.nfc().collect();
    let mut out = Vec::new();
    for run in norm.split_whitespace() {
        let chars: Vec<char> = run.chars().collect();
        if chars.len() == 1 {
            out.push(chars[0].to_string());
        }
        for w in chars.windows(2) {
            let mut t = String::with_capacity(8);
            t.push(w[0]);
            t.push(w[1]);
            out.push(t);
        }
    }
    out
}

pub fn entity_term(entity: &EntityRef) -> String {
    let mut t = String::with_capacity(entity.name().len() + 1);
    t.push(ENTITY_PREFIX);
    t.push_str(entity.name());
    t
}

/// Term multiset of a chunk: text bigrams plus one term per entity.
pub fn chunk_terms(chunk: &Chunk) -> Vec<String> {
    let mut terms = text_terms(&chunk.text);
    terms.extend(chunk.entities.iter().map(entity_term));
    terms
}

/// Distinct query terms, sorted.
pub fn query_terms(query: &Query) -> BTreeSet<String> {
    let mut terms: BTreeSet<String> = text_terms(&query.text).into_iter().collect();
    terms.extend(query.entities.iter().map(entity_term));
    terms
}

pub fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Saturated, length-normalized term weight (without the idf factor).
pub fn bm25_tf(tf: f64, doc_len: f64, avg_len: f64, cfg: &ScorerConfig) -> f64 {
    if tf <= 0.0 {
        return 0.0;
    }
    let norm = if avg_len > 0.0 {
        1.0 - cfg.b + cfg.b * doc_len / avg_len
    } else {
        1.0
    };
    tf * (cfg.k1 + 1.0) / (tf + cfg.k1 * norm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Immutable inverted index over the chunks of one KB (or of all KBs when
/// built merged).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexIndex {
    format: String,
    version: u32,
    kb: Option<KbId>,
    config: ScorerConfig,
    chunk_ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl LexIndex {
    pub fn build(corpus: &Corpus, kb: &KbId, config: ScorerConfig) -> Result<Self> {
        if !corpus.has_kb(kb) {
            return Err(Error::MissingIndex(kb.to_string()));
        }
        if corpus.kb_len(kb) == 0 {
            return Err(Error::EmptyKb(kb.to_string()));
        }
        Self::from_chunks(corpus.kb_chunks(kb), Some(kb.clone()), config)
    }

    /// One flat index over every chunk of the corpus.
    pub fn build_merged(corpus: &Corpus, config: ScorerConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyKb("<merged>".into()));
        }
        Self::from_chunks(corpus.chunks().iter(), None, config)
    }

    fn from_chunks<'a>(chunks: impl Iterator<Item = &'a Chunk>, kb: Option<KbId>, config: ScorerConfig) -> Result<Self> {
        config.validate()?;
        let mut chunk_ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (doc, chunk) in chunks.enumerate() {
            let terms = chunk_terms(chunk);
            doc_len.push(terms.len() as u32);
            chunk_ids.push(chunk.chunk_id.clone());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting { doc: doc as u32, tf });
            }
        }
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avg_len = if doc_len.is_empty() {
            0.0
        } else {
            total as f64 / doc_len.len() as f64
        };
        Ok(LexIndex {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            kb,
            config,
            chunk_ids,
            doc_len,
            avg_len,
            postings,
        })
    }

    pub fn kb(&self) -> Option<&KbId> {
        self.kb.as_ref()
    }

    pub fn chunk_ids(&self) -> &[String] {
        &self.chunk_ids
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn n_docs(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Document-frequency table, sorted by term.
    pub fn doc_freqs(&self) -> impl Iterator<Item = (&str, usize)> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.len()))
    }

    pub fn idf(&self, term: &str) -> f64 {
        bm25_idf(self.n_docs(), self.doc_freq(term))
    }

    fn accumulate(&self, query: &Query) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.n_docs()];
        let n = self.n_docs();
        for term in query_terms(query) {
            let Some(list) = self.postings.get(&term) else { continue };
            let idf = bm25_idf(n, list.len());
            for p in list {
                let d = p.doc as usize;
                acc[d] += idf * bm25_tf(p.tf as f64, self.doc_len[d] as f64, self.avg_len, &self.config);
            }
        }
        acc
    }

    /// Scores every indexed chunk, sorted by (score desc, chunk id asc).
    pub fn score(&self, query: &Query) -> Vec<ScoredChunk> {
        let acc = self.accumulate(query);
        let mut out: Vec<ScoredChunk> = self
            .chunk_ids
            .iter()
            .zip(acc)
            .map(|(id, s)| ScoredChunk::retriever(id.clone(), s))
            .collect();
        sort_scored(&mut out);
        out
    }

    /// idf-weighted fraction of distinct query terms present in each chunk.
    /// Length-independent; used as the built-in ranker signal.
    pub fn coverage(&self, query: &Query) -> Vec<ScoredChunk> {
        let n = self.n_docs();
        let mut acc = vec![0.0f64; n];
        let mut total = 0.0;
        for term in query_terms(query) {
            let df = self.doc_freq(&term);
            let idf = bm25_idf(n, df);
            total += idf;
            if let Some(list) = self.postings.get(&term) {
                for p in list {
                    acc[p.doc as usize] += idf;
                }
            }
        }
        let mut out: Vec<ScoredChunk> = self
            .chunk_ids
            .iter()
            .zip(acc)
            .map(|(id, s)| ScoredChunk {
                chunk_id: id.clone(),
                score: if total > 0.0 { s / total } else { 0.0 },
                source: ScoreSource::Ranker,
            })
            .collect();
        sort_scored(&mut out);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let idx: LexIndex = serde_json::from_str(s)?;
        if idx.format != INDEX_FORMAT || idx.version != INDEX_VERSION {
            return Err(Error::Config(format!(
                "unsupported index dump {} v{}",
                idx.format, idx.version
            )));
        }
        Ok(idx)
    }
}

/// Min-max normalization of raw values. A constant list maps to 0.5.
pub fn normalize_values(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyList);
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(min.is_finite() && max.is_finite()) {
        return Err(Error::Config("non-finite score in normalization input".into()));
    }
    let span = max - min;
    Ok(values
        .iter()
        .map(|&v| if span > 0.0 { ((v - min) / span).clamp(0.0, 1.0) } else { 0.5 })
        .collect())
}

pub fn normalize(scores: &[ScoredChunk]) -> Result<Vec<ScoredChunk>> {
    let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let norm = normalize_values(&raw)?;
    Ok(scores
        .iter()
        .zip(norm)
        .map(|(s, v)| ScoredChunk {
            chunk_id: s.chunk_id.clone(),
            score: v,
            source: s.source,
        })
        .collect())
}

/// Source of per-query chunk scores.
pub trait Scorer: Sync {
    /// Scores for every chunk of `kb`, in the standard tie order.
    fn score_kb(&self, query: &Query, kb: &KbId) -> Result<Vec<ScoredChunk>>;

    /// Scores over all KBs pooled together, in the standard tie order.
    fn score_merged(&self, query: &Query, kbs: &[KbId]) -> Result<Vec<ScoredChunk>> {
        let mut all = Vec::new();
        for kb in kbs {
            all.extend(self.score_kb(query, kb)?);
        }
        sort_scored(&mut all);
        Ok(all)
    }

    /// Whether raw scores are already comparable across KBs.
    fn cross_kb_comparable(&self) -> bool;
}

/// Built-in lexical retriever: one index per KB plus an optional merged index.
#[derive(Clone, Debug)]
pub struct LexicalScorer {
    indexes: BTreeMap<KbId, LexIndex>,
    merged: Option<LexIndex>,
}

impl LexicalScorer {
    /// Index every non-empty KB. Empty KBs get no index; scoring them yields
    /// an empty list.
    pub fn build(corpus: &Corpus, config: ScorerConfig) -> Result<Self> {
        let mut indexes = BTreeMap::new();
        for kb in corpus.kbs() {
            match LexIndex::build(corpus, kb, config) {
                Ok(idx) => {
                    indexes.insert(kb.clone(), idx);
                }
                Err(Error::EmptyKb(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let merged = LexIndex::build_merged(corpus, config).ok();
        Ok(LexicalScorer { indexes, merged })
    }

    pub fn from_parts(indexes: BTreeMap<KbId, LexIndex>, merged: Option<LexIndex>) -> Self {
        LexicalScorer { indexes, merged }
    }

    pub fn index(&self, kb: &KbId) -> Option<&LexIndex> {
        self.indexes.get(kb)
    }

    pub fn indexes(&self) -> &BTreeMap<KbId, LexIndex> {
        &self.indexes
    }

    pub fn merged(&self) -> Option<&LexIndex> {
        self.merged.as_ref()
    }

    /// Built-in ranker scores for every chunk of `kb`.
    pub fn coverage_kb(&self, query: &Query, kb: &KbId) -> Vec<ScoredChunk> {
        self.indexes.get(kb).map(|i| i.coverage(query)).unwrap_or_default()
    }
}

impl Scorer for LexicalScorer {
    fn score_kb(&self, query: &Query, kb: &KbId) -> Result<Vec<ScoredChunk>> {
        Ok(self.indexes.get(kb).map(|i| i.score(query)).unwrap_or_default())
    }

    fn score_merged(&self, query: &Query, kbs: &[KbId]) -> Result<Vec<ScoredChunk>> {
        match &self.merged {
            Some(m) => Ok(m.score(query)),
            None => {
                let mut all = Vec::new();
                for kb in kbs {
                    all.extend(self.score_kb(query, kb)?);
                }
                sort_scored(&mut all);
                Ok(all)
            }
        }
    }

    fn cross_kb_comparable(&self) -> bool {
        true
    }
}

#[derive(Deserialize)]
struct ScoreRecord {
    query_id: String,
    chunk_id: String,
    score: f64,
}

/// Precomputed scores keyed by query id, read from a score file.
#[derive(Clone, Debug, Default)]
pub struct ScoreTable {
    source: Option<ScoreSource>,
    scores: HashMap<String, HashMap<String, f64>>,
}

impl ScoreTable {
    pub fn from_jsonl<R: BufRead>(reader: R, source: ScoreSource) -> Result<Self> {
        let mut scores: HashMap<String, HashMap<String, f64>> = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Schema {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScoreRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !rec.score.is_finite() {
                return Err(Error::Schema {
                    line: i + 1,
                    message: "score must be finite".into(),
                });
            }
            scores.entry(rec.query_id).or_default().insert(rec.chunk_id, rec.score);
        }
        Ok(ScoreTable {
            source: Some(source),
            scores,
        })
    }

    /// Score of `chunk_id` for `query_id`; unlisted pairs score 0.
    pub fn get(&self, query_id: &str, chunk_id: &str) -> f64 {
        self.scores
            .get(query_id)
            .and_then(|m| m.get(chunk_id))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn source(&self) -> ScoreSource {
        self.source.unwrap_or(ScoreSource::Retriever)
    }
}

/// Retriever backed by an external score file.
pub struct ExternalScorer<'a> {
    corpus: &'a Corpus,
    table: &'a ScoreTable,
}

impl<'a> ExternalScorer<'a> {
    pub fn new(corpus: &'a Corpus, table: &'a ScoreTable) -> Self {
        ExternalScorer { corpus, table }
    }
}

impl Scorer for ExternalScorer<'_> {
    fn score_kb(&self, query: &Query, kb: &KbId) -> Result<Vec<ScoredChunk>> {
        if !self.corpus.has_kb(kb) {
            return Err(Error::MissingIndex(kb.to_string()));
        }
        let mut out: Vec<ScoredChunk> = self
            .corpus
            .kb_chunks(kb)
            .map(|c| ScoredChunk {
                chunk_id: c.chunk_id.clone(),
                score: self.table.get(&query.query_id, &c.chunk_id),
                source: self.table.source(),
            })
            .collect();
        sort_scored(&mut out);
        Ok(out)
    }

    fn cross_kb_comparable(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityType;
    use proptest::prelude::*;

    fn kb(s: &str) -> KbId {
        KbId::new(s).unwrap()
    }

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            kb: kb("E"),
            doc_id: id.into(),
            path: vec![],
            text: text.into(),
            entities: Default::default(),
            token_len: text.chars().count().max(1),
        }
    }

    fn corpus(chunks: Vec<Chunk>) -> Corpus {
        Corpus::from_chunks(vec![kb("E"), kb("T")], chunks).unwrap()
    }

    #[test]
    fn single_chunk_bigrams() {
        let c = corpus(vec![chunk("a", "abc")]);
        let idx = LexIndex::build(&c, &kb("E"), ScorerConfig::default()).unwrap();
        let terms: Vec<_> = idx.doc_freqs().map(|(t, _)| t.to_string()).collect();
        assert_eq!(terms, vec!["ab", "bc"]);
    }

    #[test]
    fn empty_kb_is_error() {
        let c = corpus(vec![chunk("a", "abc")]);
        assert!(matches!(
            LexIndex::build(&c, &kb("T"), ScorerConfig::default()),
            Err(Error::EmptyKb(_))
        ));
    }

    #[test]
    fn dump_is_deterministic() {
        let c = corpus(vec![chunk("a", "红景天 治疗"), chunk("b", "高原 反应 红景天")]);
        let a = LexIndex::build(&c, &kb("E"), ScorerConfig::default()).unwrap().to_json().unwrap();
        let b = LexIndex::build(&c, &kb("E"), ScorerConfig::default()).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        assert_eq!(LexIndex::from_json(&a).unwrap().to_json().unwrap(), a);
    }

    #[test]
    fn zero_overlap_orders_by_id() {
        let c = corpus(vec![chunk("c", "xyz"), chunk("a", "uvw"), chunk("b", "rst")]);
        let idx = LexIndex::build(&c, &kb("E"), ScorerConfig::default()).unwrap();
        let out = idx.score(&Query::new("q", "不相关"));
        assert!(out.iter().all(|s| s.score == 0.0));
        let ids: Vec<_> = out.iter().map(|s| s.chunk_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn identical_text_ranks_first() {
        let c = corpus(vec![chunk("a", "mnop"), chunk("b", "红景天根茎"), chunk("c", "qrst")]);
        let idx = LexIndex::build(&c, &kb("E"), ScorerConfig::default()).unwrap();
        let out = idx.score(&Query::new("q", "红景天根茎"));
        assert_eq!(out[0].chunk_id, "b");
        assert!(out[0].score > out[1].score);
    }

    /// Direct evaluation of the documented formula on a 5-chunk KB.
    #[test]
    fn toy_kb_matches_hand_formula() {
        let texts = ["abab", "abc", "xyz", "bcd bc", "a"];
        let chunks: Vec<_> = texts.iter().enumerate().map(|(i, t)| chunk(&format!("c{i}"), t)).collect();
        let c = corpus(chunks);
        let idx = LexIndex::build(&c, &kb("E"), ScorerConfig::default()).unwrap();
        let out = idx.score(&Query::new("q", "abc"));

        // terms per doc, by hand
        let doc_terms: [&[&str]; 5] = [&["ab", "ba", "ab"], &["ab", "bc"], &["xy", "yz"], &["bc", "cd", "bc"], &["a"]];
        let avg = doc_terms.iter().map(|d| d.len()).sum::<usize>() as f64 / 5.0;
        let (k1, b) = (1.2, 0.75);
        let df = |t: &str| doc_terms.iter().filter(|d| d.contains(&t)).count() as f64;
        let idf = |t: &str| ((5.0 - df(t) + 0.5) / (df(t) + 0.5) + 1.0f64).ln();
        for (i, d) in doc_terms.iter().enumerate() {
            let mut s = 0.0;
            for q in ["ab", "bc"] {
                let tf = d.iter().filter(|&&t| t == q).count() as f64;
                if tf > 0.0 {
                    s += idf(q) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg));
                }
            }
            let got = out.iter().find(|x| x.chunk_id == format!("c{i}")).unwrap().score;
            assert!((got - s).abs() < 1e-12, "c{i}: {got} vs {s}");
        }
    }

    #[test]
    fn entity_names_are_terms() {
        let mut a = chunk("a", "甲乙");
        a.entities.insert(EntityRef::new("丙丁", EntityType::Drug).unwrap());
        let c = corpus(vec![a, chunk("b", "丙丁")]);
        let idx = LexIndex::build(&c, &kb("E"), ScorerConfig::default()).unwrap();
        let q = Query::new("q", "无关").with_entities([EntityRef::new("丙丁", EntityType::Drug).unwrap()]);
        let out = idx.score(&q);
        assert_eq!(out[0].chunk_id, "a");
        assert_eq!(out[1].score, 0.0);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_values(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_values(&[7.0, 7.0, 7.0]).unwrap(), vec![0.5; 3]);
        assert!(matches!(normalize_values(&[]), Err(Error::EmptyList)));
        assert!(matches!(normalize(&[]), Err(Error::EmptyList)));
    }

    #[test]
    fn external_scores_default_to_zero() {
        let c = corpus(vec![chunk("a", "x"), chunk("b", "y")]);
        let table = ScoreTable::from_jsonl(
            std::io::Cursor::new("{\"query_id\":\"q\",\"chunk_id\":\"b\",\"score\":2.5}\n"),
            ScoreSource::Retriever,
        )
        .unwrap();
        let s = ExternalScorer::new(&c, &table);
        let out = s.score_kb(&Query::new("q", "z"), &kb("E")).unwrap();
        assert_eq!(out[0].chunk_id, "b");
        assert_eq!(out[0].score, 2.5);
        assert_eq!(out[1].score, 0.0);
        assert!(!s.cross_kb_comparable());
    }

    proptest! {
        #[test]
        fn normalize_affine_invariant(
            xs in prop::collection::vec(-1e3f64..1e3, 1..30),
            a in 0.01f64..100.0,
            b in -1e3f64..1e3,
        ) {
            let n1 = normalize_values(&xs).unwrap();
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let n2 = normalize_values(&ys).unwrap();
            for (p, q) in n1.iter().zip(&n2) {
                prop_assert!((p - q).abs() < 1e-6);
                prop_assert!((0.0..=1.0).contains(p));
            }
        }

        /// Swapping a non-query term for a query term at equal length never
        /// lowers a chunk's score.
        #[test]
        fn tf_weight_monotone(tf in 0u32..20, len in 1u32..200, avg in 1.0f64..100.0) {
            let cfg = ScorerConfig::default();
            let lo = bm25_tf(tf as f64, len as f64, avg, &cfg);
            let hi = bm25_tf(tf as f64 + 1.0, len as f64, avg, &cfg);
            prop_assert!(hi >= lo);
        }
    }
}
