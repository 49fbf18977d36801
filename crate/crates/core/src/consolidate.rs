//! Candidate consolidation between routing and fusion: structural expansion,
//! near-duplicate removal, per-document caps and base-score fusion.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{Corpus, KbId};
use crate::daks::PoolEntry;
use crate::error::{Error, Result};
use crate::scorers::normalize_values;

/// Neutral ranker value used when no ranker is configured.
pub const NEUTRAL_RANK: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Dense,
    Expansion,
    Bridge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsolidateConfig {
    pub mu: f64,
    pub jaccard_dup_threshold: f64,
    pub shingle_size: usize,
    pub doc_cap: usize,
}

impl Default for ConsolidateConfig {
    fn default() -> Self {
        ConsolidateConfig {
            mu: 0.7,
            jaccard_dup_threshold: 0.9,
            shingle_size: 5,
            doc_cap: 3,
        }
    }
}

impl ConsolidateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::Config(format!("mu must be in [0,1], got {}", self.mu)));
        }
        if self.shingle_size == 0 {
            return Err(Error::Config("shingle_size must be > 0".into()));
        }
        if self.doc_cap == 0 {
            return Err(Error::Config("doc_cap must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolChunk {
    pub chunk_id: String,
    pub kb: KbId,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub chunk_id: String,
    pub kb: KbId,
    pub origin: Origin,
    pub s_ret: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_rank: Option<f64>,
    pub s_ret_hat: f64,
    pub s_rank_hat: f64,
    pub s_base: f64,
}

/// Order by (s_base desc, chunk id asc).
pub fn sort_by_base(cands: &mut [Candidate]) {
    cands.sort_by(|a, b| b.s_base.total_cmp(&a.s_base).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
}

/// Pool chunks followed by their structural neighbours, without duplicates.
/// Ids that are not in the corpus are dropped.
pub fn expand(corpus: &Corpus, pool: &[PoolEntry]) -> Vec<PoolChunk> {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut out = Vec::with_capacity(pool.len() * 2);
    for p in pool {
        if corpus.get(&p.chunk_id).is_some() && seen.insert(p.chunk_id.as_str()) {
            out.push(PoolChunk {
                chunk_id: p.chunk_id.clone(),
                kb: p.kb.clone(),
                origin: Origin::Dense,
            });
        }
    }
    for p in pool {
        let Some(chunk) = corpus.get(&p.chunk_id) else { continue };
        for n in corpus.neighbors(chunk) {
            if seen.insert(n.chunk_id.as_str()) {
                out.push(PoolChunk {
                    chunk_id: n.chunk_id.clone(),
                    kb: n.kb.clone(),
                    origin: Origin::Expansion,
                });
            }
        }
    }
    out
}

/// Normalize retriever (and optional ranker) scores within the candidate set
/// and fuse them with weight `mu`.
pub fn base_scores(
    pool: &[PoolChunk],
    ret_scores: &HashMap<String, f64>,
    rank_scores: Option<&HashMap<String, f64>>,
    mu: f64,
) -> Result<Vec<Candidate>> {
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let lookup = |m: &HashMap<String, f64>, id: &str| m.get(id).copied().ok_or_else(|| Error::KeyMismatch(id.to_string()));
    let ret: Vec<f64> = pool.iter().map(|p| lookup(ret_scores, &p.chunk_id)).collect::<Result<_>>()?;
    let ret_hat = normalize_values(&ret)?;
    let (rank, rank_hat): (Vec<Option<f64>>, Vec<f64>) = match rank_scores {
        Some(m) => {
            let raw: Vec<f64> = pool.iter().map(|p| lookup(m, &p.chunk_id)).collect::<Result<_>>()?;
            let hat = normalize_values(&raw)?;
            (raw.into_iter().map(Some).collect(), hat)
        }
        None => (vec![None; pool.len()], vec![NEUTRAL_RANK; pool.len()]),
    };
    Ok(pool
        .iter()
        .enumerate()
        .map(|(i, p)| Candidate {
            chunk_id: p.chunk_id.clone(),
            kb: p.kb.clone(),
            origin: p.origin,
            s_ret: ret[i],
            s_rank: rank[i],
            s_ret_hat: ret_hat[i],
            s_rank_hat: rank_hat[i],
            s_base: mu * ret_hat[i] + (1.0 - mu) * rank_hat[i],
        })
        .collect())
}

/// Character n-gram shingles of the NFC text. Text shorter than `n` is a
/// single shingle.
pub fn shingles(text: &str, n: usize) -> HashSet<String> {
    let chars: Vec<char> = text.nfc().collect();
    if chars.is_empty() {
        return HashSet::new();
    }
    if chars.len() < n {
        return std::iter::once(chars.iter().collect()).collect();
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Drop near-duplicates (keeping the best-scored member of each group), then
/// keep at most `doc_cap` candidates per document. Output is sorted by
/// (s_base desc, chunk id asc).
pub fn dedup_and_cap(corpus: &Corpus, mut candidates: Vec<Candidate>, config: &ConsolidateConfig) -> Vec<Candidate> {
    sort_by_base(&mut candidates);
    let mut kept: Vec<(Candidate, HashSet<String>)> = Vec::with_capacity(candidates.len());
    for c in candidates {
        let text = corpus.get(&c.chunk_id).map_or("", |x| x.text.as_str());
        let sh = shingles(text, config.shingle_size);
        if kept
            .iter()
            .all(|(_, other)| jaccard(&sh, other) < config.jaccard_dup_threshold)
        {
            kept.push((c, sh));
        }
    }
    let mut per_doc: HashMap<String, usize> = HashMap::new();
    kept.into_iter()
        .map(|(c, _)| c)
        .filter(|c| {
            let doc = corpus.get(&c.chunk_id).map_or_else(|| c.chunk_id.clone(), |x| x.doc_id.clone());
            let n = per_doc.entry(doc).or_default();
            *n += 1;
            *n <= config.doc_cap
        })
        .collect()
}
