//! Routing and evidence metrics at a fixed cutoff.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{GoldLabel, KbId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cutoff K for every @K metric.
    pub k: usize,
    /// The dense KB whose share of the evidence head is the dominance rate.
    pub dense_kb: KbId,
    /// KBs counted as authoritative for the authority-coverage metric.
    pub authoritative: BTreeSet<KbId>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let id = |s: &str| KbId::new(s).expect("static id");
        EvalConfig {
            k: 5,
            dense_kb: id("E"),
            authoritative: [id("T"), id("P")].into_iter().collect(),
        }
    }
}

/// One evidence entry as the metrics see it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub chunk_id: String,
    pub kb: KbId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingMetrics {
    pub primary_acc: f64,
    pub top2_hit: f64,
    pub edr: f64,
    pub auth_cov: f64,
    pub n_queries: usize,
    /// Size of the authority-coverage population.
    pub n_auth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceMetrics {
    pub ev_recall_at_k: f64,
    pub ev_ndcg_at_k: f64,
    pub cross_ev_at_k: f64,
    pub k: usize,
    pub n_queries: usize,
    /// Number of queries with at least two required KBs.
    pub n_cross: usize,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Fraction of the evidence head drawn from `dense_kb`; an empty list scores 0.
pub fn dominance_rate(evidence: &[EvidenceRef], dense_kb: &KbId, k: usize) -> f64 {
    let denom = k.min(evidence.len());
    if denom == 0 {
        return 0.0;
    }
    evidence.iter().take(k).filter(|e| &e.kb == dense_kb).count() as f64 / denom as f64
}

pub fn recall_at_k(ids: &[&str], gold: &BTreeSet<String>, k: usize) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    ids.iter().take(k).filter(|id| gold.contains(**id)).count() as f64 / gold.len() as f64
}

/// Binary-gain NDCG with the ideal list of length min(k, |gold|).
pub fn ndcg_at_k(ids: &[&str], gold: &BTreeSet<String>, k: usize) -> f64 {
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ids
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| gold.contains(**id))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let idcg: f64 = (1..=k.min(gold.len())).map(discount).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Whether every required KB appears among the first `k` evidence KB labels.
pub fn cross_ev_at_k(kbs: &[&KbId], required: &BTreeSet<KbId>, k: usize) -> bool {
    let head: BTreeSet<&KbId> = kbs.iter().take(k).copied().collect();
    required.iter().all(|r| head.contains(r))
}

/// Routing metrics over every query that has a gold label.
pub fn routing_metrics(
    rankings: &BTreeMap<String, Vec<KbId>>,
    golds: &BTreeMap<String, GoldLabel>,
    packed: &BTreeMap<String, Vec<EvidenceRef>>,
    config: &EvalConfig,
) -> Result<RoutingMetrics> {
    let mut primary = Vec::with_capacity(golds.len());
    let mut top2 = Vec::with_capacity(golds.len());
    let mut edr = Vec::with_capacity(golds.len());
    let mut auth = Vec::new();
    for (qid, gold) in golds {
        let ranking = rankings.get(qid).ok_or_else(|| Error::KeyMismatch(qid.clone()))?;
        let evidence = packed.get(qid).ok_or_else(|| Error::KeyMismatch(qid.clone()))?;
        primary.push(if ranking.first() == Some(&gold.primary_kb) { 1.0 } else { 0.0 });
        top2.push(if ranking.iter().take(2).any(|k| k == &gold.primary_kb) { 1.0 } else { 0.0 });
        edr.push(dominance_rate(evidence, &config.dense_kb, config.k));
        if config.authoritative.contains(&gold.primary_kb) {
            let hit = evidence.iter().take(config.k).any(|e| config.authoritative.contains(&e.kb));
            auth.push(if hit { 1.0 } else { 0.0 });
        }
    }
    Ok(RoutingMetrics {
        primary_acc: mean(&primary),
        top2_hit: mean(&top2),
        edr: mean(&edr),
        auth_cov: mean(&auth),
        n_queries: golds.len(),
        n_auth: auth.len(),
    })
}

/// Evidence metrics over every query in `packed`.
pub fn evidence_metrics(
    packed: &BTreeMap<String, Vec<EvidenceRef>>,
    golds: &BTreeMap<String, GoldLabel>,
    k: usize,
) -> Result<EvidenceMetrics> {
    let mut recall = Vec::with_capacity(packed.len());
    let mut ndcg = Vec::with_capacity(packed.len());
    let mut cross = Vec::new();
    for (qid, evidence) in packed {
        let gold = golds.get(qid).ok_or_else(|| Error::GoldMissing(qid.clone()))?;
        let ids: Vec<&str> = evidence.iter().map(|e| e.chunk_id.as_str()).collect();
        recall.push(recall_at_k(&ids, &gold.evidence_chunk_ids, k));
        ndcg.push(ndcg_at_k(&ids, &gold.evidence_chunk_ids, k));
        if gold.required_kbs.len() >= 2 {
            let kbs: Vec<&KbId> = evidence.iter().map(|e| &e.kb).collect();
            cross.push(if cross_ev_at_k(&kbs, &gold.required_kbs, k) { 1.0 } else { 0.0 });
        }
    }
    Ok(EvidenceMetrics {
        ev_recall_at_k: mean(&recall),
        ev_ndcg_at_k: mean(&ndcg),
        cross_ev_at_k: mean(&cross),
        k,
        n_queries: packed.len(),
        n_cross: cross.len(),
    })
}
