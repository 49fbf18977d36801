//! Per-strategy metric reports and their plain-text table.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{evidence_metrics, routing_metrics, EvalConfig, EvidenceMetrics, EvidenceRef, RoutingMetrics};
use crate::corpus::{GoldLabel, KbId};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub routing: RoutingMetrics,
    /// Evidence metrics over every query.
    pub evidence: EvidenceMetrics,
    /// Evidence metrics over queries with at least two required KBs.
    pub cross: EvidenceMetrics,
    /// Dominance rate over the cross-KB subset.
    pub cross_edr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub k: usize,
    pub n_queries: usize,
    pub n_cross: usize,
    pub strategies: Vec<StrategyReport>,
}

pub fn evaluate_strategy(
    strategy: &str,
    rankings: &BTreeMap<String, Vec<KbId>>,
    packed: &BTreeMap<String, Vec<EvidenceRef>>,
    golds: &BTreeMap<String, GoldLabel>,
    config: &EvalConfig,
) -> Result<StrategyReport> {
    let routing = routing_metrics(rankings, golds, packed, config)?;
    let evidence = evidence_metrics(packed, golds, config.k)?;
    let cross_golds: BTreeMap<String, GoldLabel> = golds
        .iter()
        .filter(|(_, g)| g.required_kbs.len() >= 2)
        .map(|(q, g)| (q.clone(), g.clone()))
        .collect();
    let cross_packed: BTreeMap<String, Vec<EvidenceRef>> = packed
        .iter()
        .filter(|(q, _)| cross_golds.contains_key(*q))
        .map(|(q, e)| (q.clone(), e.clone()))
        .collect();
    let cross = evidence_metrics(&cross_packed, &cross_golds, config.k)?;
    let cross_edr = routing_metrics(rankings, &cross_golds, packed, config)?.edr;
    Ok(StrategyReport {
        strategy: strategy.to_string(),
        routing,
        evidence,
        cross,
        cross_edr,
    })
}

impl Report {
    pub fn new(k: usize, strategies: Vec<StrategyReport>) -> Self {
        let (n_queries, n_cross) = strategies
            .first()
            .map_or((0, 0), |s| (s.routing.n_queries, s.cross.n_cross));
        Report {
            k,
            n_queries,
            n_cross,
            strategies,
        }
    }

    pub fn get(&self, strategy: &str) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    /// Aligned text tables: routing, evidence over all queries, and evidence
    /// over the cross-KB subset.
    pub fn to_table(&self) -> String {
        let k = self.k;
        let width = self.strategies.iter().map(|s| s.strategy.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let mut table = |title: String, cols: &[String], rows: Vec<(String, Vec<f64>)>| {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:<width$}", "Method");
            for c in cols {
                let _ = write!(out, "  {c:>11}");
            }
            out.push('\n');
            for (name, vals) in rows {
                let _ = write!(out, "{name:<width$}");
                for v in vals {
                    let _ = write!(out, "  {v:>11.3}");
                }
                out.push('\n');
            }
            out.push('\n');
        };
        table(
            format!("Routing (K={k}, n={})", self.n_queries),
            &["PrimaryAcc".into(), "Top2Hit".into(), "EDR".into(), "AuthCov".into()],
            self.strategies
                .iter()
                .map(|s| {
                    let r = &s.routing;
                    (s.strategy.clone(), vec![r.primary_acc, r.top2_hit, r.edr, r.auth_cov])
                })
                .collect(),
        );
        let ev_cols = [format!("EvRecall@{k}"), format!("EvNDCG@{k}"), format!("CrossEv@{k}"), "EDR".into()];
        table(
            format!("Evidence, all queries (K={k}, n={})", self.n_queries),
            &ev_cols,
            self.strategies
                .iter()
                .map(|s| {
                    let e = &s.evidence;
                    (s.strategy.clone(), vec![e.ev_recall_at_k, e.ev_ndcg_at_k, e.cross_ev_at_k, s.routing.edr])
                })
                .collect(),
        );
        table(
            format!("Evidence, cross-KB queries (K={k}, n={})", self.n_cross),
            &ev_cols,
            self.strategies
                .iter()
                .map(|s| {
                    let e = &s.cross;
                    (s.strategy.clone(), vec![e.ev_recall_at_k, e.ev_ndcg_at_k, e.cross_ev_at_k, s.cross_edr])
                })
                .collect(),
        );
        out
    }
}
