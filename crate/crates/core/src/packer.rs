//! Coverage-aware evidence packing under a token budget.
//!
//! [`pack`] is the two-phase greedy: first one chunk per required KB, then a
//! fill pass in ranked order with a per-document cap. [`brute_force_pack`]
//! solves the same constrained selection exactly for small inputs and serves
//! as a test oracle.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::KbId;
use crate::error::{Error, Result};

pub const BRUTE_FORCE_MAX: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackConfig {
    pub token_budget: usize,
    pub doc_cap: usize,
    /// Citation cutoff K used when reporting the head of the evidence list.
    pub cutoff: usize,
}

impl Default for PackConfig {
    fn default() -> Self {
        PackConfig {
            token_budget: 2048,
            doc_cap: 2,
            cutoff: 5,
        }
    }
}

impl PackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_budget == 0 {
            return Err(Error::Config("token_budget must be > 0".into()));
        }
        if self.doc_cap == 0 {
            return Err(Error::Config("doc_cap must be >= 1".into()));
        }
        if self.cutoff == 0 {
            return Err(Error::Config("cutoff must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackItem {
    pub chunk_id: String,
    pub kb: KbId,
    pub doc_id: String,
    pub tokens: usize,
    pub s_final: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackedEvidence {
    pub evidence: Vec<PackItem>,
    pub total_tokens: usize,
    pub objective: f64,
    pub covered_kbs: BTreeSet<KbId>,
    pub coverage_violations: BTreeSet<KbId>,
    /// Coverage picks that had to exceed the per-document cap.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cap_overrides: Vec<String>,
}

impl PackedEvidence {
    fn from_selection(items: &[&PackItem], required: &[KbId], cap_overrides: Vec<String>) -> Self {
        let evidence: Vec<PackItem> = items.iter().map(|&i| i.clone()).collect();
        let covered_kbs: BTreeSet<KbId> = evidence.iter().map(|i| i.kb.clone()).collect();
        let coverage_violations = required.iter().filter(|k| !covered_kbs.contains(*k)).cloned().collect();
        PackedEvidence {
            total_tokens: evidence.iter().map(|i| i.tokens).sum(),
            objective: evidence.iter().map(|i| i.s_final).sum(),
            evidence,
            covered_kbs,
            coverage_violations,
            cap_overrides,
        }
    }

    /// Result for an empty ranked list: nothing selected, every required KB
    /// recorded as a violation.
    pub fn empty(required: &[KbId]) -> Self {
        PackedEvidence::from_selection(&[], required, Vec::new())
    }

    pub fn ids(&self) -> Vec<&str> {
        self.evidence.iter().map(|i| i.chunk_id.as_str()).collect()
    }
}

fn better(a: &PackItem, b: &PackItem) -> bool {
    a.s_final > b.s_final || (a.s_final == b.s_final && a.chunk_id < b.chunk_id)
}

/// Greedy packing. `required` is visited in the given order (callers pass
/// required KBs sorted by routing score). `ranked` is walked in order during
/// the fill phase.
pub fn pack(ranked: &[PackItem], required: &[KbId], config: &PackConfig) -> Result<PackedEvidence> {
    if ranked.is_empty() {
        return Err(Error::EmptyRankedList);
    }
    let mut chosen = vec![false; ranked.len()];
    let mut order: Vec<usize> = Vec::new();
    let mut used = 0usize;
    let mut per_doc: HashMap<&str, usize> = HashMap::new();
    let mut overrides = Vec::new();

    // Phase 1: one chunk per required KB.
    for k in required {
        let mut best_capped: Option<usize> = None;
        let mut best_any: Option<usize> = None;
        for (i, item) in ranked.iter().enumerate() {
            if chosen[i] || &item.kb != k || used + item.tokens > config.token_budget {
                continue;
            }
            if best_any.is_none_or(|j| better(item, &ranked[j])) {
                best_any = Some(i);
            }
            let under_cap = per_doc.get(item.doc_id.as_str()).copied().unwrap_or(0) < config.doc_cap;
            if under_cap && best_capped.is_none_or(|j| better(item, &ranked[j])) {
                best_capped = Some(i);
            }
        }
        let pick = match (best_capped, best_any) {
            (Some(i), _) => Some(i),
            (None, Some(i)) => {
                overrides.push(ranked[i].chunk_id.clone());
                Some(i)
            }
            (None, None) => None,
        };
        if let Some(i) = pick {
            chosen[i] = true;
            order.push(i);
            used += ranked[i].tokens;
            *per_doc.entry(ranked[i].doc_id.as_str()).or_default() += 1;
        }
    }

    // Phase 2: fill by ranked order.
    for (i, item) in ranked.iter().enumerate() {
        if chosen[i] || used + item.tokens > config.token_budget {
            continue;
        }
        let cnt = per_doc.entry(item.doc_id.as_str()).or_default();
        if *cnt < config.doc_cap {
            *cnt += 1;
            chosen[i] = true;
            order.push(i);
            used += item.tokens;
        }
    }

    let picked: Vec<&PackItem> = order.iter().map(|&i| &ranked[i]).collect();
    let packed = PackedEvidence::from_selection(&picked, required, overrides);
    debug_assert!(packed.total_tokens <= config.token_budget);
    Ok(packed)
}

/// Exact solver by subset enumeration. Maximizes the summed score subject to
/// the budget, the doc cap and coverage; ties go to the lexicographically
/// smallest sorted id list. When no subset covers every required KB, the best
/// budget- and cap-feasible subset is returned with its violations.
pub fn brute_force_pack(ranked: &[PackItem], required: &[KbId], config: &PackConfig) -> Result<PackedEvidence> {
    let n = ranked.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge {
            got: n,
            max: BRUTE_FORCE_MAX,
        });
    }
    if n == 0 {
        return Err(Error::EmptyRankedList);
    }
    let doc_ix: HashMap<&str, usize> = {
        let mut m = HashMap::new();
        for it in ranked {
            let next = m.len();
            m.entry(it.doc_id.as_str()).or_insert(next);
        }
        m
    };
    let docs: Vec<usize> = ranked.iter().map(|it| doc_ix[it.doc_id.as_str()]).collect();

    // (covers, objective, sorted ids, mask)
    let mut best_cover: Option<(f64, Vec<&str>, u32)> = None;
    let mut best_any: Option<(f64, Vec<&str>, u32)> = None;
    let mut counts = vec![0usize; doc_ix.len()];
    for mask in 0u32..(1u32 << n) {
        let mut tokens = 0usize;
        let mut obj = 0.0;
        counts.iter_mut().for_each(|c| *c = 0);
        let mut ok = true;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                tokens += ranked[i].tokens;
                obj += ranked[i].s_final;
                counts[docs[i]] += 1;
                if tokens > config.token_budget || counts[docs[i]] > config.doc_cap {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let covers = required
            .iter()
            .all(|k| (0..n).any(|i| mask & (1 << i) != 0 && &ranked[i].kb == k));
        let slot = if covers { &mut best_cover } else { &mut best_any };
        let replace = match slot {
            None => true,
            Some((o, ids, _)) => {
                if obj > *o + 1e-12 {
                    true
                } else if obj >= *o - 1e-12 {
                    let mut cand: Vec<&str> = (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| ranked[i].chunk_id.as_str())
                        .collect();
                    cand.sort_unstable();
                    cand < *ids
                } else {
                    false
                }
            }
        };
        if replace {
            let mut ids: Vec<&str> = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ranked[i].chunk_id.as_str())
                .collect();
            ids.sort_unstable();
            *slot = Some((obj, ids, mask));
        }
    }
    let (_, _, mask) = best_cover
        .or(best_any)
        .expect("the empty subset is always feasible");
    let picked: Vec<&PackItem> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| &ranked[i]).collect();
    Ok(PackedEvidence::from_selection(&picked, required, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kb(s: &str) -> KbId {
        KbId::new(s).unwrap()
    }

    fn item(id: &str, k: &str, doc: &str, tokens: usize, s: f64) -> PackItem {
        PackItem {
            chunk_id: id.into(),
            kb: kb(k),
            doc_id: doc.into(),
            tokens,
            s_final: s,
        }
    }

    fn cfg(t: usize, cap: usize) -> PackConfig {
        PackConfig {
            token_budget: t,
            doc_cap: cap,
            cutoff: 5,
        }
    }

    #[test]
    fn trivially_satisfied_coverage() {
        let ranked = vec![item("t1", "T", "d1", 10, 0.9), item("e1", "E", "d2", 10, 0.8), item("p1", "P", "d3", 10, 0.7)];
        let out = pack(&ranked, &[kb("T")], &cfg(100, 2)).unwrap();
        assert_eq!(out.ids(), vec!["t1", "e1", "p1"]);
        assert!(out.coverage_violations.is_empty());
    }

    #[test]
    fn oversized_kb_recorded_as_violation() {
        let ranked = vec![
            item("t1", "T", "d1", 500, 0.9),
            item("p1", "P", "d2", 10, 0.8),
            item("e1", "E", "d3", 10, 0.7),
        ];
        let out = pack(&ranked, &[kb("T"), kb("P")], &cfg(100, 2)).unwrap();
        assert_eq!(out.coverage_violations, [kb("T")].into_iter().collect());
        assert_eq!(out.ids(), vec!["p1", "e1"]);
    }

    #[test]
    fn empty_ranked_is_error() {
        assert!(matches!(pack(&[], &[], &cfg(10, 1)), Err(Error::EmptyRankedList)));
        assert!(matches!(brute_force_pack(&[], &[], &cfg(10, 1)), Err(Error::EmptyRankedList)));
    }

    /// 10 candidates, T_max = 120, C_doc = 2, required {P, T} in that order.
    /// Expected list from a line-by-line trace of the algorithm:
    ///  Phase 1, P: best P that fits is p1 (0.80, 30 tok)          -> T=30, cnt(B)=1
    ///  Phase 1, T: best T is t1 (0.70, 40 tok)                     -> T=70, cnt(C)=1
    ///  Phase 2: e1 (0.95, 25) fits, cnt(A)=0                       -> T=95, cnt(A)=1
    ///           e2 (0.90, 20) fits, cnt(A)=1<2                     -> T=115, cnt(A)=2
    ///           p1 chosen; e3 (0.85, 5) doc A full                 -> skip
    ///           e4 (0.75, 10) 115+10>120                           -> skip
    ///           t1 chosen; p2 (0.60, 5) doc B cnt 1                -> T=120, cnt(B)=2
    ///           t2 (0.50, 1) 121>120                               -> skip
    ///           t3, p3 do not fit                                  -> skip
    #[test]
    fn ten_candidate_trace() {
        let ranked = vec![
            item("e1", "E", "A", 25, 0.95),
            item("e2", "E", "A", 20, 0.90),
            item("e3", "E", "A", 5, 0.85),
            item("p1", "P", "B", 30, 0.80),
            item("e4", "E", "D", 10, 0.75),
            item("t1", "T", "C", 40, 0.70),
            item("p2", "P", "B", 5, 0.60),
            item("t2", "T", "C", 1, 0.50),
            item("t3", "T", "C", 50, 0.40),
            item("p3", "P", "E", 70, 0.30),
        ];
        let out = pack(&ranked, &[kb("P"), kb("T")], &cfg(120, 2)).unwrap();
        assert_eq!(out.ids(), vec!["p1", "t1", "e1", "e2", "p2"]);
        assert_eq!(out.total_tokens, 120);
        assert!((out.objective - (0.80 + 0.70 + 0.95 + 0.90 + 0.60)).abs() < 1e-12);
        let oracle = brute_force_pack(&ranked, &[kb("P"), kb("T")], &cfg(120, 2)).unwrap();
        assert!(oracle.objective >= out.objective - 1e-12);
        assert!(oracle.coverage_violations.is_empty());
    }

    #[test]
    fn phase_one_cap_override_is_flagged() {
        let ranked = vec![item("t1", "T", "X", 5, 0.9), item("p1", "P", "X", 5, 0.8)];
        let out = pack(&ranked, &[kb("T"), kb("P")], &cfg(100, 1)).unwrap();
        assert_eq!(out.ids(), vec!["t1", "p1"]);
        assert_eq!(out.cap_overrides, vec!["p1".to_string()]);
    }

    #[test]
    fn brute_force_examples() {
        let one = vec![item("t1", "T", "d", 10, 0.4), item("e1", "E", "d2", 100, 0.9)];
        let out = brute_force_pack(&one, &[kb("T")], &cfg(50, 2)).unwrap();
        assert_eq!(out.ids(), vec!["t1"]);

        let all = vec![item("a", "E", "1", 5, 0.3), item("b", "T", "2", 5, 0.2), item("c", "P", "3", 5, 0.1)];
        let out = brute_force_pack(&all, &[], &cfg(100, 2)).unwrap();
        assert_eq!(out.ids(), vec!["a", "b", "c"]);

        let big: Vec<_> = (0..21).map(|i| item(&format!("c{i}"), "E", "d", 1, 0.1)).collect();
        assert!(matches!(brute_force_pack(&big, &[], &cfg(10, 2)), Err(Error::TooLarge { got: 21, .. })));
    }

    #[test]
    fn brute_force_reports_infeasible_coverage() {
        let ranked = vec![item("t1", "T", "d", 500, 0.9), item("e1", "E", "d2", 5, 0.1)];
        let out = brute_force_pack(&ranked, &[kb("T")], &cfg(100, 2)).unwrap();
        assert_eq!(out.ids(), vec!["e1"]);
        assert_eq!(out.coverage_violations, [kb("T")].into_iter().collect());
    }

    #[test]
    fn greedy_is_not_optimal() {
        // one big high scorer blocks two mid scorers
        let ranked = vec![item("a", "E", "1", 10, 0.9), item("b", "E", "2", 6, 0.6), item("c", "E", "3", 6, 0.6)];
        let g = pack(&ranked, &[], &cfg(12, 2)).unwrap();
        let o = brute_force_pack(&ranked, &[], &cfg(12, 2)).unwrap();
        assert_eq!(g.ids(), vec!["a"]);
        assert_eq!(o.ids(), vec!["b", "c"]);
    }
}
