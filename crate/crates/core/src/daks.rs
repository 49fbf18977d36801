//! Density-aware KB selection: probe every KB, summarise the probe score
//! distribution into a feature vector, score KBs with an authority prior and
//! split a fixed retrieval budget across KBs with a per-KB floor.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, KbId, Query};
use crate::error::{Error, Result};
use crate::scorers::{normalize_values, ScoredChunk, Scorer};

/// What counts as a distinct unit for the coverage feature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageUnit {
    #[default]
    Documents,
    Sections,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaksConfig {
    /// Probe size L.
    pub probe_size: usize,
    /// Top-M cutoff for the mean and margin features.
    pub top_m: usize,
    /// Total budget B.
    pub budget: usize,
    /// Per-KB floor b_min.
    pub min_budget: usize,
    /// Weights over (peak, top-M mean, margin, entropy, coverage).
    pub weights: [f64; 5],
    /// λ, the authority weight.
    pub authority_weight: f64,
    pub authority: BTreeMap<KbId, f64>,
    /// Softmax temperature τ for budget allocation.
    pub temperature: f64,
    pub coverage_unit: CoverageUnit,
}

impl Default for DaksConfig {
    fn default() -> Self {
        let authority = [("E", 0.0), ("T", 0.3), ("P", 0.3)]
            .into_iter()
            .map(|(k, a)| (KbId::new(k).expect("static id"), a))
            .collect();
        DaksConfig {
            probe_size: 20,
            top_m: 5,
            budget: 30,
            min_budget: 2,
            weights: [1.0, 1.0, 0.5, -0.5, 0.5],
            authority_weight: 1.0,
            authority,
            temperature: 1.0,
            coverage_unit: CoverageUnit::Documents,
        }
    }
}

impl DaksConfig {
    pub fn validate(&self, n_kbs: usize) -> Result<()> {
        if self.probe_size == 0 {
            return Err(Error::Config("probe_size must be > 0".into()));
        }
        if self.top_m == 0 || self.top_m > self.probe_size {
            return Err(Error::Config(format!(
                "top_m must be in [1, probe_size={}], got {}",
                self.probe_size, self.top_m
            )));
        }
        if n_kbs * self.min_budget > self.budget {
            return Err(Error::Config(format!(
                "{} KBs x min_budget {} exceeds budget {}",
                n_kbs, self.min_budget, self.budget
            )));
        }
        if self.authority_weight < 0.0 {
            return Err(Error::Config("authority_weight must be >= 0".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("weights must be finite".into()));
        }
        Ok(())
    }

    pub fn authority_of(&self, kb: &KbId) -> f64 {
        self.authority.get(kb).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbFeatures {
    pub kb: KbId,
    pub peak: f64,
    pub topm_mean: f64,
    pub margin: f64,
    pub entropy: f64,
    pub coverage: f64,
    pub probe: Vec<ScoredChunk>,
}

impl KbFeatures {
    pub fn vector(&self) -> [f64; 5] {
        [self.peak, self.topm_mean, self.margin, self.entropy, self.coverage]
    }

    /// All-zero features for a KB whose probe came back empty.
    pub fn empty(kb: KbId) -> Self {
        KbFeatures {
            kb,
            peak: 0.0,
            topm_mean: 0.0,
            margin: 0.0,
            entropy: 0.0,
            coverage: 0.0,
            probe: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub chunk_id: String,
    pub kb: KbId,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub features: Vec<KbFeatures>,
    pub scores: BTreeMap<KbId, f64>,
    pub ranking: Vec<KbId>,
    pub probs: BTreeMap<KbId, f64>,
    pub budgets: BTreeMap<KbId, usize>,
    pub dense_pool: Vec<PoolEntry>,
    pub k_major: KbId,
}

/// Numerically stable softmax of `xs / tau`.
pub fn softmax(xs: &[f64], tau: f64) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| ((x - max) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Top-`probe_size` chunks of one KB in the standard tie order.
pub fn probe(scorer: &dyn Scorer, query: &Query, kb: &KbId, probe_size: usize) -> Result<Vec<ScoredChunk>> {
    let mut all = scorer.score_kb(query, kb)?;
    all.truncate(probe_size);
    Ok(all)
}

pub fn kb_features(
    kb: &KbId,
    probe: &[ScoredChunk],
    top_m: usize,
    corpus: &Corpus,
    unit: CoverageUnit,
) -> Result<KbFeatures> {
    if probe.is_empty() {
        return Err(Error::EmptyProbe);
    }
    let mut sorted: Vec<f64> = probe.iter().map(|s| s.score).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let m = top_m.clamp(1, sorted.len());
    let peak = sorted[0];
    let topm_mean = sorted[..m].iter().sum::<f64>() / m as f64;
    let margin = peak - sorted[m - 1];
    let h = entropy(&softmax(&sorted, 1.0));

    let mut units = HashSet::new();
    for s in probe {
        let key = match corpus.get(&s.chunk_id) {
            Some(c) => match unit {
                CoverageUnit::Documents => c.doc_id.clone(),
                CoverageUnit::Sections => format!("{}\u{1f}{}", c.doc_id, c.path.join("\u{1f}")),
            },
            None => s.chunk_id.clone(),
        };
        units.insert(key);
    }
    let coverage = units.len() as f64 / probe.len() as f64;

    Ok(KbFeatures {
        kb: kb.clone(),
        peak,
        topm_mean,
        margin,
        entropy: h,
        coverage,
        probe: probe.to_vec(),
    })
}

/// KBs sorted by descending score; ties keep the order of `kbs`.
pub fn rank_kbs(kbs: &[KbId], scores: &BTreeMap<KbId, f64>) -> Vec<KbId> {
    let mut ranking = kbs.to_vec();
    ranking.sort_by(|a, b| scores[b].total_cmp(&scores[a]));
    ranking
}

/// Round-half-up share of the free budget on top of the floor, then the
/// adjustment loop that forces the total to exactly `budget`.
pub fn allocate_budgets(
    ranking: &[KbId],
    probs: &BTreeMap<KbId, f64>,
    budget: usize,
    min_budget: usize,
) -> Result<BTreeMap<KbId, usize>> {
    let n = ranking.len();
    if n * min_budget > budget {
        return Err(Error::Config(format!(
            "{n} KBs x min_budget {min_budget} exceeds budget {budget}"
        )));
    }
    if n == 0 {
        return Ok(BTreeMap::new());
    }
    let free = (budget - n * min_budget) as f64;
    let mut b: Vec<usize> = ranking
        .iter()
        .map(|k| min_budget + (free * probs[k] + 0.5).floor() as usize)
        .collect();

    let mut total: usize = b.iter().sum();
    while total > budget {
        // Largest budget above the floor; on ties the KB later in the ranking gives way.
        let mut pick: Option<usize> = None;
        for i in 0..n {
            if b[i] > min_budget && pick.is_none_or(|j| b[i] >= b[j]) {
                pick = Some(i);
            }
        }
        let i = pick.expect("total above budget implies a budget above the floor");
        b[i] -= 1;
        total -= 1;
    }
    while total < budget {
        let mut pick = 0;
        for i in 1..n {
            if probs[&ranking[i]] > probs[&ranking[pick]] {
                pick = i;
            }
        }
        b[pick] += 1;
        total += 1;
    }
    Ok(ranking.iter().cloned().zip(b).collect())
}

/// Full routing pass for one query.
pub fn route(corpus: &Corpus, scorer: &dyn Scorer, query: &Query, config: &DaksConfig) -> Result<RoutingDecision> {
    let kbs = corpus.kbs();
    if kbs.is_empty() {
        return Err(Error::Config("corpus declares no KBs".into()));
    }
    config.validate(kbs.len())?;

    let mut full: Vec<Vec<ScoredChunk>> = Vec::with_capacity(kbs.len());
    for kb in kbs {
        full.push(scorer.score_kb(query, kb)?);
    }
    let mut probes: Vec<Vec<ScoredChunk>> = full
        .iter()
        .map(|list| list.iter().take(config.probe_size).cloned().collect())
        .collect();

    if !scorer.cross_kb_comparable() {
        let union: Vec<f64> = probes.iter().flatten().map(|s| s.score).collect();
        if !union.is_empty() {
            let norm = normalize_values(&union)?;
            let mut it = norm.into_iter();
            for p in probes.iter_mut() {
                for s in p.iter_mut() {
                    s.score = it.next().expect("same length");
                }
            }
        }
    }

    let mut features = Vec::with_capacity(kbs.len());
    let mut scores = BTreeMap::new();
    for (kb, p) in kbs.iter().zip(&probes) {
        let f = match kb_features(kb, p, config.top_m, corpus, config.coverage_unit) {
            Ok(f) => f,
            Err(Error::EmptyProbe) => KbFeatures::empty(kb.clone()),
            Err(e) => return Err(e),
        };
        let v = f.vector();
        let s: f64 = config.weights.iter().zip(v).map(|(w, x)| w * x).sum::<f64>()
            + config.authority_weight * config.authority_of(kb);
        scores.insert(kb.clone(), s);
        features.push(f);
    }

    let ranking = rank_kbs(kbs, &scores);
    let raw: Vec<f64> = kbs.iter().map(|k| scores[k]).collect();
    let probs: BTreeMap<KbId, f64> = kbs.iter().cloned().zip(softmax(&raw, config.temperature)).collect();
    let budgets = allocate_budgets(&ranking, &probs, config.budget, config.min_budget)?;

    let mut dense_pool = Vec::new();
    for (kb, list) in kbs.iter().zip(&full) {
        dense_pool.extend(list.iter().take(budgets[kb]).map(|s| PoolEntry {
            chunk_id: s.chunk_id.clone(),
            kb: kb.clone(),
            score: s.score,
        }));
    }

    Ok(RoutingDecision {
        features,
        scores,
        k_major: ranking[0].clone(),
        ranking,
        probs,
        budgets,
        dense_pool,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Chunk;
    use crate::scorers::{LexicalScorer, ScorerConfig};

    fn kb(s: &str) -> KbId {
        KbId::new(s).unwrap()
    }

    fn etp() -> Vec<KbId> {
        vec![kb("E"), kb("T"), kb("P")]
    }

    fn probs(ps: &[f64]) -> BTreeMap<KbId, f64> {
        etp().into_iter().zip(ps.iter().copied()).collect()
    }

    fn chunk(id: &str, k: &str, doc: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            kb: kb(k),
            doc_id: doc.into(),
            path: vec![],
            text: text.into(),
            entities: Default::default(),
            token_len: text.chars().count(),
        }
    }

    fn sc(id: &str, s: f64) -> ScoredChunk {
        ScoredChunk::retriever(id, s)
    }

    fn empty_corpus() -> Corpus {
        Corpus::from_chunks(etp(), vec![]).unwrap()
    }

    #[test]
    fn uniform_probe_has_max_entropy() {
        let p: Vec<_> = (0..4).map(|i| sc(&format!("c{i}"), 1.0)).collect();
        let f = kb_features(&kb("E"), &p, 5, &empty_corpus(), CoverageUnit::Documents).unwrap();
        assert!((f.entropy - 4f64.ln()).abs() < 1e-12);
        assert_eq!(f.margin, 0.0);
    }

    #[test]
    fn peak_mean_margin() {
        let p = vec![sc("a", 5.0), sc("b", 1.0), sc("c", 1.0)];
        let f = kb_features(&kb("E"), &p, 2, &empty_corpus(), CoverageUnit::Documents).unwrap();
        assert_eq!((f.peak, f.topm_mean, f.margin), (5.0, 3.0, 4.0));
    }

    #[test]
    fn entropy_of_three_one_zero() {
        // oracle: softmax by hand then -Σ p ln p
        let e: Vec<f64> = [3.0f64, 1.0, 0.0].iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        let oracle: f64 = -e.iter().map(|x| (x / z) * (x / z).ln()).sum::<f64>();
        let p = vec![sc("a", 3.0), sc("b", 1.0), sc("c", 0.0)];
        let f = kb_features(&kb("E"), &p, 2, &empty_corpus(), CoverageUnit::Documents).unwrap();
        assert!((f.entropy - oracle).abs() < 1e-12);
        assert!((f.entropy - 0.5243).abs() < 1e-4);
    }

    #[test]
    fn empty_probe_is_error() {
        assert!(matches!(
            kb_features(&kb("E"), &[], 5, &empty_corpus(), CoverageUnit::Documents),
            Err(Error::EmptyProbe)
        ));
    }

    #[test]
    fn coverage_counts_documents_or_sections() {
        let mut chunks = vec![
            chunk("a", "T", "d1", "x"),
            chunk("b", "T", "d1", "x"),
            chunk("c", "T", "d2", "x"),
            chunk("d", "T", "d2", "x"),
        ];
        chunks[1].path = vec!["s2".into()];
        let c = Corpus::from_chunks(etp(), chunks).unwrap();
        let p = vec![sc("a", 1.0), sc("b", 1.0), sc("c", 1.0), sc("d", 1.0)];
        let docs = kb_features(&kb("T"), &p, 2, &c, CoverageUnit::Documents).unwrap();
        let secs = kb_features(&kb("T"), &p, 2, &c, CoverageUnit::Sections).unwrap();
        assert_eq!(docs.coverage, 0.5);
        assert_eq!(secs.coverage, 0.75);
    }

    #[test]
    fn budgets_without_adjustment() {
        let b = allocate_budgets(&etp(), &probs(&[0.5, 0.3, 0.2]), 30, 2).unwrap();
        assert_eq!(b.values().copied().collect::<Vec<_>>(), vec![14, 7, 9]); // map order E, P, T
        assert_eq!((b[&kb("E")], b[&kb("T")], b[&kb("P")]), (14, 9, 7));
    }

    #[test]
    fn budgets_adjust_up_to_argmax_p() {
        let b = allocate_budgets(&etp(), &probs(&[0.45, 0.35, 0.20]), 10, 1).unwrap();
        assert_eq!((b[&kb("E")], b[&kb("T")], b[&kb("P")]), (5, 3, 2));
    }

    #[test]
    fn budgets_adjust_down_later_kb_gives_way() {
        // free = 3, shares 1.5 each for two KBs and 0 for the third: raw 2+2+0 = 4 > 3.
        let ranking = vec![kb("T"), kb("P"), kb("E")];
        let p: BTreeMap<_, _> = [(kb("T"), 0.5), (kb("P"), 0.5), (kb("E"), 0.0)].into_iter().collect();
        let b = allocate_budgets(&ranking, &p, 3, 0).unwrap();
        assert_eq!((b[&kb("T")], b[&kb("P")], b[&kb("E")]), (2, 1, 0));
    }

    #[test]
    fn infeasible_floor_is_config_error() {
        assert!(matches!(
            allocate_budgets(&etp(), &probs(&[0.3, 0.3, 0.4]), 5, 2),
            Err(Error::Config(_))
        ));
    }

    fn mirrored_corpus() -> Corpus {
        let mut chunks = Vec::new();
        for k in ["E", "T", "P"] {
            for (i, t) in ["红景天 高原", "藏药 红景天 根", "无关 文本"].iter().enumerate() {
                chunks.push(chunk(&format!("{k}{i}"), k, &format!("{k}d{i}"), t));
            }
        }
        Corpus::from_chunks(etp(), chunks).unwrap()
    }

    #[test]
    fn symmetric_kbs_split_evenly() {
        let c = mirrored_corpus();
        let s = LexicalScorer::build(&c, ScorerConfig::default()).unwrap();
        let mut cfg = DaksConfig::default();
        cfg.authority.clear();
        let d = route(&c, &s, &Query::new("q", "红景天"), &cfg).unwrap();
        assert_eq!(d.budgets.values().copied().collect::<Vec<_>>(), vec![10, 10, 10]);
        assert_eq!(d.ranking, etp());
        // each KB only has 3 chunks
        assert_eq!(d.dense_pool.len(), 9);
    }

    #[test]
    fn authority_reorders_equal_kbs() {
        let c = mirrored_corpus();
        let s = LexicalScorer::build(&c, ScorerConfig::default()).unwrap();
        let d = route(&c, &s, &Query::new("q", "红景天"), &DaksConfig::default()).unwrap();
        assert_eq!(d.ranking, vec![kb("T"), kb("P"), kb("E")]);
        assert_eq!(d.k_major, kb("T"));
        assert_eq!(d.budgets.values().sum::<usize>(), 30);
        assert!((d.probs.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_kb_routes_with_zero_features() {
        let chunks = vec![chunk("t1", "T", "d", "红景天"), chunk("p1", "P", "e", "红景天")];
        let c = Corpus::from_chunks(etp(), chunks).unwrap();
        let s = LexicalScorer::build(&c, ScorerConfig::default()).unwrap();
        let d = route(&c, &s, &Query::new("q", "红景天"), &DaksConfig::default()).unwrap();
        assert_eq!(d.budgets.values().sum::<usize>(), 30);
        assert!(d.features[0].probe.is_empty());
        assert_eq!(d.dense_pool.len(), 2);
    }

    #[test]
    fn probe_truncates_and_ties_by_id() {
        let chunks = vec![
            chunk("c", "E", "d1", "甲乙"),
            chunk("a", "E", "d2", "甲乙"),
            chunk("b", "E", "d3", "甲乙"),
        ];
        let c = Corpus::from_chunks(etp(), chunks).unwrap();
        let s = LexicalScorer::build(&c, ScorerConfig::default()).unwrap();
        let q = Query::new("q", "甲乙");
        let all = probe(&s, &q, &kb("E"), 20).unwrap();
        assert_eq!(all.len(), 3);
        let top2: Vec<_> = probe(&s, &q, &kb("E"), 2).unwrap().into_iter().map(|x| x.chunk_id).collect();
        assert_eq!(top2, vec!["a", "b"]);
    }
}
