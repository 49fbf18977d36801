//! End-to-end pipeline: pool, consolidate, fuse, pack.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aligngraph::{
    fuse_and_rank, graph_support, seed_entities, AlignmentGraph, BridgeMode, FusionConfig, FusionInput, RankedEntry,
};
use crate::consolidate::{base_scores, dedup_and_cap, expand, sort_by_base, Candidate, ConsolidateConfig, Origin, PoolChunk};
use crate::corpus::{Corpus, EntityRef, KbId, Query};
use crate::daks::{rank_kbs, route, DaksConfig, PoolEntry, RoutingDecision};
use crate::error::{Error, Result};
use crate::evalkit::{EvalConfig, EvidenceRef};
use crate::packer::{pack, PackConfig, PackItem, PackedEvidence};
use crate::scorers::{ExternalScorer, LexicalScorer, ScoreSource, ScoreTable, ScoredChunk, Scorer, ScorerConfig};

/// One method row of the evaluation tables.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    SingleKb(KbId),
    Merged,
    Uniform,
    Daks,
    NaiveConcat,
    ScoreOnlyRerank,
    DaksGraphFusion,
    DaksGraphFull,
    GraphFusionOnly,
}

impl Strategy {
    /// Every method row, with one single-KB row per KB.
    pub fn all(kbs: &[KbId]) -> Vec<Strategy> {
        let mut out: Vec<Strategy> = kbs.iter().cloned().map(Strategy::SingleKb).collect();
        out.extend([
            Strategy::Merged,
            Strategy::Uniform,
            Strategy::NaiveConcat,
            Strategy::Daks,
            Strategy::ScoreOnlyRerank,
            Strategy::GraphFusionOnly,
            Strategy::DaksGraphFusion,
            Strategy::DaksGraphFull,
        ]);
        out
    }

    /// File-system safe name.
    pub fn dir_name(&self) -> String {
        self.to_string().replace(':', "-")
    }

    fn pool_kind(&self) -> PoolKind {
        match self {
            Strategy::SingleKb(_) => PoolKind::Single,
            Strategy::Merged => PoolKind::Merged,
            Strategy::Uniform | Strategy::GraphFusionOnly => PoolKind::Uniform,
            _ => PoolKind::Routed,
        }
    }

    /// Stages this strategy runs, checked against the config flags.
    pub fn plan(&self, config: &PipelineConfig) -> Result<Plan> {
        let base = Plan {
            consolidate: true,
            ranker: false,
            fusion: false,
            bridge: false,
            coverage: false,
            doc_cap: true,
        };
        let ranker = config.flags.enable_ranker;
        let plan = match self {
            Strategy::SingleKb(_) | Strategy::Merged | Strategy::Uniform | Strategy::Daks => base,
            Strategy::NaiveConcat => Plan {
                consolidate: false,
                doc_cap: false,
                ..base
            },
            Strategy::ScoreOnlyRerank => {
                if !ranker {
                    return Err(Error::Config("score_only_rerank needs enable_ranker".into()));
                }
                Plan { ranker: true, ..base }
            }
            Strategy::DaksGraphFusion | Strategy::GraphFusionOnly => Plan {
                ranker,
                fusion: true,
                coverage: true,
                ..base
            },
            Strategy::DaksGraphFull => {
                if !config.flags.enable_bridge || config.fusion.bridge == BridgeMode::Off {
                    return Err(Error::Config(
                        "daks_graph_full needs enable_bridge and a fusion.bridge mode other than off".into(),
                    ));
                }
                Plan {
                    ranker,
                    fusion: true,
                    bridge: true,
                    coverage: true,
                    ..base
                }
            }
        };
        Ok(plan)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::SingleKb(k) => return write!(f, "single_kb:{k}"),
            Strategy::Merged => "merged",
            Strategy::Uniform => "uniform",
            Strategy::Daks => "daks",
            Strategy::NaiveConcat => "naive_concat",
            Strategy::ScoreOnlyRerank => "score_only_rerank",
            Strategy::DaksGraphFusion => "daks_graph_fusion",
            Strategy::DaksGraphFull => "daks_graph_full",
            Strategy::GraphFusionOnly => "graph_fusion_only",
        };
        f.write_str(s)
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(k) = s.strip_prefix("single_kb:") {
            return Ok(Strategy::SingleKb(KbId::new(k)?));
        }
        Ok(match s {
            "merged" => Strategy::Merged,
            "uniform" => Strategy::Uniform,
            "daks" => Strategy::Daks,
            "naive_concat" => Strategy::NaiveConcat,
            "score_only_rerank" => Strategy::ScoreOnlyRerank,
            "daks_graph_fusion" => Strategy::DaksGraphFusion,
            "daks_graph_full" => Strategy::DaksGraphFull,
            "graph_fusion_only" => Strategy::GraphFusionOnly,
            other => return Err(Error::Config(format!("unknown strategy `{other}`"))),
        })
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PoolKind {
    Routed,
    Uniform,
    Merged,
    Single,
}

/// Stages enabled for one strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Plan {
    pub consolidate: bool,
    pub ranker: bool,
    pub fusion: bool,
    pub bridge: bool,
    pub coverage: bool,
    pub doc_cap: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    /// Precomputed retriever scores; replaces the built-in lexical scorer.
    pub ret_scores: Option<PathBuf>,
    /// Precomputed ranker scores; replaces the built-in coverage ranker.
    pub rank_scores: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Index and graph artifacts; defaults to `<out_dir>/artifacts`.
    pub artifacts: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            queries: None,
            ret_scores: None,
            rank_scores: None,
            out_dir: PathBuf::from("out"),
            artifacts: None,
        }
    }
}

impl Paths {
    pub fn artifacts_dir(&self) -> PathBuf {
        self.artifacts.clone().unwrap_or_else(|| self.out_dir.join("artifacts"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub enable_ranker: bool,
    pub enable_bridge: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            enable_ranker: true,
            enable_bridge: true,
        }
    }
}

/// Every hyperparameter of every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub kbs: Vec<KbId>,
    pub paths: Paths,
    pub scorer: ScorerConfig,
    pub daks: DaksConfig,
    pub consolidate: ConsolidateConfig,
    pub fusion: FusionConfig,
    pub pack: PackConfig,
    pub eval: EvalConfig,
    pub flags: Flags,
    /// Strategies to run; empty means every method row.
    pub strategies: Vec<Strategy>,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            kbs: ["E", "T", "P"].iter().map(|k| KbId::new(*k).expect("static id")).collect(),
            paths: Paths::default(),
            scorer: ScorerConfig::default(),
            daks: DaksConfig::default(),
            consolidate: ConsolidateConfig::default(),
            fusion: FusionConfig::default(),
            pack: PackConfig::default(),
            eval: EvalConfig::default(),
            flags: Flags::default(),
            strategies: Vec::new(),
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        if self.strategies.is_empty() {
            Strategy::all(&self.kbs)
        } else {
            self.strategies.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kbs.is_empty() {
            return Err(Error::Config("at least one KB is required".into()));
        }
        let distinct: BTreeSet<&KbId> = self.kbs.iter().collect();
        if distinct.len() != self.kbs.len() {
            return Err(Error::Config("duplicate KB in kbs".into()));
        }
        self.scorer.validate()?;
        self.daks.validate(self.kbs.len())?;
        self.consolidate.validate()?;
        self.fusion.validate()?;
        self.pack.validate()?;
        if self.eval.k == 0 {
            return Err(Error::Config("eval.k must be positive".into()));
        }
        for s in self.strategies() {
            if let Strategy::SingleKb(k) = &s {
                if !self.kbs.contains(k) {
                    return Err(Error::Config(format!("{s} names an undeclared KB")));
                }
            }
            s.plan(self)?;
        }
        Ok(())
    }
}

/// Everything one strategy computed for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query_id: String,
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing: Option<RoutingDecision>,
    pub ranking: Vec<KbId>,
    pub budgets: BTreeMap<KbId, usize>,
    pub pool: Vec<PoolEntry>,
    pub candidates: Vec<Candidate>,
    pub seeds: Vec<EntityRef>,
    pub bridge: Vec<String>,
    pub ranked: Vec<RankedEntry>,
    pub required_kbs: Vec<KbId>,
    pub packed: PackedEvidence,
}

impl QueryTrace {
    pub fn evidence_refs(&self) -> Vec<EvidenceRef> {
        self.packed
            .evidence
            .iter()
            .map(|i| EvidenceRef {
                chunk_id: i.chunk_id.clone(),
                kb: i.kb.clone(),
            })
            .collect()
    }
}

/// Query-level scores shared by every strategy.
struct QueryScores {
    per_kb: BTreeMap<KbId, Vec<ScoredChunk>>,
    ret: HashMap<String, f64>,
    rank: Option<HashMap<String, f64>>,
}

pub struct Engine {
    corpus: Corpus,
    config: PipelineConfig,
    lexical: LexicalScorer,
    graph: AlignmentGraph,
    ret_table: Option<ScoreTable>,
    rank_table: Option<ScoreTable>,
}

impl Engine {
    /// Builds the lexical indexes and the alignment graph in memory.
    pub fn new(corpus: Corpus, config: PipelineConfig) -> Result<Self> {
        let lexical = LexicalScorer::build(&corpus, config.scorer)?;
        let graph = AlignmentGraph::build(&corpus);
        Self::from_parts(corpus, config, lexical, graph)
    }

    pub fn from_parts(corpus: Corpus, config: PipelineConfig, lexical: LexicalScorer, graph: AlignmentGraph) -> Result<Self> {
        config.validate()?;
        if corpus.kbs() != config.kbs.as_slice() {
            return Err(Error::Config("corpus KB list differs from config kbs".into()));
        }
        Ok(Engine {
            corpus,
            config,
            lexical,
            graph,
            ret_table: None,
            rank_table: None,
        })
    }

    pub fn with_scores(mut self, ret: Option<ScoreTable>, rank: Option<ScoreTable>) -> Self {
        self.ret_table = ret;
        self.rank_table = rank;
        self
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn graph(&self) -> &AlignmentGraph {
        &self.graph
    }

    pub fn lexical(&self) -> &LexicalScorer {
        &self.lexical
    }

    fn with_retriever<R>(&self, f: impl FnOnce(&dyn Scorer) -> R) -> R {
        match &self.ret_table {
            Some(t) => f(&ExternalScorer::new(&self.corpus, t)),
            None => f(&self.lexical),
        }
    }

    pub fn route(&self, query: &Query) -> Result<RoutingDecision> {
        self.with_retriever(|r| route(&self.corpus, r, query, &self.config.daks))
    }

    fn query_scores(&self, query: &Query, with_rank: bool) -> Result<QueryScores> {
        let mut per_kb = BTreeMap::new();
        let mut ret = HashMap::with_capacity(self.corpus.len());
        for kb in self.corpus.kbs() {
            let list = self.with_retriever(|r| r.score_kb(query, kb))?;
            ret.extend(list.iter().map(|s| (s.chunk_id.clone(), s.score)));
            per_kb.insert(kb.clone(), list);
        }
        let rank = with_rank.then(|| match &self.rank_table {
            Some(t) => self
                .corpus
                .chunks()
                .iter()
                .map(|c| (c.chunk_id.clone(), t.get(&query.query_id, &c.chunk_id)))
                .collect(),
            None => self
                .corpus
                .kbs()
                .iter()
                .flat_map(|kb| self.lexical.coverage_kb(query, kb))
                .map(|s| (s.chunk_id, s.score))
                .collect(),
        });
        Ok(QueryScores { per_kb, ret, rank })
    }

    fn peak_ranking(&self, peaks: &BTreeMap<KbId, f64>) -> Vec<KbId> {
        let scores: BTreeMap<KbId, f64> = self
            .corpus
            .kbs()
            .iter()
            .map(|k| (k.clone(), peaks.get(k).copied().unwrap_or(f64::NEG_INFINITY)))
            .collect();
        rank_kbs(self.corpus.kbs(), &scores)
    }

    fn top<'a>(list: &'a [ScoredChunk], kb: &KbId, n: usize) -> impl Iterator<Item = PoolEntry> + 'a {
        let kb = kb.clone();
        list.iter().take(n).map(move |s| PoolEntry {
            chunk_id: s.chunk_id.clone(),
            kb: kb.clone(),
            score: s.score,
        })
    }

    /// Runs one strategy on one query.
    pub fn run_query(&self, query: &Query, strategy: &Strategy) -> Result<QueryTrace> {
        let plan = strategy.plan(&self.config)?;
        let kbs = self.corpus.kbs();
        let budget = self.config.daks.budget;
        let mut scores = self.query_scores(query, plan.ranker)?;
        let peaks: BTreeMap<KbId, f64> = scores
            .per_kb
            .iter()
            .filter_map(|(k, l)| l.first().map(|s| (k.clone(), s.score)))
            .collect();

        let mut routing = None;
        let (pool, ranking, budgets): (Vec<PoolEntry>, Vec<KbId>, BTreeMap<KbId, usize>) = match strategy.pool_kind() {
            PoolKind::Routed => {
                let d = self.route(query)?;
                let out = (d.dense_pool.clone(), d.ranking.clone(), d.budgets.clone());
                routing = Some(d);
                out
            }
            PoolKind::Uniform => {
                let share = budget / kbs.len();
                let extra = budget % kbs.len();
                let budgets: BTreeMap<KbId, usize> =
                    kbs.iter().enumerate().map(|(i, k)| (k.clone(), share + usize::from(i < extra))).collect();
                let pool = kbs
                    .iter()
                    .flat_map(|k| Self::top(&scores.per_kb[k], k, budgets[k]))
                    .collect();
                (pool, self.peak_ranking(&peaks), budgets)
            }
            PoolKind::Merged => {
                let merged = self.with_retriever(|r| r.score_merged(query, kbs))?;
                let mut merged_peaks = BTreeMap::new();
                let mut budgets: BTreeMap<KbId, usize> = kbs.iter().map(|k| (k.clone(), 0)).collect();
                let mut pool = Vec::with_capacity(budget);
                for s in &merged {
                    let Some(chunk) = self.corpus.get(&s.chunk_id) else { continue };
                    merged_peaks.entry(chunk.kb.clone()).or_insert(s.score);
                    if pool.len() < budget {
                        *budgets.entry(chunk.kb.clone()).or_default() += 1;
                        pool.push(PoolEntry {
                            chunk_id: s.chunk_id.clone(),
                            kb: chunk.kb.clone(),
                            score: s.score,
                        });
                    }
                }
                scores.ret = merged.into_iter().map(|s| (s.chunk_id, s.score)).collect();
                (pool, self.peak_ranking(&merged_peaks), budgets)
            }
            PoolKind::Single => {
                let Strategy::SingleKb(k) = strategy else { unreachable!("single pool") };
                let list = scores.per_kb.get(k).ok_or_else(|| Error::MissingIndex(k.to_string()))?;
                let pool: Vec<PoolEntry> = Self::top(list, k, budget).collect();
                let mut ranking = vec![k.clone()];
                ranking.extend(self.peak_ranking(&peaks).into_iter().filter(|x| x != k));
                let budgets = kbs.iter().map(|x| (x.clone(), if x == k { pool.len() } else { 0 })).collect();
                (pool, ranking, budgets)
            }
        };
        let k_major = ranking[0].clone();
        let mu = self.config.consolidate.mu;

        let pool_chunks: Vec<PoolChunk> = if plan.consolidate {
            expand(&self.corpus, &pool)
        } else {
            pool.iter()
                .map(|p| PoolChunk {
                    chunk_id: p.chunk_id.clone(),
                    kb: p.kb.clone(),
                    origin: Origin::Dense,
                })
                .collect()
        };
        let mut candidates = base_scores(&pool_chunks, &scores.ret, scores.rank.as_ref(), mu)?;
        sort_by_base(&mut candidates);
        if plan.consolidate {
            candidates = dedup_and_cap(&self.corpus, candidates, &self.config.consolidate);
        }

        let required: Vec<KbId> = match &query.gold {
            Some(g) => ranking.iter().filter(|k| g.required_kbs.contains(*k)).cloned().collect(),
            None => vec![k_major.clone()],
        };

        let mut seeds = BTreeSet::new();
        let mut bridge = Vec::new();
        let ranked = if plan.fusion {
            let fusion = &self.config.fusion;
            seeds = seed_entities(query, &candidates, &self.corpus, fusion.seed_count);
            let dist = self.graph.distances_from(&seeds);
            let bridge_on = plan.bridge
                && match fusion.bridge {
                    BridgeMode::Off => false,
                    BridgeMode::Always => true,
                    BridgeMode::CrossKb => required.len() >= 2,
                };
            if bridge_on {
                let present: HashSet<&str> = candidates.iter().map(|c| c.chunk_id.as_str()).collect();
                bridge = self
                    .graph
                    .bridge_from(&dist, fusion.hops)
                    .into_iter()
                    .filter(|id| !present.contains(id.as_str()))
                    .collect();
                if !bridge.is_empty() {
                    let mut union: Vec<PoolChunk> = candidates
                        .iter()
                        .map(|c| PoolChunk {
                            chunk_id: c.chunk_id.clone(),
                            kb: c.kb.clone(),
                            origin: c.origin,
                        })
                        .collect();
                    for id in &bridge {
                        let chunk = self.corpus.get(id).ok_or_else(|| Error::KeyMismatch(id.clone()))?;
                        union.push(PoolChunk {
                            chunk_id: id.clone(),
                            kb: chunk.kb.clone(),
                            origin: Origin::Bridge,
                        });
                    }
                    candidates = base_scores(&union, &scores.ret, scores.rank.as_ref(), mu)?;
                    sort_by_base(&mut candidates);
                }
            }
            let inputs: Vec<FusionInput> = candidates
                .iter()
                .map(|c| FusionInput {
                    chunk_id: c.chunk_id.clone(),
                    kb: c.kb.clone(),
                    s_base: c.s_base,
                    support: graph_support(&self.graph, query, &dist, &c.chunk_id, &k_major, fusion),
                })
                .collect();
            fuse_and_rank(&inputs, fusion.alpha)?
        } else {
            base_only_ranking(&candidates)?
        };

        let items: Vec<PackItem> = ranked
            .iter()
            .map(|r| {
                let chunk = self.corpus.get(&r.chunk_id).ok_or_else(|| Error::KeyMismatch(r.chunk_id.clone()))?;
                Ok(PackItem {
                    chunk_id: r.chunk_id.clone(),
                    kb: r.kb.clone(),
                    doc_id: chunk.doc_id.clone(),
                    tokens: chunk.token_len,
                    s_final: r.s_final,
                })
            })
            .collect::<Result<_>>()?;
        let pack_required: Vec<KbId> = if plan.coverage { required.clone() } else { Vec::new() };
        let mut pack_config = self.config.pack.clone();
        if !plan.doc_cap {
            pack_config.doc_cap = usize::MAX;
        }
        let packed = if items.is_empty() {
            PackedEvidence::empty(&pack_required)
        } else {
            pack(&items, &pack_required, &pack_config)?
        };

        Ok(QueryTrace {
            query_id: query.query_id.clone(),
            strategy: strategy.to_string(),
            routing,
            ranking,
            budgets,
            pool,
            candidates,
            seeds: seeds.into_iter().collect(),
            bridge,
            ranked,
            required_kbs: pack_required,
            packed,
        })
    }

    /// Runs one strategy over every query in parallel; output order follows
    /// `queries`.
    pub fn run(&self, queries: &[Query], strategy: &Strategy) -> Result<Vec<QueryTrace>> {
        strategy.plan(&self.config)?;
        queries.par_iter().map(|q| self.run_query(q, strategy)).collect()
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub fn read_corpus(path: &Path, kbs: Vec<KbId>) -> Result<Corpus> {
    Corpus::from_jsonl(open_reader(path)?, kbs)
}

pub fn read_queries(path: &Path, corpus: &Corpus) -> Result<Vec<Query>> {
    crate::corpus::load_queries(open_reader(path)?, corpus)
}

pub fn read_score_table(path: &Path, source: ScoreSource) -> Result<ScoreTable> {
    ScoreTable::from_jsonl(open_reader(path)?, source)
}

fn required_path<'a>(p: &'a Option<PathBuf>, key: &str, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("paths.{key} is not set (pass {flag})")))
}

impl PipelineConfig {
    pub fn corpus_path(&self) -> Result<&Path> {
        required_path(&self.paths.corpus, "corpus", "--corpus")
    }

    pub fn queries_path(&self) -> Result<&Path> {
        required_path(&self.paths.queries, "queries", "--queries")
    }
}

impl Engine {
    /// Loads the corpus, the prebuilt artifacts and any external score
    /// tables named in `config.paths`.
    pub fn open(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let corpus = read_corpus(config.corpus_path()?, config.kbs.clone())?;
        let (lexical, graph) = crate::artifacts::load(&config.paths.artifacts_dir(), &corpus, config.scorer)?;
        let ret = config
            .paths
            .ret_scores
            .as_deref()
            .map(|p| read_score_table(p, ScoreSource::Retriever))
            .transpose()?;
        let rank = config
            .paths
            .rank_scores
            .as_deref()
            .map(|p| read_score_table(p, ScoreSource::Ranker))
            .transpose()?;
        Ok(Self::from_parts(corpus, config, lexical, graph)?.with_scores(ret, rank))
    }
}

/// Ranked list without graph support: s_final is the normalized base score.
fn base_only_ranking(candidates: &[Candidate]) -> Result<Vec<RankedEntry>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let base: Vec<f64> = candidates.iter().map(|c| c.s_base).collect();
    let hat = crate::scorers::normalize_values(&base)?;
    let mut out: Vec<RankedEntry> = candidates
        .iter()
        .zip(hat)
        .map(|(c, h)| RankedEntry {
            chunk_id: c.chunk_id.clone(),
            kb: c.kb.clone(),
            s_base: c.s_base,
            s_base_hat: h,
            s_g: 0.0,
            s_g_hat: 0.0,
            s_final: h,
            overlap: 0,
            distance: None,
        })
        .collect();
    crate::aligngraph::sort_ranked(&mut out);
    Ok(out)
}

/// One line of `packed.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackedRecord {
    pub query_id: String,
    pub evidence: Vec<PackItem>,
    pub total_tokens: usize,
    pub violations: Vec<KbId>,
}

impl PackedRecord {
    pub fn from_trace(t: &QueryTrace) -> Self {
        PackedRecord {
            query_id: t.query_id.clone(),
            evidence: t.packed.evidence.clone(),
            total_tokens: t.packed.total_tokens,
            violations: t.packed.coverage_violations.iter().cloned().collect(),
        }
    }
}

/// One line of `routing.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub query_id: String,
    pub ranking: Vec<KbId>,
    pub budgets: BTreeMap<KbId, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<KbId, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<BTreeMap<KbId, f64>>,
}

fn safe_file_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let mut f = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut f, &r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Writes traces, `packed.jsonl` and `routing.jsonl` under
/// `<out_dir>/<strategy>/`.
pub fn write_outputs(out_dir: &Path, strategy: &Strategy, traces: &[QueryTrace]) -> Result<PathBuf> {
    let dir = out_dir.join(strategy.dir_name());
    let trace_dir = dir.join("traces");
    std::fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    traces.par_iter().try_for_each(|t| -> Result<()> {
        let path = trace_dir.join(format!("{}.json", safe_file_name(&t.query_id)));
        let mut f = create(&path)?;
        serde_json::to_writer_pretty(&mut f, t)?;
        f.write_all(b"\n").and_then(|_| f.flush()).map_err(|e| Error::io(&path, e))
    })?;
    write_jsonl(&dir.join("packed.jsonl"), traces.iter().map(PackedRecord::from_trace))?;
    write_jsonl(
        &dir.join("routing.jsonl"),
        traces.iter().map(|t| RoutingRecord {
            query_id: t.query_id.clone(),
            ranking: t.ranking.clone(),
            budgets: t.budgets.clone(),
            scores: t.routing.as_ref().map(|r| r.scores.clone()),
            probs: t.routing.as_ref().map(|r| r.probs.clone()),
        }),
    )?;
    Ok(dir)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|_| Error::MissingTraces(path.display().to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Rankings and packed evidence previously written by [`write_outputs`].
pub type RunOutputs = (BTreeMap<String, Vec<KbId>>, BTreeMap<String, Vec<EvidenceRef>>);

pub fn read_outputs(out_dir: &Path, strategy: &Strategy) -> Result<RunOutputs> {
    let dir = out_dir.join(strategy.dir_name());
    let routing: Vec<RoutingRecord> = read_jsonl(&dir.join("routing.jsonl"))?;
    let packed: Vec<PackedRecord> = read_jsonl(&dir.join("packed.jsonl"))?;
    let rankings = routing.into_iter().map(|r| (r.query_id, r.ranking)).collect();
    let evidence = packed
        .into_iter()
        .map(|p| {
            let refs = p
                .evidence
                .into_iter()
                .map(|i| EvidenceRef {
                    chunk_id: i.chunk_id,
                    kb: i.kb,
                })
                .collect();
            (p.query_id, refs)
        })
        .collect();
    Ok((rankings, evidence))
}
