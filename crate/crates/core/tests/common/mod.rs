#![allow(dead_code)]

use std::collections::BTreeMap;

use polykb::corpus::{compute_token_len, Chunk, Corpus, EntityRef, EntityType, GoldLabel, KbId, Query};
use polykb::evalkit::{evaluate_strategy, EvalConfig, StrategyReport};
use polykb::pipeline::{Engine, QueryTrace, Strategy};

pub fn kb(s: &str) -> KbId {
    KbId::new(s).unwrap()
}

pub fn etp() -> Vec<KbId> {
    ["E", "T", "P"].iter().map(|k| kb(k)).collect()
}

pub fn ent(name: &str, kind: EntityType) -> EntityRef {
    EntityRef::new(name, kind).unwrap()
}

pub fn chunk(id: &str, kb_id: &str, doc: &str, text: &str, entities: &[EntityRef]) -> Chunk {
    Chunk {
        chunk_id: id.into(),
        kb: kb(kb_id),
        doc_id: doc.into(),
        path: vec![doc.into()],
        token_len: compute_token_len(text),
        text: text.into(),
        entities: entities.iter().cloned().collect(),
    }
}

/// Two herbs, each documented in all three KBs, linked through a shared
/// formula entity.
pub fn toy_corpus() -> Corpus {
    let gancao = ent("甘草", EntityType::Drug);
    let huangqi = ent("黄芪", EntityType::Drug);
    let formula = ent("四君子汤", EntityType::Formula);
    let pi = ent("脾虚", EntityType::Disease);
    let chunks = vec![
        chunk("E-1", "E", "e-gancao", "甘草，味甘性平，补脾益气，调和诸药。", &[gancao.clone()]),
        chunk("E-2", "E", "e-huangqi", "黄芪，味甘微温，补气升阳，固表止汗。", &[huangqi.clone()]),
        chunk(
            "T-1",
            "T",
            "t-book",
            "经云脾虚者补之，四君子汤以甘草和中，古方多用之以治脾虚诸证。",
            &[gancao.clone(), formula.clone(), pi.clone()],
        ),
        chunk("T-2", "T", "t-book", "黄芪补气，与人参相须，治气虚乏力。", &[huangqi.clone()]),
        chunk(
            "P-1",
            "P",
            "p-trial",
            "临床研究：四君子汤加黄芪治疗脾虚患者六十例，有效率显著提高。",
            &[formula, huangqi, pi],
        ),
        chunk("P-2", "P", "p-gancao", "甘草酸的药理研究显示其具有抗炎作用。", &[gancao]),
    ];
    Corpus::from_chunks(etp(), chunks).unwrap()
}

pub fn gold(primary: &str, required: &[&str], evidence: &[&str], qt: polykb::corpus::QuestionType) -> GoldLabel {
    GoldLabel {
        primary_kb: kb(primary),
        required_kbs: required.iter().map(|k| kb(k)).collect(),
        evidence_chunk_ids: evidence.iter().map(|s| s.to_string()).collect(),
        question_type: qt,
    }
}

pub fn golds(queries: &[Query]) -> BTreeMap<String, GoldLabel> {
    queries
        .iter()
        .filter_map(|q| q.gold.clone().map(|g| (q.query_id.clone(), g)))
        .collect()
}

pub fn evaluate(name: &str, traces: &[QueryTrace], queries: &[Query], eval: &EvalConfig) -> StrategyReport {
    let rankings = traces.iter().map(|t| (t.query_id.clone(), t.ranking.clone())).collect();
    let packed = traces.iter().map(|t| (t.query_id.clone(), t.evidence_refs())).collect();
    evaluate_strategy(name, &rankings, &packed, &golds(queries), eval).unwrap()
}

pub fn run_and_evaluate(engine: &Engine, queries: &[Query], strategy: &Strategy) -> StrategyReport {
    let traces = engine.run(queries, strategy).unwrap();
    evaluate(&strategy.to_string(), &traces, queries, &engine.config().eval)
}
