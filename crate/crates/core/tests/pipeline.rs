mod common;

use std::collections::BTreeMap;

use polykb::corpus::{Query, QuestionType};
use polykb::evalkit::{evaluate_strategy, EvalConfig, EvidenceRef};
use polykb::pipeline::{read_outputs, write_outputs, Engine, PipelineConfig, Strategy};
use polykb::scorers::{ScoreSource, ScoreTable};
use polykb::Error;

use common::{ent, etp, evaluate, gold, golds, kb, toy_corpus};
use polykb::corpus::EntityType;

fn queries() -> Vec<Query> {
    vec![
        Query {
            gold: Some(gold("E", &["E"], &["E-1"], QuestionType::Definition)),
            ..Query::new("def", "甘草 味甘").with_entities([ent("甘草", EntityType::Drug)])
        },
        Query {
            gold: Some(gold("T", &["T", "P"], &["T-1", "P-1"], QuestionType::CrossKbSynthesis)),
            ..Query::new("cross", "四君子汤 脾虚").with_entities([ent("四君子汤", EntityType::Formula)])
        },
    ]
}

fn engine() -> Engine {
    Engine::new(toy_corpus(), PipelineConfig::default()).unwrap()
}

#[test]
fn every_strategy_runs_within_budget() {
    let e = engine();
    for s in Strategy::all(&etp()) {
        for t in e.run(&queries(), &s).unwrap() {
            assert!(t.packed.total_tokens <= e.config().pack.token_budget, "{s}");
            assert!(!t.packed.evidence.is_empty(), "{s}/{}", t.query_id);
            assert_eq!(t.strategy, s.to_string());
        }
    }
}

#[test]
fn merged_skips_routing() {
    let t = engine().run_query(&queries()[0], &Strategy::Merged).unwrap();
    assert!(t.routing.is_none());
    assert_eq!(t.pool.len(), 6);
    assert_eq!(t.budgets.values().sum::<usize>(), 6);
}

#[test]
fn naive_concat_has_no_coverage_phase_or_fusion() {
    let t = engine().run_query(&queries()[1], &Strategy::NaiveConcat).unwrap();
    assert!(t.required_kbs.is_empty());
    assert!(t.seeds.is_empty() && t.bridge.is_empty());
    assert!(t.ranked.iter().all(|r| r.s_g == 0.0));
    let finals: Vec<f64> = t.packed.evidence.iter().map(|i| i.s_final).collect();
    assert!(finals.windows(2).all(|w| w[0] >= w[1]), "{finals:?}");
}

#[test]
fn full_strategy_covers_required_kbs_and_records_scores() {
    let e = engine();
    let alpha = e.config().fusion.alpha;
    let t = e.run_query(&queries()[1], &Strategy::DaksGraphFull).unwrap();
    assert_eq!(t.required_kbs.len(), 2);
    assert!(t.packed.coverage_violations.is_empty());
    let routing = t.routing.as_ref().unwrap();
    assert_eq!(routing.features.len(), 3);
    assert_eq!(routing.budgets.values().sum::<usize>(), 30);
    assert!(!t.seeds.is_empty());
    for r in &t.ranked {
        let want = alpha * r.s_base_hat + (1.0 - alpha) * r.s_g_hat;
        assert!((r.s_final - want).abs() < 1e-9, "{}", r.chunk_id);
    }
    let json = serde_json::to_value(&t).unwrap();
    for key in ["routing", "budgets", "candidates", "ranked", "packed", "seeds", "bridge"] {
        assert!(json.get(key).is_some(), "trace lacks {key}");
    }
}

#[test]
fn bridge_pulls_in_unretrieved_chunks() {
    let mut cfg = PipelineConfig::default();
    cfg.daks.budget = 2;
    cfg.daks.min_budget = 0;
    cfg.daks.probe_size = 1;
    cfg.daks.top_m = 1;
    let e = Engine::new(toy_corpus(), cfg).unwrap();
    let full = e.run_query(&queries()[1], &Strategy::DaksGraphFull).unwrap();
    let fusion = e.run_query(&queries()[1], &Strategy::DaksGraphFusion).unwrap();
    assert!(fusion.bridge.is_empty());
    assert!(!full.bridge.is_empty());
    for id in &full.bridge {
        assert!(full.candidates.iter().any(|c| &c.chunk_id == id));
        assert!(!fusion.candidates.iter().any(|c| &c.chunk_id == id));
    }
}

#[test]
fn flag_conflicts_are_rejected() {
    let mut cfg = PipelineConfig::default();
    cfg.flags.enable_bridge = false;
    cfg.strategies = vec![Strategy::DaksGraphFull];
    assert!(matches!(Engine::new(toy_corpus(), cfg), Err(Error::Config(_))));
    let mut cfg = PipelineConfig::default();
    cfg.flags.enable_ranker = false;
    let e = Engine::new(
        toy_corpus(),
        PipelineConfig {
            strategies: vec![Strategy::Daks],
            ..cfg
        },
    )
    .unwrap();
    assert!(matches!(e.run(&queries(), &Strategy::ScoreOnlyRerank), Err(Error::Config(_))));
}

#[test]
fn external_scores_drive_routing() {
    let rows: String = ["T-1", "T-2"]
        .iter()
        .map(|c| format!("{{\"query_id\":\"def\",\"chunk_id\":\"{c}\",\"score\":9.0}}\n"))
        .collect();
    let table = ScoreTable::from_jsonl(rows.as_bytes(), ScoreSource::Retriever).unwrap();
    let e = engine().with_scores(Some(table), None);
    let d = e.route(&queries()[0]).unwrap();
    assert_eq!(d.ranking[0], kb("T"));
    assert!(d.budgets[&kb("T")] > d.budgets[&kb("E")]);
}

#[test]
fn perfect_evidence_scores_one_and_empty_scores_zero() {
    let qs = queries();
    let g = golds(&qs);
    let rankings: BTreeMap<String, Vec<_>> =
        g.iter().map(|(q, g)| (q.clone(), vec![g.primary_kb.clone()])).collect();
    let corpus = toy_corpus();
    let perfect: BTreeMap<String, Vec<EvidenceRef>> = g
        .iter()
        .map(|(q, g)| {
            let refs = g
                .evidence_chunk_ids
                .iter()
                .map(|id| EvidenceRef {
                    chunk_id: id.clone(),
                    kb: corpus.get(id).unwrap().kb.clone(),
                })
                .collect();
            (q.clone(), refs)
        })
        .collect();
    let eval = EvalConfig::default();
    let r = evaluate_strategy("oracle", &rankings, &perfect, &g, &eval).unwrap();
    assert_eq!(r.routing.primary_acc, 1.0);
    assert_eq!(r.evidence.ev_recall_at_k, 1.0);
    assert_eq!(r.evidence.ev_ndcg_at_k, 1.0);
    assert_eq!(r.evidence.cross_ev_at_k, 1.0);

    let empty: BTreeMap<String, Vec<EvidenceRef>> = g.keys().map(|q| (q.clone(), Vec::new())).collect();
    let r = evaluate_strategy("empty", &rankings, &empty, &g, &eval).unwrap();
    assert_eq!(r.evidence.ev_recall_at_k, 0.0);
    assert_eq!(r.routing.edr, 0.0);
}

#[test]
fn outputs_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine();
    let qs = queries();
    let s = Strategy::SingleKb(kb("T"));
    let traces = e.run(&qs, &s).unwrap();
    let written = write_outputs(dir.path(), &s, &traces).unwrap();
    assert!(written.ends_with("single_kb-T"));
    assert!(written.join("traces/cross.json").exists());
    let (rankings, packed) = read_outputs(dir.path(), &s).unwrap();
    let direct = evaluate("x", &traces, &qs, &e.config().eval);
    let disk = evaluate_strategy("x", &rankings, &packed, &golds(&qs), &e.config().eval).unwrap();
    assert_eq!(direct, disk);

    let line = std::fs::read_to_string(written.join("packed.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    for key in ["query_id", "evidence", "total_tokens", "violations"] {
        assert!(first.get(key).is_some(), "packed record lacks {key}");
    }
    for key in ["chunk_id", "kb", "doc_id", "s_final", "tokens"] {
        assert!(first["evidence"][0].get(key).is_some(), "evidence item lacks {key}");
    }

    assert!(matches!(read_outputs(dir.path(), &Strategy::Daks), Err(Error::MissingTraces(_))));
}
