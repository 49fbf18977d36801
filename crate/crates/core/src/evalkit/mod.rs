//! Metrics, reports and the synthetic benchmark generator.

pub mod bench;
pub mod metrics;
pub mod report;

pub use bench::{gen_benchmark, BenchShape, BenchSpec, Benchmark};
pub use metrics::{evidence_metrics, routing_metrics, EvalConfig, EvidenceMetrics, EvidenceRef, RoutingMetrics};
pub use report::{evaluate_strategy, Report, StrategyReport};
