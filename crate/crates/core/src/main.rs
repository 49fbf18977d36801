use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use polykb::aligngraph::AlignmentGraph;
use polykb::artifacts;
use polykb::corpus::GoldLabel;
use polykb::evalkit::{evaluate_strategy, gen_benchmark, BenchSpec, Report};
use polykb::pipeline::{read_corpus, read_outputs, read_queries, write_outputs, Engine, PipelineConfig, Strategy};
use polykb::scorers::LexicalScorer;
use polykb::{Error, Result};

#[derive(Parser)]
#[command(name = "polykb", version, about = "Multi-KB routing, fusion and evidence packing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build per-KB and merged indexes plus the alignment graph.
    Build(Common),
    /// Rebuild only the alignment graph.
    BuildGraph(Common),
    /// Run the configured strategies and write traces and packed evidence.
    Run(Common),
    /// Score previous run outputs against gold labels.
    Eval(Common),
    /// Generate the synthetic benchmark.
    GenBench(GenBench),
    /// Run one query through one strategy and print its trace.
    Pack(Pack),
}

/// Config file plus overrides. Flags win over `--set`, which wins over the file.
#[derive(Args)]
struct Common {
    /// TOML pipeline config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set daks.budget=40`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    artifacts: Option<PathBuf>,
    #[arg(long)]
    ret_scores: Option<PathBuf>,
    #[arg(long)]
    rank_scores: Option<PathBuf>,
    /// Strategy to run; repeatable. Defaults to the config list, or all.
    #[arg(long = "strategy")]
    strategies: Vec<Strategy>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    no_ranker: bool,
    #[arg(long)]
    no_bridge: bool,
}

#[derive(Args)]
struct GenBench {
    /// Output directory for corpus.jsonl and queries.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// TOML benchmark spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_queries: Option<usize>,
    #[arg(long)]
    density_bias: Option<f64>,
}

#[derive(Args)]
struct Pack {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    query_id: String,
}

fn set_key(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("`{assignment}` is not KEY=VALUE")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut table = match &c.config {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<toml::Table>(&s).map_err(|e| Error::Config(e.to_string()))?
        }
        None => toml::Table::new(),
    };
    for s in &c.set {
        set_key(&mut table, s)?;
    }
    let mut cfg: PipelineConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.corpus, &c.corpus),
        (&mut paths.queries, &c.queries),
        (&mut paths.artifacts, &c.artifacts),
        (&mut paths.ret_scores, &c.ret_scores),
        (&mut paths.rank_scores, &c.rank_scores),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(o) = &c.out_dir {
        paths.out_dir = o.clone();
    }
    if !c.strategies.is_empty() {
        cfg.strategies = c.strategies.clone();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    cfg.flags.enable_ranker &= !c.no_ranker;
    cfg.flags.enable_bridge &= !c.no_bridge;
    cfg.validate()?;
    if cfg.workers > 0 {
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    Ok(cfg)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(s: &str) {
    let _ = std::io::stdout().lock().write_all(s.as_bytes());
}

fn print(v: &serde_json::Value) {
    emit(&(serde_json::to_string_pretty(v).expect("json value") + "\n"));
}

fn cmd_build(c: &Common, graph_only: bool) -> Result<()> {
    let cfg = load_config(c)?;
    let corpus = read_corpus(cfg.corpus_path()?, cfg.kbs.clone())?;
    let dir = cfg.paths.artifacts_dir();
    if !graph_only {
        let lexical = LexicalScorer::build(&corpus, cfg.scorer)?;
        artifacts::write_indexes(&dir, &corpus, &lexical, cfg.scorer)?;
    }
    let graph = AlignmentGraph::build(&corpus);
    artifacts::write_graph(&dir, &corpus, &graph, cfg.scorer)?;
    let sizes: BTreeMap<String, usize> = cfg.kbs.iter().map(|k| (k.to_string(), corpus.kb_len(k))).collect();
    print(&json!({
        "artifacts": dir,
        "corpus_digest": artifacts::corpus_digest(&corpus)?,
        "chunks": sizes,
        "entities": graph.entity_nodes().len(),
        "edges": graph.n_edges(),
    }));
    Ok(())
}

fn cmd_run(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let queries_path = cfg.queries_path()?.to_path_buf();
    let out_dir = cfg.paths.out_dir.clone();
    let strategies = cfg.strategies();
    let engine = Engine::open(cfg)?;
    let queries = read_queries(&queries_path, engine.corpus())?;
    let mut written = BTreeMap::new();
    for s in &strategies {
        let traces = engine.run(&queries, s)?;
        let dir = write_outputs(&out_dir, s, &traces)?;
        written.insert(s.to_string(), dir);
    }
    print(&json!({ "queries": queries.len(), "outputs": written }));
    Ok(())
}

fn cmd_eval(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let corpus = read_corpus(cfg.corpus_path()?, cfg.kbs.clone())?;
    let queries = read_queries(cfg.queries_path()?, &corpus)?;
    let golds: BTreeMap<String, GoldLabel> = queries
        .iter()
        .map(|q| {
            q.gold
                .clone()
                .map(|g| (q.query_id.clone(), g))
                .ok_or_else(|| Error::GoldMissing(q.query_id.clone()))
        })
        .collect::<Result<_>>()?;
    let out_dir = &cfg.paths.out_dir;
    let reports = cfg
        .strategies()
        .iter()
        .map(|s| {
            let (rankings, packed) = read_outputs(out_dir, s)?;
            evaluate_strategy(&s.to_string(), &rankings, &packed, &golds, &cfg.eval)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = Report::new(cfg.eval.k, reports);
    let table = report.to_table();
    write_file(&out_dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_file(&out_dir.join("report.txt"), &table)?;
    emit(&table);
    Ok(())
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn cmd_gen_bench(g: &GenBench) -> Result<()> {
    let mut spec = match &g.spec {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<BenchSpec>(&s).map_err(|e| Error::InvalidSpec(e.to_string()))?
        }
        None => BenchSpec::default(),
    };
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    if let Some(n) = g.n_queries {
        spec.n_queries = n;
    }
    if let Some(d) = g.density_bias {
        spec.density_bias = d;
    }
    let bench = gen_benchmark(&spec)?;
    bench.write_to(&g.out)?;
    let spec_toml = toml::to_string(&spec).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&g.out.join("bench_spec.toml"), &spec_toml)?;
    print(&json!({
        "out": g.out,
        "chunks": bench.corpus.len(),
        "queries": bench.queries.len(),
        "seed": spec.seed,
    }));
    Ok(())
}

fn cmd_pack(p: &Pack) -> Result<()> {
    let cfg = load_config(&p.common)?;
    let queries_path = cfg.queries_path()?.to_path_buf();
    let strategy = match p.common.strategies.as_slice() {
        [] => Strategy::DaksGraphFull,
        [s] => s.clone(),
        _ => return Err(Error::Config("pack takes a single --strategy".into())),
    };
    let engine = Engine::open(cfg)?;
    let queries = read_queries(&queries_path, engine.corpus())?;
    let query = queries
        .iter()
        .find(|q| q.query_id == p.query_id)
        .ok_or_else(|| Error::KeyMismatch(p.query_id.clone()))?;
    let trace = engine.run_query(query, &strategy)?;
    emit(&(serde_json::to_string_pretty(&trace)? + "\n"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Build(c) => cmd_build(c, false),
        Command::BuildGraph(c) => cmd_build(c, true),
        Command::Run(c) => cmd_run(c),
        Command::Eval(c) => cmd_eval(c),
        Command::GenBench(g) => cmd_gen_bench(g),
        Command::Pack(p) => cmd_pack(p),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "kind": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
