//! `kgpath`: query, benchmark and sweep path retrieval over a triple file.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kgpath_core::config::{EmbeddingMode, ReasonerKind, KEYS};
use kgpath_core::dialogue::ServiceReasoner;
use kgpath_core::embed::ServiceEmbedder;
use kgpath_core::eval::harness::BenchOptions;
use kgpath_core::eval::{load_records_file, run_benchmark, sweep, sweep_csv, Grid};
use kgpath_core::fixtures;
use kgpath_core::kg::LoadOptions;
use kgpath_core::score::{LinearModel, LinearScorer, LinearVerifier};
use kgpath_core::{
    Embeddings, Engine, FileEmbedder, HashEmbedder, KnowledgeGraph, Question, Reasoner, RunConfig,
    ScriptedReasoner, SeedCandidate,
};

#[derive(Parser)]
#[command(
    name = "kgpath",
    version,
    about = "Weighted path retrieval over knowledge graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question and write its round trace.
    Query(QueryArgs),
    /// Evaluate a benchmark file and write JSON and CSV reports.
    Bench(BenchArgs),
    /// Run the benchmark once per grid point and print a CSV grid.
    Sweep(SweepArgs),
    /// Write a bundled fixture (triples, embeddings, benchmark, config) to a directory.
    Fixture {
        /// argo | adversarial | synthetic-20 | synthetic-50
        name: String,
        dir: PathBuf,
    },
    /// Print the effective configuration.
    Config(Common),
}

const KEY_HELP_HEADER: &str =
    "Configuration keys (config file lines `key = value`, or --set key=value):";

#[derive(Args, Clone, Default)]
#[command(after_long_help = key_help())]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Rng seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel episodes in bench and sweep.
    #[arg(long)]
    jobs: Option<usize>,
    /// Maximum retrieval rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Disable Gumbel noise.
    #[arg(long)]
    deterministic: bool,
    /// Add inverse edges when loading the graph.
    #[arg(long)]
    add_inverse: bool,
    /// Verifier fixed at 1 with no refutation gate.
    #[arg(long)]
    no_verifier: bool,
    /// Show the reasoner only the top selected path.
    #[arg(long)]
    no_soft_injection: bool,
    /// One retrieval round.
    #[arg(long)]
    single_round: bool,
    /// alpha = beta = gamma = 1/3.
    #[arg(long)]
    fixed_weights: bool,
    /// Skip attention diagnostics.
    #[arg(long)]
    no_align_diagnostics: bool,
    /// Record wall-clock latency in reports (makes them non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct QueryArgs {
    /// Triple file: `head<TAB>relation<TAB>tail` per line.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    question: String,
    /// Seed entity, optionally `LABEL@CONFIDENCE`; repeatable.
    #[arg(long = "entity", value_name = "LABEL[@CONF]", required = true)]
    entities: Vec<String>,
    /// Answer constraint `RELATION=ENTITY`; repeatable.
    #[arg(long = "constraint", value_name = "REL=ENTITY")]
    constraints: Vec<String>,
    /// Round trace output (JSON lines).
    #[arg(long, default_value = "trace.jsonl")]
    trace: PathBuf,
    /// Write the final subgraph as JSON.
    #[arg(long)]
    dump_subgraph: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Benchmark records, one JSON object per line.
    #[arg(long)]
    benchmark: PathBuf,
    /// Output directory for report.json, questions.csv and summary.csv.
    #[arg(long, default_value = "report")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    benchmark: PathBuf,
    /// `key=v1,v2;key2=...` or `simplex=STEP`; keys: alpha beta gamma lambda_sem tau K.
    #[arg(long)]
    grid: String,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn key_help() -> String {
    let mut s = String::from(KEY_HELP_HEADER);
    for (k, doc) in KEYS {
        s.push_str(&format!("\n  {k:<20} {doc}"));
    }
    s
}

/// A configuration or usage problem; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl fmt::Display) -> anyhow::Error {
    Usage(msg.to_string()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<kgpath_core::Error>() {
        Some(kgpath_core::Error::Config(_)) => 2,
        _ => 1,
    }
}

fn relative_to(base: Option<&Path>, p: &Option<PathBuf>) -> Option<PathBuf> {
    match (base, p) {
        (Some(dir), Some(p)) if p.is_relative() => Some(dir.join(p)),
        (_, p) => p.clone(),
    }
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut rc = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            rc.parse_text(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
            rc.embedding_file = relative_to(dir, &rc.embedding_file);
            rc.relation_priors = relative_to(dir, &rc.relation_priors);
            rc.scorer_weights = relative_to(dir, &rc.scorer_weights);
            rc.verifier_weights = relative_to(dir, &rc.verifier_weights);
        }
        rc.apply_overrides(self.set.iter().map(String::as_str))
            .map_err(usage)?;
        if let Some(s) = self.seed {
            rc.engine.seed = s;
        }
        if let Some(j) = self.jobs {
            rc.jobs = j;
        }
        if let Some(r) = self.rounds {
            rc.engine.rounds = r;
        }
        rc.engine.deterministic |= self.deterministic;
        rc.add_inverse |= self.add_inverse;
        let a = &mut rc.engine.ablations;
        a.no_verifier |= self.no_verifier;
        a.no_soft_injection |= self.no_soft_injection;
        a.single_round |= self.single_round;
        a.fixed_weights |= self.fixed_weights;
        a.no_align_diagnostics |= self.no_align_diagnostics;
        rc.validate().map_err(usage)?;
        Ok(rc)
    }
}

struct Setup {
    config: RunConfig,
    graph: KnowledgeGraph,
    embeddings: Embeddings,
    reasoner: Box<dyn Reasoner>,
    options: BenchOptions,
}

fn setup(common: &Common, graph_path: &Path) -> Result<Setup> {
    let config = common.run_config()?;
    let mut graph = KnowledgeGraph::load_file(
        graph_path,
        LoadOptions {
            add_inverse: config.add_inverse,
        },
    )
    .with_context(|| format!("loading graph {}", graph_path.display()))?;
    if let Some(p) = &config.relation_priors {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        graph
            .load_relation_priors(BufReader::new(f))
            .with_context(|| format!("loading relation priors {}", p.display()))?;
    }
    let provider: Arc<dyn kgpath_core::EmbeddingProvider> = match config.embedding {
        EmbeddingMode::Hash => Arc::new(HashEmbedder::new(
            config.embedding_dim,
            config.embedding_seed,
        )?),
        EmbeddingMode::File => {
            let p = config.embedding_file.as_ref().expect("validated");
            Arc::new(
                FileEmbedder::from_file(p)
                    .with_context(|| format!("loading embeddings {}", p.display()))?,
            )
        }
        EmbeddingMode::Service => {
            Arc::new(ServiceEmbedder::from_env(config.embedding_dim).map_err(usage)?)
        }
    };
    let reasoner: Box<dyn Reasoner> = match config.reasoner {
        ReasonerKind::Scripted => Box::new(ScriptedReasoner::new(config.engine.conf_threshold)),
        ReasonerKind::Service => Box::new(
            ServiceReasoner::from_env(Duration::from_millis(config.reasoner_timeout_ms))
                .map_err(usage)?,
        ),
    };
    let mut options = BenchOptions {
        jobs: config.jobs,
        timing: common.timing,
        ..BenchOptions::default()
    };
    if let Some(p) = &config.scorer_weights {
        let m = LinearModel::from_file(p).with_context(|| format!("loading {}", p.display()))?;
        options.scorer = Some(Arc::new(LinearScorer(m)));
    }
    if let Some(p) = &config.verifier_weights {
        let m = LinearModel::from_file(p).with_context(|| format!("loading {}", p.display()))?;
        options.verifier = Some(Arc::new(LinearVerifier(m)));
    }
    Ok(Setup {
        embeddings: Embeddings::new(provider),
        config,
        graph,
        reasoner,
        options,
    })
}

fn parse_entity(graph: &KnowledgeGraph, spec: &str) -> Result<SeedCandidate> {
    let (label, conf) = match spec.rsplit_once('@') {
        Some((l, c)) => match c.parse::<f64>() {
            Ok(c) => (l, c),
            Err(_) => (spec, 1.0),
        },
        None => (spec, 1.0),
    };
    let id = graph
        .entity(label)
        .ok_or_else(|| usage(format!("unknown seed entity `{label}`")))?;
    SeedCandidate::new(id, conf).map_err(usage)
}

fn cmd_query(args: &QueryArgs) -> Result<()> {
    let s = setup(&args.common, &args.graph)?;
    let seeds = args
        .entities
        .iter()
        .map(|e| parse_entity(&s.graph, e))
        .collect::<Result<Vec<_>>>()?;
    let mut question = Question::new(args.question.clone());
    for c in &args.constraints {
        let (rel, ent) = c
            .split_once('=')
            .ok_or_else(|| usage(format!("constraint `{c}` is not RELATION=ENTITY")))?;
        question = question.with_constraint(rel.trim(), ent.trim());
    }
    let mut engine = Engine::new(
        &s.graph,
        &s.embeddings,
        s.reasoner.as_ref(),
        s.config.engine.clone(),
    )
    .map_err(usage)?;
    if let Some(sc) = &s.options.scorer {
        engine = engine.with_scorer(Arc::clone(sc));
    }
    if let Some(v) = &s.options.verifier {
        engine = engine.with_verifier(Arc::clone(v));
    }
    let ep = engine.run(&question, &seeds)?;
    let out =
        File::create(&args.trace).with_context(|| format!("creating {}", args.trace.display()))?;
    let mut w = BufWriter::new(out);
    ep.write_trace(&mut w)?;
    w.flush()?;
    if let Some(p) = &args.dump_subgraph {
        let sub = ep
            .subgraph
            .as_ref()
            .context("episode ended before a subgraph was built")?;
        std::fs::write(p, serde_json::to_string_pretty(&sub.dump(&s.graph))?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    println!("answer: {}", ep.answer.as_deref().unwrap_or("-"));
    println!("confidence: {:.4}", ep.confidence);
    println!("rounds: {}", ep.rounds());
    println!("edits: {}", ep.counters.edits);
    println!(
        "status: {}",
        serde_json::to_value(&ep.status)?["status"]
            .as_str()
            .unwrap_or("?")
    );
    println!("trace: {}", args.trace.display());
    if let kgpath_core::EpisodeStatus::Failed { error } = &ep.status {
        bail!("episode failed: {error}");
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let s = setup(&args.common, &args.graph)?;
    let records = load_records_file(&args.benchmark)
        .with_context(|| format!("loading benchmark {}", args.benchmark.display()))?;
    let report = run_benchmark(
        &records,
        &s.graph,
        &s.embeddings,
        s.reasoner.as_ref(),
        &s.config.engine,
        &s.options,
    )?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    std::fs::write(args.out.join("report.json"), report.to_json()?)?;
    std::fs::write(args.out.join("questions.csv"), report.questions_csv())?;
    let summary = report.summary_csv();
    std::fs::write(args.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let grid = Grid::parse(&args.grid).map_err(usage)?;
    let s = setup(&args.common, &args.graph)?;
    let records = load_records_file(&args.benchmark)
        .with_context(|| format!("loading benchmark {}", args.benchmark.display()))?;
    let rows = sweep(
        &grid,
        &records,
        &s.graph,
        &s.embeddings,
        s.reasoner.as_ref(),
        &s.config.engine,
        &s.options,
    )?;
    let csv = sweep_csv(&grid, &rows);
    match &args.out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_fixture(name: &str, dir: &Path) -> Result<()> {
    let f = fixtures::by_name(name).ok_or_else(|| {
        usage(format!(
            "unknown fixture `{name}`; expected one of {}",
            fixtures::NAMES.join(", ")
        ))
    })?;
    f.write_to_dir(dir)
        .with_context(|| format!("writing fixture to {}", dir.display()))?;
    println!("{} -> {}", f.name, dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Query(a) => cmd_query(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Fixture { name, dir } => cmd_fixture(&name, &dir),
        Command::Config(c) => {
            print!("{}", c.run_config()?.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::debug!("{err:?}");
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
