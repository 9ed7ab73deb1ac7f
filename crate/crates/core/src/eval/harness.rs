//! Benchmark records, episode evaluation and report assembly.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path as FsPath;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::dialogue::episode::{Engine, EpisodeResult, EpisodeStatus};
use crate::dialogue::reasoner::{Constraint, Question, Reasoner};
use crate::embed::Embeddings;
use crate::enumerate::Path;
use crate::error::{Error, Result};
use crate::eval::metrics::{answer_metrics, covered, mean, rank_metrics, MedianMad};
use crate::kg::{KnowledgeGraph, SeedCandidate};
use crate::score::{CandidateScorer, PathVerifier};

pub const RANK_CUTOFF: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub entity: String,
    pub confidence: f64,
}

/// One benchmark question. Gold paths are lists of `[head, relation, tail]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub question: String,
    pub seeds: Vec<SeedSpec>,
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_paths: Option<Vec<Vec<[String; 3]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hops: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<Constraint>,
}

impl BenchmarkRecord {
    pub fn validate(&self) -> Result<()> {
        if self.gold_answers.is_empty() {
            return Err(Error::Invalid("gold_answers must not be empty".into()));
        }
        if self.hops == Some(0) {
            return Err(Error::Invalid("hops must be at least 1".into()));
        }
        if self
            .seeds
            .iter()
            .any(|s| !(0.0..=1.0).contains(&s.confidence))
        {
            return Err(Error::Invalid("seed confidence outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn question(&self) -> Question {
        Question {
            text: self.question.clone(),
            constraints: self.constraints.clone(),
        }
    }

    pub fn resolve_seeds(&self, graph: &KnowledgeGraph) -> Result<Vec<SeedCandidate>> {
        self.seeds
            .iter()
            .map(|s| SeedCandidate::new(graph.require_entity(&s.entity)?, s.confidence))
            .collect()
    }

    /// Gold paths that resolve against `graph`; the rest can never match.
    pub fn resolve_gold_paths(&self, graph: &KnowledgeGraph) -> Option<Vec<Path>> {
        self.gold_paths.as_ref().map(|paths| {
            paths
                .iter()
                .filter_map(|p| Path::from_labels(graph, p).ok())
                .collect()
        })
    }
}

/// JSON lines, one record per line; blank lines are skipped.
pub fn load_records<R: BufRead>(reader: R) -> Result<Vec<BenchmarkRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: BenchmarkRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        r.validate().map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn load_records_file(path: impl AsRef<FsPath>) -> Result<Vec<BenchmarkRecord>> {
    let f = std::fs::File::open(path)?;
    load_records(std::io::BufReader::new(f))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionReport {
    pub index: usize,
    pub question: String,
    pub hops: Option<u32>,
    pub answer: Option<String>,
    pub confidence: f64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub hit_at_1: f64,
    pub f1: f64,
    pub covered: Option<bool>,
    pub mrr: Option<f64>,
    pub map: Option<f64>,
    pub hit_at_10: Option<f64>,
    pub rounds: u64,
    pub reasoner_calls: u64,
    pub tokens: u64,
    pub edits: u64,
    pub hallucinated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment_spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub questions: usize,
    pub failed: usize,
    pub hit_at_1: Option<f64>,
    pub f1: Option<f64>,
    pub coverage: Option<f64>,
    pub coverage_questions: usize,
    pub mrr: Option<f64>,
    pub map: Option<f64>,
    pub hit_at_10: Option<f64>,
    pub ranked_questions: usize,
    pub rounds: Option<MedianMad>,
    pub reasoner_calls: Option<MedianMad>,
    pub tokens: Option<MedianMad>,
    pub edits: Option<MedianMad>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment_spearman: Option<MedianMad>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<MedianMad>,
}

impl Aggregate {
    pub fn of(rows: &[&QuestionReport]) -> Self {
        let col =
            |f: &dyn Fn(&QuestionReport) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
        let opt = |f: &dyn Fn(&QuestionReport) -> Option<f64>| {
            rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>()
        };
        let cov = opt(&|r| r.covered.map(|c| if c { 1.0 } else { 0.0 }));
        let mrr = opt(&|r| r.mrr);
        let latency = opt(&|r| r.latency_ms);
        Self {
            questions: rows.len(),
            failed: rows.iter().filter(|r| r.error.is_some()).count(),
            hit_at_1: mean(&col(&|r| r.hit_at_1)),
            f1: mean(&col(&|r| r.f1)),
            coverage: mean(&cov),
            coverage_questions: cov.len(),
            mrr: mean(&mrr),
            map: mean(&opt(&|r| r.map)),
            hit_at_10: mean(&opt(&|r| r.hit_at_10)),
            ranked_questions: mrr.len(),
            rounds: MedianMad::of(&col(&|r| r.rounds as f64)),
            reasoner_calls: MedianMad::of(&col(&|r| r.reasoner_calls as f64)),
            tokens: MedianMad::of(&col(&|r| r.tokens as f64)),
            edits: MedianMad::of(&col(&|r| r.edits as f64)),
            alignment_spearman: MedianMad::of(&opt(&|r| r.alignment_spearman)),
            latency_ms: if latency.is_empty() {
                None
            } else {
                MedianMad::of(&latency)
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub overall: Aggregate,
    /// Keyed by hop count.
    pub by_hops: BTreeMap<u32, Aggregate>,
    pub questions: Vec<QuestionReport>,
}

impl Report {
    pub fn from_questions(questions: Vec<QuestionReport>) -> Self {
        let all: Vec<&QuestionReport> = questions.iter().collect();
        let mut buckets: BTreeMap<u32, Vec<&QuestionReport>> = BTreeMap::new();
        for q in &questions {
            if let Some(h) = q.hops {
                buckets.entry(h).or_default().push(q);
            }
        }
        Self {
            overall: Aggregate::of(&all),
            by_hops: buckets
                .into_iter()
                .map(|(h, rows)| (h, Aggregate::of(&rows)))
                .collect(),
            questions,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Per-question table.
    pub fn questions_csv(&self) -> String {
        let mut s = String::from(
            "index,hops,answer,confidence,status,hit_at_1,f1,covered,mrr,map,hit_at_10,rounds,reasoner_calls,tokens,edits\n",
        );
        for q in &self.questions {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                q.index,
                opt(q.hops),
                csv_field(q.answer.as_deref().unwrap_or("")),
                fmt(q.confidence),
                q.status,
                fmt(q.hit_at_1),
                fmt(q.f1),
                q.covered.map(|c| if c { "1" } else { "0" }).unwrap_or(""),
                opt_f(q.mrr),
                opt_f(q.map),
                opt_f(q.hit_at_10),
                q.rounds,
                q.reasoner_calls,
                q.tokens,
                q.edits,
            );
        }
        s
    }

    /// Overall row followed by one row per hop bucket.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        s.push_str(&summary_row("all", &self.overall));
        for (h, a) in &self.by_hops {
            s.push_str(&summary_row(&h.to_string(), a));
        }
        s
    }
}

pub const SUMMARY_HEADER: &str = "bucket,questions,failed,hit_at_1,f1,coverage,mrr,map,hit_at_10,median_rounds,median_reasoner_calls,mad_reasoner_calls,median_tokens,mad_tokens,median_edits";

pub fn summary_fields(a: &Aggregate) -> String {
    let mm = |m: Option<MedianMad>| m.map(|m| (fmt(m.median), fmt(m.mad))).unwrap_or_default();
    let (calls, calls_mad) = mm(a.reasoner_calls);
    let (tokens, tokens_mad) = mm(a.tokens);
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        a.questions,
        a.failed,
        opt_f(a.hit_at_1),
        opt_f(a.f1),
        opt_f(a.coverage),
        opt_f(a.mrr),
        opt_f(a.map),
        opt_f(a.hit_at_10),
        mm(a.rounds).0,
        calls,
        calls_mad,
        tokens,
        tokens_mad,
        mm(a.edits).0,
    )
}

fn summary_row(bucket: &str, a: &Aggregate) -> String {
    format!("{bucket},{}\n", summary_fields(a))
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

fn opt_f(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Settings for a benchmark run besides the engine config.
#[derive(Clone)]
pub struct BenchOptions {
    pub jobs: usize,
    /// Include wall-clock latency; reports are then not reproducible.
    pub timing: bool,
    pub scorer: Option<Arc<dyn CandidateScorer>>,
    pub verifier: Option<Arc<dyn PathVerifier>>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            timing: false,
            scorer: None,
            verifier: None,
        }
    }
}

/// Scores one finished episode against its record.
pub fn evaluate_episode(
    index: usize,
    record: &BenchmarkRecord,
    graph: &KnowledgeGraph,
    episode: &EpisodeResult,
    timing: bool,
) -> QuestionReport {
    let gold: BTreeSet<String> = record.gold_answers.iter().cloned().collect();
    let predicted: Vec<&str> = episode.answer.as_deref().into_iter().collect();
    let (hit, f1) = answer_metrics(&predicted, &gold);
    let gold_paths = record.resolve_gold_paths(graph);
    let covered_flag = gold_paths.as_ref().map(|g| covered(&episode.candidates, g));
    let ranking = gold_paths.as_ref().and_then(|g| {
        let relevant: HashSet<&Path> = g.iter().collect();
        let ranked: Vec<&Path> = episode.candidates.iter().collect();
        rank_metrics(&ranked, &relevant, RANK_CUTOFF)
    });
    let (status, error) = match &episode.status {
        EpisodeStatus::Confident => ("confident".to_string(), None),
        EpisodeStatus::RoundsExhausted => ("rounds_exhausted".to_string(), None),
        EpisodeStatus::Failed { error } => ("failed".to_string(), Some(error.clone())),
    };
    let alignment_spearman = episode
        .trace
        .iter()
        .rev()
        .find_map(|r| r.attention.as_ref().and_then(|a| a.spearman));
    QuestionReport {
        index,
        question: record.question.clone(),
        hops: record.hops,
        answer: episode.answer.clone(),
        confidence: episode.confidence,
        status,
        error,
        hit_at_1: hit,
        f1,
        covered: covered_flag,
        mrr: ranking.map(|m| m.mrr),
        map: ranking.map(|m| m.map),
        hit_at_10: ranking.map(|m| m.hit_at_k),
        rounds: episode.rounds() as u64,
        reasoner_calls: episode.counters.reasoner_calls,
        tokens: episode.counters.tokens,
        edits: episode.counters.edits,
        hallucinated: episode.answer.is_some() && !episode.answer_in_subgraph,
        alignment_spearman,
        latency_ms: timing.then_some(episode.latency.as_secs_f64() * 1e3),
    }
}

fn failed_question(index: usize, record: &BenchmarkRecord, error: &Error) -> QuestionReport {
    QuestionReport {
        index,
        question: record.question.clone(),
        hops: record.hops,
        answer: None,
        confidence: 0.0,
        status: "failed".into(),
        error: Some(error.to_string()),
        hit_at_1: 0.0,
        f1: 0.0,
        covered: record.gold_paths.as_ref().map(|_| false),
        mrr: record.gold_paths.as_ref().map(|_| 0.0),
        map: record.gold_paths.as_ref().map(|_| 0.0),
        hit_at_10: record.gold_paths.as_ref().map(|_| 0.0),
        rounds: 0,
        reasoner_calls: 0,
        tokens: 0,
        edits: 0,
        hallucinated: false,
        alignment_spearman: None,
        latency_ms: None,
    }
}

/// Runs one episode and scores it; failures become failed rows.
pub fn run_question(
    engine: &Engine<'_>,
    index: usize,
    record: &BenchmarkRecord,
    timing: bool,
) -> (QuestionReport, Option<EpisodeResult>) {
    let graph = engine.graph();
    let outcome = record
        .resolve_seeds(graph)
        .and_then(|seeds| engine.run(&record.question(), &seeds));
    match outcome {
        Ok(ep) => (
            evaluate_episode(index, record, graph, &ep, timing),
            Some(ep),
        ),
        Err(e) => (failed_question(index, record, &e), None),
    }
}

fn build_engine<'a>(
    graph: &'a KnowledgeGraph,
    embeddings: &'a Embeddings,
    reasoner: &'a dyn Reasoner,
    config: &EngineConfig,
    options: &BenchOptions,
) -> Result<Engine<'a>> {
    let mut engine = Engine::new(graph, embeddings, reasoner, config.clone())?;
    if let Some(s) = &options.scorer {
        engine = engine.with_scorer(Arc::clone(s));
    }
    if let Some(v) = &options.verifier {
        engine = engine.with_verifier(Arc::clone(v));
    }
    Ok(engine)
}

/// Evaluates every record. Episodes run on `jobs` threads; the report is
/// assembled in record order.
pub fn run_benchmark(
    records: &[BenchmarkRecord],
    graph: &KnowledgeGraph,
    embeddings: &Embeddings,
    reasoner: &dyn Reasoner,
    config: &EngineConfig,
    options: &BenchOptions,
) -> Result<Report> {
    let engine = build_engine(graph, embeddings, reasoner, config, options)?;
    let run = || -> Vec<QuestionReport> {
        records
            .par_iter()
            .enumerate()
            .map(|(i, r)| run_question(&engine, i, r, options.timing).0)
            .collect()
    };
    let questions = if options.jobs <= 1 {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| run_question(&engine, i, r, options.timing).0)
            .collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)
    };
    Ok(Report::from_questions(questions))
}
