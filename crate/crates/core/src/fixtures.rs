//! Small self-contained benchmark fixtures: a two-round verify-and-refute
//! scenario, an adversarial weighting fixture and seeded random graphs.

use std::fmt::Write as _;
use std::io::Cursor;
use std::path::Path as FsPath;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EmbeddingMode, RunConfig};
use crate::dialogue::reasoner::Constraint;
use crate::embed::{Embeddings, FileEmbedder, HashEmbedder};
use crate::error::{Error, Result};
use crate::eval::harness::{load_records, BenchmarkRecord, SeedSpec};
use crate::kg::{KnowledgeGraph, LoadOptions};

pub const NAMES: [&str; 4] = ["argo", "adversarial", "synthetic-20", "synthetic-50"];

pub const SYNTHETIC_METRICS_SEED: u64 = 20;
pub const SYNTHETIC_COVERAGE_SEED: u64 = 50;

/// Triples, optional embedding file, benchmark records and config text.
/// The config refers to the embedding file as `embeddings.tsv`.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: String,
    pub triples: String,
    pub embeddings: Option<String>,
    pub records: Vec<BenchmarkRecord>,
    pub config: String,
}

impl Fixture {
    pub fn graph(&self) -> Result<KnowledgeGraph> {
        KnowledgeGraph::load_triples(Cursor::new(self.triples.as_bytes()), LoadOptions::default())
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::from_text(&self.config)
    }

    pub fn embeddings(&self) -> Result<Embeddings> {
        let rc = self.run_config()?;
        match (&self.embeddings, rc.embedding) {
            (Some(text), EmbeddingMode::File) => Ok(Embeddings::new(Arc::new(
                FileEmbedder::from_reader(Cursor::new(text.as_bytes()))?,
            ))),
            (None, EmbeddingMode::Hash) => Ok(Embeddings::new(Arc::new(HashEmbedder::new(
                rc.embedding_dim,
                rc.embedding_seed,
            )?))),
            _ => Err(Error::Config(format!(
                "fixture `{}` has inconsistent embedding settings",
                self.name
            ))),
        }
    }

    pub fn records_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Writes `triples.tsv`, `benchmark.jsonl`, `config.txt` and, when
    /// present, `embeddings.tsv`.
    pub fn write_to_dir(&self, dir: impl AsRef<FsPath>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("triples.tsv"), &self.triples)?;
        std::fs::write(dir.join("benchmark.jsonl"), self.records_jsonl()?)?;
        std::fs::write(dir.join("config.txt"), &self.config)?;
        if let Some(e) = &self.embeddings {
            std::fs::write(dir.join("embeddings.tsv"), e)?;
        }
        Ok(())
    }
}

pub fn by_name(name: &str) -> Option<Fixture> {
    match name {
        "argo" => Some(argo()),
        "adversarial" => Some(adversarial()),
        "synthetic-20" => Some(synthetic(20, SYNTHETIC_METRICS_SEED)),
        "synthetic-50" => Some(synthetic(50, SYNTHETIC_COVERAGE_SEED)),
        _ => None,
    }
}

/// A film question whose first answer is a plausible city that fails the
/// question's constraint; refuting it leaves the right city on top.
pub fn argo() -> Fixture {
    let records = load_records(Cursor::new(include_str!(
        "../fixtures/argo/benchmark.jsonl"
    )))
    .expect("bundled records parse");
    Fixture {
        name: "argo".into(),
        triples: include_str!("../fixtures/argo/triples.tsv").into(),
        embeddings: Some(include_str!("../fixtures/argo/embeddings.tsv").into()),
        records,
        config: include_str!("../fixtures/argo/config.txt").into(),
    }
}

const ADVERSARIAL_INSTANCES: usize = 3;

/// Two query families with K = 3 and no semantic term in the score.
///
/// Structure trap: three one-hop decoys that are semantically far from the
/// seed, and a two-hop gold path with no semantic gap at all. Counting hops
/// alone ranks the decoys first.
///
/// Semantics trap: a one-hop gold edge with a moderate semantic gap, and a
/// four-edge chain with none. Semantic gap alone ranks every chain prefix
/// first.
pub fn adversarial() -> Fixture {
    let e1 = "1,0,0,0";
    let far = "-0.3,0.95,0,0";
    let near = "0.2,0.98,0,0";
    let mut triples = String::new();
    let mut emb = String::new();
    let mut records = Vec::new();
    let _ = writeln!(emb, "link\t0,0,1,0");
    for i in 0..ADVERSARIAL_INSTANCES {
        let s = format!("s{i}_seed");
        let m = format!("s{i}_mid");
        let g = format!("s{i}_gold");
        for (label, v) in [(&s, e1), (&m, e1), (&g, e1)] {
            let _ = writeln!(emb, "{label}\t{v}");
        }
        let _ = writeln!(triples, "{s}\tlink\t{m}");
        let _ = writeln!(triples, "{m}\tlink\t{g}");
        for d in 1..=3 {
            let label = format!("s{i}_decoy{d}");
            let _ = writeln!(emb, "{label}\t{far}");
            let _ = writeln!(triples, "{s}\tlink\t{label}");
        }
        let q = format!("structure trap {i}");
        let _ = writeln!(emb, "{q}\t{e1}");
        records.push(BenchmarkRecord {
            question: q,
            seeds: vec![SeedSpec {
                entity: s.clone(),
                confidence: 1.0,
            }],
            gold_answers: vec![g.clone()],
            gold_paths: Some(vec![vec![
                [s.clone(), "link".into(), m.clone()],
                [m.clone(), "link".into(), g.clone()],
            ]]),
            hops: Some(2),
            constraints: Vec::new(),
        });
    }
    for i in 0..ADVERSARIAL_INSTANCES {
        let s = format!("t{i}_seed");
        let g = format!("t{i}_gold");
        let _ = writeln!(emb, "{s}\t{e1}");
        let _ = writeln!(emb, "{g}\t{near}");
        let _ = writeln!(triples, "{s}\tlink\t{g}");
        let mut prev = s.clone();
        for c in 1..=4 {
            let label = format!("t{i}_chain{c}");
            let _ = writeln!(emb, "{label}\t{e1}");
            let _ = writeln!(triples, "{prev}\tlink\t{label}");
            prev = label;
        }
        let q = format!("semantics trap {i}");
        let _ = writeln!(emb, "{q}\t{e1}");
        records.push(BenchmarkRecord {
            question: q,
            seeds: vec![SeedSpec {
                entity: s.clone(),
                confidence: 1.0,
            }],
            gold_answers: vec![g.clone()],
            gold_paths: Some(vec![vec![[s.clone(), "link".into(), g.clone()]]]),
            hops: Some(1),
            constraints: Vec::new(),
        });
    }
    let config = "\
# Retrieval-only weighting fixture.
embedding = file
embedding_file = embeddings.tsv
lambda_sem = 0
L = 4
K = 3
radius = 4
knn = 0
deterministic = true
rounds = 1
"
    .to_string();
    Fixture {
        name: "adversarial".into(),
        triples,
        embeddings: Some(emb),
        records,
        config,
    }
}

const SYNTHETIC_NODES: usize = 40;
const SYNTHETIC_RELATIONS: usize = 6;

/// Seeded random graph with hashed embeddings and questions whose gold path
/// is a random simple walk of one to three hops.
pub fn synthetic(questions: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    for h in 0..SYNTHETIC_NODES {
        let degree = rng.random_range(2..=3);
        for _ in 0..degree {
            let t = loop {
                let t = rng.random_range(0..SYNTHETIC_NODES);
                if t != h {
                    break t;
                }
            };
            let r = rng.random_range(0..SYNTHETIC_RELATIONS);
            if !edges.contains(&(h, r, t)) {
                edges.push((h, r, t));
            }
        }
    }
    let mut triples = String::new();
    for (h, r, t) in &edges {
        let _ = writeln!(triples, "e{h}\tr{r}\te{t}");
    }
    let mut records = Vec::with_capacity(questions);
    for q in 0..questions {
        let start = rng.random_range(0..SYNTHETIC_NODES);
        let want = rng.random_range(1..=3usize);
        let mut visited = vec![start];
        let mut path: Vec<[String; 3]> = Vec::new();
        let mut at = start;
        while path.len() < want {
            let options: Vec<&(usize, usize, usize)> = edges
                .iter()
                .filter(|(h, _, t)| *h == at && !visited.contains(t))
                .collect();
            let Some(&&(h, r, t)) = options.choose(&mut rng) else {
                break;
            };
            path.push([format!("e{h}"), format!("r{r}"), format!("e{t}")]);
            visited.push(t);
            at = t;
        }
        let rels: Vec<&str> = path.iter().map(|e| e[1].as_str()).collect();
        let question = format!("Starting from e{start}, follow {}.", rels.join(" then "));
        let mut seeds = vec![SeedSpec {
            entity: format!("e{start}"),
            confidence: 1.0,
        }];
        if q % 3 == 2 {
            let other = (start + 1 + rng.random_range(0..SYNTHETIC_NODES - 1)) % SYNTHETIC_NODES;
            seeds.push(SeedSpec {
                entity: format!("e{other}"),
                confidence: 0.5,
            });
        }
        records.push(BenchmarkRecord {
            question,
            seeds,
            gold_answers: vec![format!("e{at}")],
            hops: Some(path.len() as u32),
            gold_paths: Some(vec![path]),
            constraints: Vec::<Constraint>::new(),
        });
    }
    let config = format!(
        "\
# Seeded random graph, {questions} questions, generator seed {seed}.
embedding = hash
embedding_dim = 32
embedding_seed = 7
L = 3
K = 50
radius = 3
knn = 0
seed = 11
"
    );
    Fixture {
        name: format!("synthetic-{questions}"),
        triples,
        embeddings: None,
        records,
        config,
    }
}
