//! Shared inputs for the retrieval benchmarks.

use kgpath_core::eval::BenchmarkRecord;
use kgpath_core::fixtures::{self, Fixture};
use kgpath_core::{
    Embedding, Embeddings, EngineConfig, KnowledgeGraph, Result, SeedCandidate, Subgraph,
};

/// A loaded fixture plus the first question's seeds, subgraph and query.
pub struct Workload {
    pub fixture: Fixture,
    pub graph: KnowledgeGraph,
    pub embeddings: Embeddings,
    pub config: EngineConfig,
    pub seeds: Vec<SeedCandidate>,
    pub subgraph: Subgraph,
    pub query: Embedding,
}

impl Workload {
    pub fn load(fixture: Fixture) -> Result<Self> {
        let graph = fixture.graph()?;
        let embeddings = fixture.embeddings()?;
        let config = fixture.run_config()?.engine;
        let record: &BenchmarkRecord = &fixture.records[0];
        let seeds = record.resolve_seeds(&graph)?;
        let subgraph = Subgraph::expand_neighborhood(
            &graph,
            &seeds,
            config.radius,
            config.knn,
            Some(&embeddings),
        )?;
        let query = embeddings.query(&graph, &record.question)?;
        Ok(Self {
            fixture,
            graph,
            embeddings,
            config,
            seeds,
            subgraph,
            query,
        })
    }

    pub fn synthetic() -> Result<Self> {
        Self::load(fixtures::synthetic(50, fixtures::SYNTHETIC_COVERAGE_SEED))
    }

    pub fn argo() -> Result<Self> {
        Self::load(fixtures::argo())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workloads_load() {
        let w = Workload::synthetic().unwrap();
        assert!(w.subgraph.num_edges() > 0);
        assert_eq!(w.query.dim(), w.embeddings.dim());
        Workload::argo().unwrap();
    }
}
