//! Edge weights and path scores.
//!
//! An edge `(u, r, v)` costs
//! `alpha * structural + beta * (1 - cos(u, v)) + gamma * prior(r)`, and
//! the traversal cost actually used by search divides that by
//! `1 + soft_multiplier`. A path scores `-sum(cost) + lambda_sem * sem(p, q)`.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Embedding, Embeddings};
use crate::enumerate::Path;
use crate::error::{Error, Result};
use crate::inject::encode_path;
use crate::kg::{KnowledgeGraph, Subgraph, Triple};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructMode {
    /// One unit per hop.
    #[default]
    Uniform,
    /// `ln(1 + out_degree(head))`.
    Degree,
}

impl std::str::FromStr for StructMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "degree" => Ok(Self::Degree),
            other => Err(Error::Config(format!("unknown struct_mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_sem: f64,
    pub struct_mode: StructMode,
}

impl Default for WeightCoefficients {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.4,
            gamma: 0.2,
            lambda_sem: 0.70,
            struct_mode: StructMode::Uniform,
        }
    }
}

impl WeightCoefficients {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_sem", self.lambda_sem),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeightBreakdown {
    pub structural: f64,
    pub semantic_gap: f64,
    pub relation_prior: f64,
    pub total: f64,
}

pub fn edge_weight(
    edge: &Triple,
    coeffs: &WeightCoefficients,
    embeddings: &Embeddings,
    graph: &KnowledgeGraph,
) -> Result<EdgeWeightBreakdown> {
    let structural = match coeffs.struct_mode {
        StructMode::Uniform => 1.0,
        StructMode::Degree => (1.0 + graph.out_degree(edge.head) as f64).ln(),
    };
    let semantic_gap = 1.0
        - cosine(
            &*embeddings.entity(graph, edge.head)?,
            &*embeddings.entity(graph, edge.tail)?,
        )?;
    let relation_prior = graph.relation_prior(edge.relation);
    let total =
        coeffs.alpha * structural + coeffs.beta * semantic_gap + coeffs.gamma * relation_prior;
    Ok(EdgeWeightBreakdown {
        structural,
        semantic_gap,
        relation_prior,
        total,
    })
}

/// Traversal cost after soft masking: boosted edges get cheaper.
pub fn effective_cost(total: f64, soft_multiplier: f64) -> f64 {
    total / (1.0 + soft_multiplier)
}

pub fn semantic_match(
    path: &Path,
    query: &Embedding,
    embeddings: &Embeddings,
    graph: &KnowledgeGraph,
) -> Result<f64> {
    let latent = encode_path(path, embeddings, graph)?;
    cosine(&latent, query)
}

/// Score of a path against a query. Cost terms use the subgraph's soft
/// multipliers.
pub fn path_score(
    path: &Path,
    query: &Embedding,
    coeffs: &WeightCoefficients,
    embeddings: &Embeddings,
    graph: &KnowledgeGraph,
    subgraph: &Subgraph,
) -> Result<f64> {
    CostModel::new(graph, subgraph, embeddings, *coeffs, query.clone()).score(path)
}

/// Per-query cost and score oracle over one subgraph snapshot. Edge weights
/// are memoized; the model is meant to live for one enumeration pass.
pub struct CostModel<'a> {
    graph: &'a KnowledgeGraph,
    subgraph: &'a Subgraph,
    embeddings: &'a Embeddings,
    coeffs: WeightCoefficients,
    query: Embedding,
    weights: RefCell<HashMap<Triple, f64>>,
}

impl<'a> CostModel<'a> {
    pub fn new(
        graph: &'a KnowledgeGraph,
        subgraph: &'a Subgraph,
        embeddings: &'a Embeddings,
        coeffs: WeightCoefficients,
        query: Embedding,
    ) -> Self {
        Self {
            graph,
            subgraph,
            embeddings,
            coeffs,
            query,
            weights: RefCell::new(HashMap::new()),
        }
    }

    pub fn graph(&self) -> &'a KnowledgeGraph {
        self.graph
    }

    pub fn subgraph(&self) -> &'a Subgraph {
        self.subgraph
    }

    pub fn embeddings(&self) -> &'a Embeddings {
        self.embeddings
    }

    pub fn coeffs(&self) -> &WeightCoefficients {
        &self.coeffs
    }

    pub fn query(&self) -> &Embedding {
        &self.query
    }

    pub fn edge_weight(&self, edge: &Triple) -> Result<f64> {
        if let Some(&w) = self.weights.borrow().get(edge) {
            return Ok(w);
        }
        let w = edge_weight(edge, &self.coeffs, self.embeddings, self.graph)?.total;
        self.weights.borrow_mut().insert(*edge, w);
        Ok(w)
    }

    pub fn edge_cost(&self, edge: &Triple) -> Result<f64> {
        Ok(effective_cost(
            self.edge_weight(edge)?,
            self.subgraph.soft_multiplier(edge),
        ))
    }

    /// Sum of effective edge costs, accumulated head to tail.
    pub fn path_cost(&self, path: &Path) -> Result<f64> {
        let mut cost = 0.0;
        for e in path.edges() {
            cost += self.edge_cost(e)?;
        }
        Ok(cost)
    }

    pub fn semantic_match(&self, path: &Path) -> Result<f64> {
        semantic_match(path, &self.query, self.embeddings, self.graph)
    }

    pub fn score(&self, path: &Path) -> Result<f64> {
        if path.is_empty() {
            return Err(Error::EmptyPath);
        }
        let cost = self.path_cost(path)?;
        if self.coeffs.lambda_sem == 0.0 {
            return Ok(-cost);
        }
        Ok(-cost + self.coeffs.lambda_sem * self.semantic_match(path)?)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::embed::FileEmbedder;
    use crate::kg::{LoadOptions, SeedCandidate};

    fn fixture() -> (KnowledgeGraph, Embeddings) {
        let g =
            KnowledgeGraph::load_triples("a\tr\tb\nb\tr\tc\n".as_bytes(), LoadOptions::default())
                .unwrap();
        let f = FileEmbedder::from_reader("a\t1,0\nb\t1,0\nc\t0,1\nr\t1,1\n".as_bytes()).unwrap();
        (g, Embeddings::new(Arc::new(f)))
    }

    fn sub(g: &KnowledgeGraph) -> Subgraph {
        let s = SeedCandidate::new(g.entity("a").unwrap(), 1.0).unwrap();
        Subgraph::expand_neighborhood(g, &[s], 3, 0, None).unwrap()
    }

    #[test]
    fn structural_only() {
        let (g, emb) = fixture();
        let c = WeightCoefficients {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            ..Default::default()
        };
        for t in g.triples() {
            assert_eq!(edge_weight(t, &c, &emb, &g).unwrap().total, 1.0);
        }
    }

    #[test]
    fn identical_embeddings_cost_nothing_semantically() {
        let (g, emb) = fixture();
        let c = WeightCoefficients {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            ..Default::default()
        };
        let ab = g.resolve_triple("a", "r", "b").unwrap();
        assert_eq!(edge_weight(&ab, &c, &emb, &g).unwrap().total, 0.0);
        let bc = g.resolve_triple("b", "r", "c").unwrap();
        assert_eq!(edge_weight(&bc, &c, &emb, &g).unwrap().total, 1.0);
    }

    #[test]
    fn hybrid_substitution() {
        // structural 1, gap 1 (orthogonal), prior 0.5 -> 0.4 + 0.4 + 0.1
        let mut g = KnowledgeGraph::new();
        g.add_triple("x", "rare", "y");
        g.set_relation_prior(g.relation("rare").unwrap(), 0.5)
            .unwrap();
        let f = FileEmbedder::from_reader("x\t1,0\ny\t0,1\n".as_bytes()).unwrap();
        let emb = Embeddings::new(Arc::new(f));
        let t = g.triples()[0];
        let w = edge_weight(&t, &WeightCoefficients::default(), &emb, &g).unwrap();
        assert_eq!(
            (w.structural, w.semantic_gap, w.relation_prior),
            (1.0, 1.0, 0.5)
        );
        assert!((w.total - 0.9).abs() < 1e-12);
    }

    #[test]
    fn degree_mode() {
        let (g, emb) = fixture();
        let c = WeightCoefficients {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            struct_mode: StructMode::Degree,
            ..Default::default()
        };
        let ab = g.resolve_triple("a", "r", "b").unwrap();
        assert!((edge_weight(&ab, &c, &emb, &g).unwrap().total - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn score_examples() {
        let (g, emb) = fixture();
        let s = sub(&g);
        let ab = g.resolve_triple("a", "r", "b").unwrap();
        let path = Path::from_edges(vec![ab]).unwrap();
        // single edge of cost 0.5, lambda 0
        let c = WeightCoefficients {
            alpha: 0.5,
            beta: 0.0,
            gamma: 0.0,
            lambda_sem: 0.0,
            ..Default::default()
        };
        let q = Embedding::new(vec![1.0, 0.0]).unwrap();
        let m = CostModel::new(&g, &s, &emb, c, q.clone());
        assert_eq!(m.score(&path).unwrap(), -0.5);

        let with_sem = CostModel::new(
            &g,
            &s,
            &emb,
            WeightCoefficients {
                lambda_sem: 0.7,
                ..c
            },
            q,
        );
        let sem = with_sem.semantic_match(&path).unwrap();
        let expected = -0.5 + 0.7 * sem;
        assert!((with_sem.score(&path).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cost_plus_semantic_term() {
        // every element embeds to (0.6, 0.8); query (0, 1) gives sem = 0.8
        let g =
            KnowledgeGraph::load_triples("a\tr\tb\n".as_bytes(), LoadOptions::default()).unwrap();
        let f =
            FileEmbedder::from_reader("a\t0.6,0.8\nb\t0.6,0.8\nr\t0.6,0.8\n".as_bytes()).unwrap();
        let emb = Embeddings::new(Arc::new(f));
        let s = sub(&g);
        let c = WeightCoefficients {
            alpha: 0.5,
            beta: 0.0,
            gamma: 0.0,
            lambda_sem: 0.7,
            ..Default::default()
        };
        let m = CostModel::new(&g, &s, &emb, c, Embedding::new(vec![0.0, 1.0]).unwrap());
        let path = Path::from_edges(vec![g.triples()[0]]).unwrap();
        assert!((m.semantic_match(&path).unwrap() - 0.8).abs() < 1e-12);
        assert!((m.score(&path).unwrap() - 0.06).abs() < 1e-12);
    }

    #[test]
    fn longer_path_scores_lower_without_semantics() {
        let (g, emb) = fixture();
        let s = sub(&g);
        let c = WeightCoefficients {
            lambda_sem: 0.0,
            ..Default::default()
        };
        let m = CostModel::new(&g, &s, &emb, c, Embedding::new(vec![1.0, 0.0]).unwrap());
        let ab = g.resolve_triple("a", "r", "b").unwrap();
        let bc = g.resolve_triple("b", "r", "c").unwrap();
        let short = Path::from_edges(vec![ab]).unwrap();
        let long = Path::from_edges(vec![ab, bc]).unwrap();
        assert!(m.score(&long).unwrap() < m.score(&short).unwrap());
    }

    #[test]
    fn soft_multiplier_divides_cost() {
        let (g, emb) = fixture();
        let mut s = sub(&g);
        let ab = g.resolve_triple("a", "r", "b").unwrap();
        let c = WeightCoefficients {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            lambda_sem: 0.0,
            ..Default::default()
        };
        s.set_soft_multiplier(ab, 1.0).unwrap();
        let m = CostModel::new(&g, &s, &emb, c, Embedding::new(vec![1.0, 0.0]).unwrap());
        assert_eq!(m.edge_cost(&ab).unwrap(), 0.5);
    }

    #[test]
    fn empty_path_is_error() {
        assert!(matches!(Path::from_edges(vec![]), Err(Error::EmptyPath)));
    }

    #[test]
    fn negative_coefficients_rejected() {
        let c = WeightCoefficients {
            beta: -0.1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
