//! Candidate path generation under hard budgets.
//!
//! Three generators feed the candidate pool: k cheapest simple paths per
//! seed, a joint beam over all seeds scored on prefixes, and random walks
//! with restart. Their union is deduplicated, ranked by path score and cut
//! to `K`.
//!
//! Ordering ties are always broken by the node-id sequence, then the
//! relation-id sequence.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, SeedCandidate, Triple};
use crate::weights::CostModel;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    edges: Vec<Triple>,
}

impl Path {
    /// Builds a path from contiguous edges. Empty input is an error.
    pub fn from_edges(edges: Vec<Triple>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::EmptyPath);
        }
        for w in edges.windows(2) {
            if w[0].tail != w[1].head {
                return Err(Error::Invalid("path edges are not contiguous".into()));
            }
        }
        Ok(Self { edges })
    }

    pub fn single(edge: Triple) -> Self {
        Self { edges: vec![edge] }
    }

    pub fn extended(&self, edge: Triple) -> Self {
        debug_assert_eq!(self.terminal(), edge.head);
        let mut edges = Vec::with_capacity(self.edges.len() + 1);
        edges.extend_from_slice(&self.edges);
        edges.push(edge);
        Self { edges }
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn start(&self) -> EntityId {
        self.edges[0].head
    }

    pub fn terminal(&self) -> EntityId {
        self.edges[self.edges.len() - 1].tail
    }

    pub fn nodes(&self) -> impl Iterator<Item = EntityId> + '_ {
        std::iter::once(self.start()).chain(self.edges.iter().map(|e| e.tail))
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.edges.iter().map(|e| e.relation)
    }

    pub fn contains_node(&self, id: EntityId) -> bool {
        self.nodes().any(|n| n == id)
    }

    pub fn is_simple(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.edges.len() + 1);
        self.nodes().all(|n| seen.insert(n))
    }

    /// Checks the path invariants: contiguous, simple, `1..=max_len` edges
    /// and starting at one of `seeds`.
    pub fn validate(&self, max_len: usize, seeds: &[SeedCandidate]) -> Result<()> {
        if self.is_empty() || self.len() > max_len {
            return Err(Error::Invalid(format!(
                "path length {} outside 1..={max_len}",
                self.len()
            )));
        }
        if self.edges.windows(2).any(|w| w[0].tail != w[1].head) {
            return Err(Error::Invalid("path edges are not contiguous".into()));
        }
        if !self.is_simple() {
            return Err(Error::Invalid("path repeats a node".into()));
        }
        if !seeds.iter().any(|s| s.entity == self.start()) {
            return Err(Error::Invalid("path does not start at a seed".into()));
        }
        Ok(())
    }

    /// Lexicographic node sequence, then relation sequence.
    pub fn tie_order(&self, other: &Self) -> Ordering {
        self.nodes()
            .cmp(other.nodes())
            .then_with(|| self.relations().cmp(other.relations()))
    }

    pub fn verbalize(&self, graph: &KnowledgeGraph) -> String {
        let mut s = graph.entity_label(self.start()).to_string();
        for e in &self.edges {
            s.push_str(" -");
            s.push_str(graph.relation_label(e.relation));
            s.push_str("-> ");
            s.push_str(graph.entity_label(e.tail));
        }
        s
    }

    /// Parses label triples into a path over `graph`.
    pub fn from_labels(graph: &KnowledgeGraph, triples: &[[String; 3]]) -> Result<Self> {
        let edges = triples
            .iter()
            .map(|[h, r, t]| graph.resolve_triple(h, r, t))
            .collect::<Result<Vec<_>>>()?;
        Self::from_edges(edges)
    }

    pub fn to_labels(&self, graph: &KnowledgeGraph) -> Vec<[String; 3]> {
        self.edges
            .iter()
            .map(|t| {
                [
                    graph.entity_label(t.head).to_string(),
                    graph.relation_label(t.relation).to_string(),
                    graph.entity_label(t.tail).to_string(),
                ]
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerationBudget {
    pub max_length: usize,
    pub max_candidates: usize,
    pub beam_size: usize,
    pub walks: usize,
    pub restart_prob: f64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        Self {
            max_length: 4,
            max_candidates: 200,
            beam_size: 32,
            walks: 100,
            restart_prob: 0.15,
        }
    }
}

impl EnumerationBudget {
    pub fn validate(&self) -> Result<()> {
        if self.max_length == 0 {
            return Err(Error::Config("L must be at least 1".into()));
        }
        if self.max_candidates == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.beam_size == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if !(self.restart_prob > 0.0 && self.restart_prob < 1.0) {
            return Err(Error::Config(format!(
                "restart must lie in (0, 1), got {}",
                self.restart_prob
            )));
        }
        Ok(())
    }
}

/// A ranked candidate: its path, the path score and the effective cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub path: Path,
    pub score: f64,
    pub cost: f64,
}

struct Frontier {
    cost: f64,
    path: Path,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // reversed: BinaryHeap is a max-heap and we pop the cheapest first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.path.tie_order(&self.path))
    }
}

/// Cheapest-first search over simple paths. Because every extension adds a
/// non-negative cost and extends the tie-break key, paths leave the heap in
/// exactly (cost, node sequence, relation sequence) order.
fn best_first(
    model: &CostModel<'_>,
    seed: EntityId,
    max_length: usize,
    mut accept: impl FnMut(&Path, f64) -> bool,
) -> Result<()> {
    let graph = model.graph();
    let sub = model.subgraph();
    if !sub.contains_node(seed) {
        return Ok(());
    }
    let mut heap = BinaryHeap::new();
    for t in sub.out_edges(graph, seed) {
        if t.tail == seed {
            continue;
        }
        heap.push(Frontier {
            cost: model.edge_cost(&t)?,
            path: Path::single(t),
        });
    }
    while let Some(Frontier { cost, path }) = heap.pop() {
        if !accept(&path, cost) {
            return Ok(());
        }
        if path.len() >= max_length {
            continue;
        }
        for t in sub.out_edges(graph, path.terminal()) {
            if path.contains_node(t.tail) {
                continue;
            }
            heap.push(Frontier {
                cost: cost + model.edge_cost(&t)?,
                path: path.extended(t),
            });
        }
    }
    Ok(())
}

/// The `k` cheapest simple paths from `seed` to any node, at most
/// `max_length` edges, in nondecreasing cost order.
pub fn k_shortest_weighted(
    model: &CostModel<'_>,
    seed: EntityId,
    k: usize,
    max_length: usize,
) -> Result<Vec<(Path, f64)>> {
    let mut out = Vec::with_capacity(k.min(1024));
    if k == 0 {
        return Ok(out);
    }
    best_first(model, seed, max_length, |p, c| {
        out.push((p.clone(), c));
        out.len() < k
    })?;
    Ok(out)
}

/// The `k` cheapest simple paths from `source` ending at `target`.
pub fn k_shortest_between(
    model: &CostModel<'_>,
    source: EntityId,
    target: EntityId,
    k: usize,
    max_length: usize,
) -> Result<Vec<(Path, f64)>> {
    let mut out = Vec::new();
    if k == 0 {
        return Ok(out);
    }
    best_first(model, source, max_length, |p, c| {
        if p.terminal() == target {
            out.push((p.clone(), c));
        }
        out.len() < k
    })?;
    Ok(out)
}

fn rank_desc(a: &(Path, f64), b: &(Path, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.tie_order(&b.0))
}

/// Joint beam over all seeds: at each depth every retained prefix is
/// extended by one edge and the `beam_size` best prefixes by path score are
/// kept. Every retained prefix is returned.
pub fn beam_expand(
    model: &CostModel<'_>,
    seeds: &[SeedCandidate],
    budget: &EnumerationBudget,
) -> Result<Vec<Path>> {
    let graph = model.graph();
    let sub = model.subgraph();
    let mut out = Vec::new();
    let mut layer: Vec<(Path, f64)> = Vec::new();
    let mut seen_seeds = HashSet::new();
    for s in seeds {
        if !seen_seeds.insert(s.entity) || !sub.contains_node(s.entity) {
            continue;
        }
        for t in sub.out_edges(graph, s.entity) {
            if t.tail == s.entity {
                continue;
            }
            let p = Path::single(t);
            let score = model.score(&p)?;
            layer.push((p, score));
        }
    }
    for depth in 1..=budget.max_length {
        layer.sort_by(rank_desc);
        layer.truncate(budget.beam_size);
        out.extend(layer.iter().map(|(p, _)| p.clone()));
        if depth == budget.max_length {
            break;
        }
        let mut next = Vec::new();
        for (p, _) in &layer {
            for t in sub.out_edges(graph, p.terminal()) {
                if p.contains_node(t.tail) {
                    continue;
                }
                let q = p.extended(t);
                let score = model.score(&q)?;
                next.push((q, score));
            }
        }
        if next.is_empty() {
            break;
        }
        layer = next;
    }
    Ok(out)
}

/// `walks` random walks, walk `i` starting at seed `i mod |seeds|`. Each
/// step restarts at the seed with probability `restart_prob`, otherwise
/// follows an unvisited outgoing edge chosen with probability proportional
/// to `1 / cost`. A walk stops at `max_length` edges, at a dead end, or
/// after `4 * max_length` steps, and emits its current non-empty path.
pub fn random_walk_proposals(
    model: &CostModel<'_>,
    seeds: &[SeedCandidate],
    budget: &EnumerationBudget,
    rng_seed: u64,
) -> Result<Vec<Path>> {
    const MIN_COST: f64 = 1e-9;
    let graph = model.graph();
    let sub = model.subgraph();
    let starts: Vec<EntityId> = seeds
        .iter()
        .map(|s| s.entity)
        .filter(|&e| sub.contains_node(e))
        .collect();
    let mut out = Vec::new();
    if starts.is_empty() || budget.walks == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let max_steps = 4 * budget.max_length;
    let mut options: Vec<(Triple, f64)> = Vec::new();
    for w in 0..budget.walks {
        let seed = starts[w % starts.len()];
        let mut path: Option<Path> = None;
        for _ in 0..max_steps {
            if path.as_ref().is_some_and(|p| p.len() >= budget.max_length) {
                break;
            }
            if rng.random::<f64>() < budget.restart_prob {
                path = None;
                continue;
            }
            let here = path.as_ref().map_or(seed, |p| p.terminal());
            options.clear();
            for t in sub.out_edges(graph, here) {
                let revisit = match &path {
                    Some(p) => p.contains_node(t.tail),
                    None => t.tail == seed,
                };
                if !revisit {
                    options.push((t, 1.0 / model.edge_cost(&t)?.max(MIN_COST)));
                }
            }
            if options.is_empty() {
                break;
            }
            let total: f64 = options.iter().map(|(_, w)| w).sum();
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = options[options.len() - 1].0;
            for &(t, w) in &options {
                if pick < w {
                    chosen = t;
                    break;
                }
                pick -= w;
            }
            path = Some(match path {
                Some(p) => p.extended(chosen),
                None => Path::single(chosen),
            });
        }
        if let Some(p) = path {
            out.push(p);
        }
    }
    Ok(out)
}

/// The `k` globally cheapest paths over all seeds.
pub fn k_shortest_all_seeds(
    model: &CostModel<'_>,
    seeds: &[SeedCandidate],
    k: usize,
    max_length: usize,
) -> Result<Vec<(Path, f64)>> {
    let mut merged = Vec::new();
    let mut seen = HashSet::new();
    for s in seeds {
        if seen.insert(s.entity) {
            merged.extend(k_shortest_weighted(model, s.entity, k, max_length)?);
        }
    }
    merged.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.tie_order(&b.0)));
    merged.truncate(k);
    Ok(merged)
}

/// Union of the three generators, deduplicated, ranked by score descending
/// and truncated to `max_candidates`.
pub fn enumerate_paths(
    model: &CostModel<'_>,
    seeds: &[SeedCandidate],
    budget: &EnumerationBudget,
    rng_seed: u64,
) -> Result<Vec<Candidate>> {
    if seeds.is_empty() {
        return Err(Error::Invalid("at least one seed is required".into()));
    }
    let mut pool: Vec<Path> =
        k_shortest_all_seeds(model, seeds, budget.max_candidates, budget.max_length)?
            .into_iter()
            .map(|(p, _)| p)
            .collect();
    pool.extend(beam_expand(model, seeds, budget)?);
    pool.extend(random_walk_proposals(model, seeds, budget, rng_seed)?);

    let mut seen = HashSet::with_capacity(pool.len());
    let mut ranked = Vec::with_capacity(pool.len());
    for p in pool {
        if !seen.insert(p.clone()) {
            continue;
        }
        debug_assert!(p.validate(budget.max_length, seeds).is_ok());
        let score = model.score(&p)?;
        let cost = model.path_cost(&p)?;
        ranked.push(Candidate {
            path: p,
            score,
            cost,
        });
    }
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.path.tie_order(&b.path))
    });
    ranked.truncate(budget.max_candidates);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::embed::{Embeddings, HashEmbedder};
    use crate::kg::{LoadOptions, Subgraph};
    use crate::weights::WeightCoefficients;

    struct Fx {
        g: KnowledgeGraph,
        emb: Embeddings,
        sub: Subgraph,
    }

    impl Fx {
        fn new(tsv: &str, seed: &str) -> Self {
            let g = KnowledgeGraph::load_triples(tsv.as_bytes(), LoadOptions::default()).unwrap();
            let emb = Embeddings::new(Arc::new(HashEmbedder::new(8, 3).unwrap()));
            let s = SeedCandidate::new(g.entity(seed).unwrap(), 1.0).unwrap();
            let sub = Subgraph::expand_neighborhood(&g, &[s], 6, 0, None).unwrap();
            Self { g, emb, sub }
        }

        fn model(&self, coeffs: WeightCoefficients) -> CostModel<'_> {
            let q = self.emb.query(&self.g, "query").unwrap();
            CostModel::new(&self.g, &self.sub, &self.emb, coeffs, q)
        }

        fn seed(&self, label: &str) -> SeedCandidate {
            SeedCandidate::new(self.g.entity(label).unwrap(), 1.0).unwrap()
        }

        fn names(&self, p: &Path) -> String {
            p.nodes()
                .map(|n| self.g.entity_label(n))
                .collect::<Vec<_>>()
                .join(">")
        }
    }

    fn unit() -> WeightCoefficients {
        WeightCoefficients {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            lambda_sem: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn isolated_seed_has_no_paths() {
        let mut fx = Fx::new("a\tr\tb\n", "a");
        let iso = fx.g.intern_entity("iso");
        let s = SeedCandidate::new(iso, 1.0).unwrap();
        fx.sub = Subgraph::expand_neighborhood(&fx.g, &[s], 2, 0, None).unwrap();
        let m = fx.model(unit());
        assert!(k_shortest_weighted(&m, iso, 5, 3).unwrap().is_empty());
    }

    #[test]
    fn chain_k2() {
        let fx = Fx::new("a\tr\tb\nb\tr\tc\n", "a");
        let m = fx.model(unit());
        let out = k_shortest_weighted(&m, fx.seed("a").entity, 2, 2).unwrap();
        let got: Vec<_> = out.iter().map(|(p, c)| (fx.names(p), *c)).collect();
        assert_eq!(
            got,
            vec![("a>b".to_string(), 1.0), ("a>b>c".to_string(), 2.0)]
        );
    }

    #[test]
    fn diamond_prefers_cheap_route() {
        let mut fx = Fx::new("a\tr\tb\nb\tr\td\na\tr\tc\nc\tr\td\n", "a");
        for (h, t, d) in [("a", "c", 1.5), ("c", "d", 1.5)] {
            // cost 1 / (1 + 1.5) = 0.4
            let tr = fx.g.resolve_triple(h, "r", t).unwrap();
            fx.sub.set_soft_multiplier(tr, d).unwrap();
        }
        let m = fx.model(unit());
        let d = fx.g.entity("d").unwrap();
        let out = k_shortest_between(&m, fx.seed("a").entity, d, 2, 3).unwrap();
        assert_eq!(fx.names(&out[0].0), "a>c>d");
        assert!((out[0].1 - 0.8).abs() < 1e-12);
        assert_eq!(fx.names(&out[1].0), "a>b>d");
    }

    #[test]
    fn beam_of_one_keeps_best_branch() {
        let fx = Fx::new("a\tr\tgood\na\tr\tbad\n", "a");
        let m = fx.model(unit());
        let good = fx.g.resolve_triple("a", "r", "good").unwrap();
        let mut sub = fx.sub.clone();
        // 0.9 vs 0.1 edge costs -> scores -0.1 vs -0.9 after division
        sub.set_soft_multiplier(good, 9.0).unwrap();
        let m2 = CostModel::new(&fx.g, &sub, &fx.emb, unit(), m.query().clone());
        let budget = EnumerationBudget {
            beam_size: 1,
            max_length: 3,
            ..Default::default()
        };
        let out = beam_expand(&m2, &[fx.seed("a")], &budget).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].edges(), &[good]);
    }

    #[test]
    fn beam_never_exceeds_length() {
        let fx = Fx::new("a\tr\tb\nb\tr\tc\nc\tr\td\nd\tr\te\n", "a");
        let m = fx.model(WeightCoefficients::default());
        let budget = EnumerationBudget {
            max_length: 2,
            ..Default::default()
        };
        let out = beam_expand(&m, &[fx.seed("a")], &budget).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|p| p.len() <= 2));
    }

    #[test]
    fn walks() {
        let fx = Fx::new("a\tr\tb\nb\tr\tc\n", "a");
        let m = fx.model(unit());
        let none = EnumerationBudget {
            walks: 0,
            ..Default::default()
        };
        assert!(random_walk_proposals(&m, &[fx.seed("a")], &none, 1)
            .unwrap()
            .is_empty());

        let no_restart = EnumerationBudget {
            walks: 10,
            restart_prob: 0.0,
            ..Default::default()
        };
        let out = random_walk_proposals(&m, &[fx.seed("a")], &no_restart, 1).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|p| fx.names(p) == "a>b>c"));

        let budget = EnumerationBudget::default();
        let a = random_walk_proposals(&m, &[fx.seed("a")], &budget, 42).unwrap();
        let b = random_walk_proposals(&m, &[fx.seed("a")], &budget, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn union_dedups_and_truncates() {
        let fx = Fx::new("a\tr\tb\n", "a");
        let m = fx.model(WeightCoefficients::default());
        let out = enumerate_paths(&m, &[fx.seed("a")], &EnumerationBudget::default(), 0).unwrap();
        assert_eq!(out.len(), 1);

        let fx = Fx::new("a\tr\tb\na\tr\tc\nb\tr\tc\n", "a");
        let m = fx.model(WeightCoefficients::default());
        let all = enumerate_paths(&m, &[fx.seed("a")], &EnumerationBudget::default(), 0).unwrap();
        let one = enumerate_paths(
            &m,
            &[fx.seed("a")],
            &EnumerationBudget {
                max_candidates: 1,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].path, all[0].path);
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn parallel_relations_both_survive() {
        let fx = Fx::new("a\tr1\tb\na\tr2\tb\n", "a");
        let m = fx.model(WeightCoefficients::default());
        let out = enumerate_paths(&m, &[fx.seed("a")], &EnumerationBudget::default(), 0).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn path_validation() {
        let fx = Fx::new("a\tr\tb\nb\tr\ta\n", "a");
        let ab = fx.g.resolve_triple("a", "r", "b").unwrap();
        let ba = fx.g.resolve_triple("b", "r", "a").unwrap();
        let cyc = Path::from_edges(vec![ab, ba]).unwrap();
        assert!(cyc.validate(4, &[fx.seed("a")]).is_err());
        assert!(Path::from_edges(vec![ab, ab]).is_err());
        assert!(Path::single(ab).validate(4, &[fx.seed("b")]).is_err());
        assert!(Path::single(ab).validate(4, &[fx.seed("a")]).is_ok());
        assert_eq!(Path::single(ab).verbalize(&fx.g), "a -r-> b");
    }
}
