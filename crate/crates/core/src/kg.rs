//! Triple storage, TSV loading, neighbourhood expansion and the per-query
//! working subgraph that graph edits are applied to.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Embeddings};
use crate::error::{Error, Result};

/// Suffix given to materialized inverse relations.
pub const INVERSE_SUFFIX: &str = "^-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Materialize `r^-1` for every loaded triple.
    pub add_inverse: bool,
}

/// Immutable after loading; shared by concurrent episodes.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    relation_frequency: Vec<u64>,
    prior_override: Vec<Option<f64>>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    out_adj: Vec<Vec<(RelationId, EntityId)>>,
    in_adj: Vec<Vec<(RelationId, EntityId)>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load_triples<R: BufRead>(reader: R, opts: LoadOptions) -> Result<Self> {
        let mut graph = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.trim().is_empty()) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty field".into(),
                });
            }
            let (h, r, t) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            graph.add_triple(h, r, t);
            if opts.add_inverse {
                graph.add_triple(t, &format!("{r}{INVERSE_SUFFIX}"), h);
            }
        }
        Ok(graph)
    }

    pub fn load_file(path: impl AsRef<FsPath>, opts: LoadOptions) -> Result<Self> {
        let file = File::open(path)?;
        Self::load_triples(BufReader::new(file), opts)
    }

    pub fn intern_entity(&mut self, label: &str) -> EntityId {
        if let Some(&id) = self.entity_index.get(label) {
            return id;
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(label.to_string());
        self.entity_index.insert(label.to_string(), id);
        self.out_adj.push(Vec::new());
        self.in_adj.push(Vec::new());
        id
    }

    pub fn intern_relation(&mut self, label: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(label) {
            return id;
        }
        let id = RelationId(self.relations.len() as u32);
        self.relations.push(label.to_string());
        self.relation_index.insert(label.to_string(), id);
        self.relation_frequency.push(0);
        self.prior_override.push(None);
        id
    }

    /// Adds a triple by label. Returns `true` when the triple was new;
    /// duplicates still count towards the relation frequency.
    pub fn add_triple(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.intern_entity(head);
        let r = self.intern_relation(relation);
        let t = self.intern_entity(tail);
        self.relation_frequency[r.index()] += 1;
        let triple = Triple::new(h, r, t);
        if !self.triple_set.insert(triple) {
            return false;
        }
        self.triples.push(triple);
        self.out_adj[h.index()].push((r, t));
        self.in_adj[t.index()].push((r, h));
        true
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entity_index.get(label).copied()
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label).copied()
    }

    pub fn require_entity(&self, label: &str) -> Result<EntityId> {
        self.entity(label)
            .ok_or_else(|| Error::UnknownEntity(label.to_string()))
    }

    pub fn require_relation(&self, label: &str) -> Result<RelationId> {
        self.relation(label)
            .ok_or_else(|| Error::UnknownRelation(label.to_string()))
    }

    pub fn has_entity(&self, id: EntityId) -> bool {
        id.index() < self.entities.len()
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        &self.entities[id.index()]
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        &self.relations[id.index()]
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entities.len() as u32).map(EntityId)
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> + '_ {
        (0..self.relations.len() as u32).map(RelationId)
    }

    pub fn out_edges(&self, id: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_adj[id.index()]
    }

    pub fn in_edges(&self, id: EntityId) -> &[(RelationId, EntityId)] {
        &self.in_adj[id.index()]
    }

    pub fn out_degree(&self, id: EntityId) -> usize {
        self.out_adj[id.index()].len()
    }

    pub fn relation_frequency(&self, id: RelationId) -> u64 {
        self.relation_frequency[id.index()]
    }

    /// Relation prior cost in `[0, 1]`: an override when one was set,
    /// otherwise `1 - freq / max_freq` so frequent relations are cheap.
    pub fn relation_prior(&self, id: RelationId) -> f64 {
        if let Some(p) = self.prior_override[id.index()] {
            return p;
        }
        let max = self.relation_frequency.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return 0.0;
        }
        1.0 - self.relation_frequency[id.index()] as f64 / max as f64
    }

    pub fn set_relation_prior(&mut self, id: RelationId, prior: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&prior) {
            return Err(Error::Invalid(format!(
                "relation prior {prior} outside [0, 1]"
            )));
        }
        self.prior_override[id.index()] = Some(prior);
        Ok(())
    }

    /// Reads `relation<TAB>prior_cost` overrides. Unknown relations are an error.
    pub fn load_relation_priors<R: BufRead>(&mut self, reader: R) -> Result<()> {
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(rel), Some(value), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected `relation<TAB>prior_cost`".into(),
                });
            };
            let value: f64 = value.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad prior `{value}`"),
            })?;
            let id = self.require_relation(rel.trim())?;
            self.set_relation_prior(id, value)
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
        }
        Ok(())
    }

    pub fn resolve_triple(&self, head: &str, relation: &str, tail: &str) -> Result<Triple> {
        Ok(Triple::new(
            self.require_entity(head)?,
            self.require_relation(relation)?,
            self.require_entity(tail)?,
        ))
    }

    pub fn display_triple(&self, t: &Triple) -> String {
        format!(
            "({}, {}, {})",
            self.entity_label(t.head),
            self.relation_label(t.relation),
            self.entity_label(t.tail)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCandidate {
    pub entity: EntityId,
    pub confidence: f64,
}

impl SeedCandidate {
    pub fn new(entity: EntityId, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Invalid(format!(
                "seed confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self { entity, confidence })
    }
}

/// A graph edit produced by the diagnostic mapper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action")]
pub enum GraphEdit {
    ExpandSeed { entity: EntityId, radius: u32 },
    PruneEdge { triple: Triple },
    ConfirmTriple { triple: Triple },
    RefuteTriple { triple: Triple },
    SwapSeed { from: EntityId, to: EntityId },
}

impl GraphEdit {
    /// +1 for confirmations, -1 for refutations, 0 otherwise.
    pub fn relevance(&self) -> f64 {
        match self {
            GraphEdit::ConfirmTriple { .. } => 1.0,
            GraphEdit::RefuteTriple { .. } => -1.0,
            _ => 0.0,
        }
    }

    pub fn describe(&self, graph: &KnowledgeGraph) -> String {
        match self {
            GraphEdit::ExpandSeed { entity, radius } => {
                format!("ExpandSeed({}, {radius})", graph.entity_label(*entity))
            }
            GraphEdit::PruneEdge { triple } => format!("PruneEdge{}", graph.display_triple(triple)),
            GraphEdit::ConfirmTriple { triple } => {
                format!("ConfirmTriple{}", graph.display_triple(triple))
            }
            GraphEdit::RefuteTriple { triple } => {
                format!("RefuteTriple{}", graph.display_triple(triple))
            }
            GraphEdit::SwapSeed { from, to } => format!(
                "SwapSeed({} -> {})",
                graph.entity_label(*from),
                graph.entity_label(*to)
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EditReport {
    pub applied: usize,
    /// Edits that had nothing to act on (e.g. pruning an absent edge).
    pub warnings: Vec<String>,
}

/// The working subgraph of one query episode.
#[derive(Clone, Debug)]
pub struct Subgraph {
    round: u32,
    radius: u32,
    seeds: Vec<SeedCandidate>,
    nodes: HashMap<EntityId, u32>,
    edges: HashMap<Triple, u32>,
    pruned: BTreeSet<Triple>,
    soft: BTreeMap<Triple, f64>,
    confirmed: BTreeSet<Triple>,
    refuted: BTreeSet<Triple>,
}

impl Subgraph {
    fn empty(seeds: Vec<SeedCandidate>, radius: u32) -> Self {
        Self {
            round: 0,
            radius,
            seeds,
            nodes: HashMap::new(),
            edges: HashMap::new(),
            pruned: BTreeSet::new(),
            soft: BTreeMap::new(),
            confirmed: BTreeSet::new(),
            refuted: BTreeSet::new(),
        }
    }

    /// All nodes within `radius` directed hops of any seed plus the `knn`
    /// nearest entities (by embedding cosine) to each seed, with induced edges.
    pub fn expand_neighborhood(
        graph: &KnowledgeGraph,
        seeds: &[SeedCandidate],
        radius: u32,
        knn: usize,
        embeddings: Option<&Embeddings>,
    ) -> Result<Self> {
        if radius == 0 {
            return Err(Error::Invalid("radius must be at least 1".into()));
        }
        for s in seeds {
            if !graph.has_entity(s.entity) {
                return Err(Error::UnknownEntity(format!("#{}", s.entity.0)));
            }
        }
        let mut sub = Self::empty(seeds.to_vec(), radius);
        for s in seeds {
            let region = bfs_region(graph, s.entity, radius);
            sub.add_nodes(graph, region);
            if knn > 0 {
                let emb = embeddings.ok_or_else(|| {
                    Error::Invalid("k-NN expansion needs an embedding provider".into())
                })?;
                let near = nearest_entities(graph, emb, s.entity, knn)?;
                sub.add_nodes(graph, near);
            }
        }
        Ok(sub)
    }

    fn add_nodes(&mut self, graph: &KnowledgeGraph, nodes: impl IntoIterator<Item = EntityId>) {
        let round = self.round;
        let fresh: Vec<EntityId> = nodes
            .into_iter()
            .filter(|n| {
                if self.nodes.contains_key(n) {
                    false
                } else {
                    self.nodes.insert(*n, round);
                    true
                }
            })
            .collect();
        for n in fresh {
            for &(r, t) in graph.out_edges(n) {
                if self.nodes.contains_key(&t) {
                    self.add_edge(Triple::new(n, r, t));
                }
            }
            for &(r, h) in graph.in_edges(n) {
                if self.nodes.contains_key(&h) {
                    self.add_edge(Triple::new(h, r, n));
                }
            }
        }
    }

    fn add_edge(&mut self, t: Triple) {
        if !self.pruned.contains(&t) {
            self.edges.entry(t).or_insert(self.round);
        }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn set_round(&mut self, round: u32) {
        self.round = round;
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn seeds(&self) -> &[SeedCandidate] {
        &self.seeds
    }

    pub fn seed_confidence(&self, id: EntityId) -> Option<f64> {
        self.seeds
            .iter()
            .find(|s| s.entity == id)
            .map(|s| s.confidence)
    }

    pub fn contains_node(&self, id: EntityId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn contains_edge(&self, t: &Triple) -> bool {
        self.edges.contains_key(t)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_round(&self, id: EntityId) -> Option<u32> {
        self.nodes.get(&id).copied()
    }

    pub fn edge_round(&self, t: &Triple) -> Option<u32> {
        self.edges.get(t).copied()
    }

    pub fn sorted_nodes(&self) -> Vec<EntityId> {
        let mut v: Vec<_> = self.nodes.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn sorted_edges(&self) -> Vec<Triple> {
        let mut v: Vec<_> = self.edges.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Outgoing subgraph edges of `node`, in base-graph adjacency order.
    pub fn out_edges<'g>(
        &'g self,
        graph: &'g KnowledgeGraph,
        node: EntityId,
    ) -> impl Iterator<Item = Triple> + 'g {
        graph
            .out_edges(node)
            .iter()
            .map(move |&(r, t)| Triple::new(node, r, t))
            .filter(move |t| self.edges.contains_key(t))
    }

    pub fn soft_multiplier(&self, t: &Triple) -> f64 {
        self.soft.get(t).copied().unwrap_or(0.0)
    }

    pub fn set_soft_multiplier(&mut self, t: Triple, delta: f64) -> Result<()> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Invalid(format!(
                "soft multiplier {delta} must be >= 0"
            )));
        }
        self.soft.insert(t, delta);
        Ok(())
    }

    pub fn is_refuted(&self, t: &Triple) -> bool {
        self.refuted.contains(t)
    }

    pub fn refuted(&self) -> &BTreeSet<Triple> {
        &self.refuted
    }

    pub fn confirmed(&self) -> &BTreeSet<Triple> {
        &self.confirmed
    }

    pub fn pruned(&self) -> &BTreeSet<Triple> {
        &self.pruned
    }

    /// Applies edits at the current round. `deltas` holds the soft mask
    /// value per edit (parallel to `edits`); confirmations and refutations
    /// write it into the edge's soft multiplier. An empty slice leaves
    /// multipliers untouched.
    pub fn apply_edits(
        &mut self,
        graph: &KnowledgeGraph,
        edits: &[GraphEdit],
        deltas: &[f64],
    ) -> Result<EditReport> {
        if !deltas.is_empty() && deltas.len() != edits.len() {
            return Err(Error::Invalid(format!(
                "{} deltas for {} edits",
                deltas.len(),
                edits.len()
            )));
        }
        for edit in edits {
            self.check_edit(graph, edit)?;
        }
        let mut report = EditReport::default();
        for (i, edit) in edits.iter().enumerate() {
            let delta = deltas.get(i).copied();
            match *edit {
                GraphEdit::ExpandSeed { entity, radius } => {
                    let region = bfs_region(graph, entity, radius);
                    self.add_nodes(graph, region);
                }
                GraphEdit::PruneEdge { triple } => {
                    if self.edges.remove(&triple).is_none() {
                        report.warnings.push(format!(
                            "prune of absent edge {}",
                            graph.display_triple(&triple)
                        ));
                        self.pruned.insert(triple);
                        continue;
                    }
                    self.pruned.insert(triple);
                }
                GraphEdit::ConfirmTriple { triple } => {
                    self.refuted.remove(&triple);
                    self.confirmed.insert(triple);
                    if let Some(d) = delta {
                        self.set_soft_multiplier(triple, d)?;
                    }
                }
                GraphEdit::RefuteTriple { triple } => {
                    self.confirmed.remove(&triple);
                    self.refuted.insert(triple);
                    if let Some(d) = delta {
                        self.set_soft_multiplier(triple, d)?;
                    }
                }
                GraphEdit::SwapSeed { from, to } => self.swap_seed(graph, from, to),
            }
            report.applied += 1;
        }
        Ok(report)
    }

    fn check_edit(&self, graph: &KnowledgeGraph, edit: &GraphEdit) -> Result<()> {
        let check_entity = |id: EntityId| {
            if graph.has_entity(id) {
                Ok(())
            } else {
                Err(Error::UnknownEntity(format!("#{}", id.0)))
            }
        };
        let check_triple = |t: &Triple| {
            check_entity(t.head)?;
            check_entity(t.tail)?;
            if t.relation.index() >= graph.num_relations() {
                return Err(Error::UnknownRelation(format!("#{}", t.relation.0)));
            }
            Ok(())
        };
        match edit {
            GraphEdit::ExpandSeed { entity, .. } => check_entity(*entity),
            GraphEdit::PruneEdge { triple }
            | GraphEdit::ConfirmTriple { triple }
            | GraphEdit::RefuteTriple { triple } => check_triple(triple),
            GraphEdit::SwapSeed { from, to } => {
                check_entity(*from)?;
                check_entity(*to)
            }
        }
    }

    /// Drops the round-0 region that only `from` reaches and grows a region
    /// around `to` at the current round.
    fn swap_seed(&mut self, graph: &KnowledgeGraph, from: EntityId, to: EntityId) {
        let confidence = self.seed_confidence(from).unwrap_or(1.0);
        self.seeds.retain(|s| s.entity != from);
        let mut keep: HashSet<EntityId> = HashSet::new();
        for s in &self.seeds {
            keep.extend(bfs_region(graph, s.entity, self.radius));
        }
        for n in bfs_region(graph, from, self.radius) {
            if keep.contains(&n) || self.nodes.get(&n).copied().unwrap_or(0) != 0 {
                continue;
            }
            self.nodes.remove(&n);
        }
        self.edges
            .retain(|t, _| self.nodes.contains_key(&t.head) && self.nodes.contains_key(&t.tail));
        if !self.seeds.iter().any(|s| s.entity == to) {
            self.seeds.push(SeedCandidate {
                entity: to,
                confidence,
            });
        }
        let region = bfs_region(graph, to, self.radius);
        self.add_nodes(graph, region);
    }

    pub fn dump(&self, graph: &KnowledgeGraph) -> SubgraphDump {
        SubgraphDump {
            round: self.round,
            seeds: self
                .seeds
                .iter()
                .map(|s| (graph.entity_label(s.entity).to_string(), s.confidence))
                .collect(),
            nodes: self
                .sorted_nodes()
                .into_iter()
                .map(|n| NodeDump {
                    label: graph.entity_label(n).to_string(),
                    round: self.nodes[&n],
                })
                .collect(),
            edges: self
                .sorted_edges()
                .into_iter()
                .map(|t| EdgeDump {
                    head: graph.entity_label(t.head).to_string(),
                    relation: graph.relation_label(t.relation).to_string(),
                    tail: graph.entity_label(t.tail).to_string(),
                    round: self.edges[&t],
                    soft_multiplier: self.soft_multiplier(&t),
                })
                .collect(),
            pruned: self
                .pruned
                .iter()
                .map(|t| graph.display_triple(t))
                .collect(),
            confirmed: self
                .confirmed
                .iter()
                .map(|t| graph.display_triple(t))
                .collect(),
            refuted: self
                .refuted
                .iter()
                .map(|t| graph.display_triple(t))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NodeDump {
    pub label: String,
    pub round: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EdgeDump {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub round: u32,
    pub soft_multiplier: f64,
}

/// JSON debugging view of a subgraph.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SubgraphDump {
    pub round: u32,
    pub seeds: Vec<(String, f64)>,
    pub nodes: Vec<NodeDump>,
    pub edges: Vec<EdgeDump>,
    pub pruned: Vec<String>,
    pub confirmed: Vec<String>,
    pub refuted: Vec<String>,
}

/// Nodes within `radius` directed hops of `start`, in BFS order.
pub fn bfs_region(graph: &KnowledgeGraph, start: EntityId, radius: u32) -> Vec<EntityId> {
    let mut seen = HashSet::from([start]);
    let mut order = vec![start];
    let mut queue = VecDeque::from([(start, 0u32)]);
    while let Some((n, d)) = queue.pop_front() {
        if d == radius {
            continue;
        }
        for &(_, t) in graph.out_edges(n) {
            if seen.insert(t) {
                order.push(t);
                queue.push_back((t, d + 1));
            }
        }
    }
    order
}

/// Exact k-NN by cosine over every entity; ties go to the lower id.
pub fn nearest_entities(
    graph: &KnowledgeGraph,
    embeddings: &Embeddings,
    center: EntityId,
    k: usize,
) -> Result<Vec<EntityId>> {
    let c = embeddings.entity(graph, center)?;
    let mut scored = Vec::with_capacity(graph.num_entities());
    for id in graph.entity_ids().filter(|&id| id != center) {
        let e = embeddings.entity(graph, id)?;
        scored.push((cosine(&c, &e)?, id));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
}

impl fmt::Display for SubgraphDump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}",
            serde_json::to_string_pretty(self).map_err(|_| fmt::Error)?
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(lines: &str) -> KnowledgeGraph {
        KnowledgeGraph::load_triples(lines.as_bytes(), LoadOptions::default()).unwrap()
    }

    fn seed(g: &KnowledgeGraph, label: &str) -> SeedCandidate {
        SeedCandidate::new(g.entity(label).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn empty_file_is_empty_graph() {
        let g = graph("");
        assert_eq!(g.num_entities(), 0);
        assert_eq!(g.num_triples(), 0);
    }

    #[test]
    fn single_line() {
        let g = graph("a\tr\tb\n");
        assert_eq!(
            (g.num_entities(), g.num_relations(), g.num_triples()),
            (2, 1, 1)
        );
        assert_eq!(g.entity_label(EntityId(0)), "a");
        assert_eq!(g.entity_label(EntityId(1)), "b");
    }

    #[test]
    fn duplicate_lines_stored_once_but_counted() {
        let g = graph("a\tr\tb\na\tr\tb\n");
        assert_eq!(g.num_triples(), 1);
        assert_eq!(g.relation_frequency(g.relation("r").unwrap()), 2);
        assert_eq!(g.out_degree(g.entity("a").unwrap()), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err =
            KnowledgeGraph::load_triples("a\tr\tb\na\tr\n".as_bytes(), LoadOptions::default())
                .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverse_materialization() {
        let g =
            KnowledgeGraph::load_triples("a\tr\tb\n".as_bytes(), LoadOptions { add_inverse: true })
                .unwrap();
        assert_eq!(g.num_triples(), 2);
        assert!(g.contains(&g.resolve_triple("b", "r^-1", "a").unwrap()));
    }

    #[test]
    fn relation_prior_is_rarity_cost() {
        let g = graph("a\tcommon\tb\nb\tcommon\tc\nc\tcommon\td\nd\trare\ta\n");
        assert_eq!(g.relation_prior(g.relation("common").unwrap()), 0.0);
        let rare = g.relation_prior(g.relation("rare").unwrap());
        assert!((rare - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn prior_overrides() {
        let mut g = graph("a\tr\tb\n");
        g.load_relation_priors("r\t0.25\n".as_bytes()).unwrap();
        assert_eq!(g.relation_prior(g.relation("r").unwrap()), 0.25);
        assert!(g.load_relation_priors("r\t1.5\n".as_bytes()).is_err());
        assert!(matches!(
            g.load_relation_priors("zzz\t0.1\n".as_bytes()),
            Err(Error::UnknownRelation(_))
        ));
    }

    #[test]
    fn isolated_seed() {
        let mut g = graph("a\tr\tb\n");
        let iso = g.intern_entity("iso");
        let s = SeedCandidate::new(iso, 1.0).unwrap();
        let sub = Subgraph::expand_neighborhood(&g, &[s], 2, 0, None).unwrap();
        assert_eq!(sub.sorted_nodes(), vec![iso]);
        assert_eq!(sub.num_edges(), 0);
    }

    #[test]
    fn chain_radius_one() {
        let g = graph("a\tr\tb\nb\tr\tc\n");
        let sub = Subgraph::expand_neighborhood(&g, &[seed(&g, "a")], 1, 0, None).unwrap();
        let labels: Vec<_> = sub
            .sorted_nodes()
            .into_iter()
            .map(|n| g.entity_label(n))
            .collect();
        assert_eq!(labels, vec!["a", "b"]);
        assert_eq!(sub.num_edges(), 1);
    }

    #[test]
    fn unknown_seed_is_error() {
        let g = graph("a\tr\tb\n");
        let s = SeedCandidate {
            entity: EntityId(99),
            confidence: 1.0,
        };
        assert!(matches!(
            Subgraph::expand_neighborhood(&g, &[s], 1, 0, None),
            Err(Error::UnknownEntity(_))
        ));
    }

    #[test]
    fn seed_confidence_range() {
        assert!(SeedCandidate::new(EntityId(0), 1.2).is_err());
        assert!(SeedCandidate::new(EntityId(0), -0.1).is_err());
    }

    #[test]
    fn edits_identity_and_prune() {
        let g = graph("a\tr\tb\nb\tr\tc\n");
        let mut sub = Subgraph::expand_neighborhood(&g, &[seed(&g, "a")], 2, 0, None).unwrap();
        let before = sub.dump(&g);
        sub.apply_edits(&g, &[], &[]).unwrap();
        assert_eq!(sub.dump(&g), before);

        let t = g.resolve_triple("a", "r", "b").unwrap();
        let report = sub
            .apply_edits(&g, &[GraphEdit::PruneEdge { triple: t }], &[])
            .unwrap();
        assert!(report.warnings.is_empty());
        assert!(!sub.contains_edge(&t));
        let report = sub
            .apply_edits(&g, &[GraphEdit::PruneEdge { triple: t }], &[])
            .unwrap();
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn pruned_edges_stay_out_after_expansion() {
        let g = graph("a\tr\tb\nb\tr\tc\n");
        let mut sub = Subgraph::expand_neighborhood(&g, &[seed(&g, "a")], 1, 0, None).unwrap();
        let ab = g.resolve_triple("a", "r", "b").unwrap();
        sub.apply_edits(&g, &[GraphEdit::PruneEdge { triple: ab }], &[])
            .unwrap();
        let a = g.entity("a").unwrap();
        sub.apply_edits(
            &g,
            &[GraphEdit::ExpandSeed {
                entity: a,
                radius: 2,
            }],
            &[],
        )
        .unwrap();
        assert!(!sub.contains_edge(&ab));
        assert!(sub.contains_edge(&g.resolve_triple("b", "r", "c").unwrap()));
    }

    #[test]
    fn expand_seed_records_round() {
        let g = graph("a\tr\tb\nc\tr\td\nc\tr\te\n");
        let mut sub = Subgraph::expand_neighborhood(&g, &[seed(&g, "a")], 1, 0, None).unwrap();
        sub.set_round(1);
        let c = g.entity("c").unwrap();
        sub.apply_edits(
            &g,
            &[GraphEdit::ExpandSeed {
                entity: c,
                radius: 1,
            }],
            &[],
        )
        .unwrap();
        for label in ["c", "d", "e"] {
            assert_eq!(sub.node_round(g.entity(label).unwrap()), Some(1));
        }
        assert_eq!(sub.node_round(g.entity("a").unwrap()), Some(0));
        assert_eq!(
            sub.edge_round(&g.resolve_triple("c", "r", "d").unwrap()),
            Some(1)
        );
    }

    #[test]
    fn confirm_and_refute_set_multiplier() {
        let g = graph("a\tr\tb\n");
        let mut sub = Subgraph::expand_neighborhood(&g, &[seed(&g, "a")], 1, 0, None).unwrap();
        let t = g.resolve_triple("a", "r", "b").unwrap();
        sub.apply_edits(&g, &[GraphEdit::ConfirmTriple { triple: t }], &[0.9])
            .unwrap();
        assert_eq!(sub.soft_multiplier(&t), 0.9);
        assert!(sub.confirmed().contains(&t));
        sub.apply_edits(&g, &[GraphEdit::RefuteTriple { triple: t }], &[0.1])
            .unwrap();
        assert!(sub.is_refuted(&t));
        assert!(!sub.confirmed().contains(&t));
        assert_eq!(sub.soft_multiplier(&t), 0.1);
    }

    #[test]
    fn edit_with_missing_entity_is_error() {
        let g = graph("a\tr\tb\n");
        let mut sub = Subgraph::expand_neighborhood(&g, &[seed(&g, "a")], 1, 0, None).unwrap();
        let bad = GraphEdit::ExpandSeed {
            entity: EntityId(42),
            radius: 1,
        };
        assert!(sub.apply_edits(&g, &[bad], &[]).is_err());
    }

    #[test]
    fn swap_seed_replaces_region() {
        let g = graph("a\tr\tb\nx\tr\ty\n");
        let mut sub = Subgraph::expand_neighborhood(&g, &[seed(&g, "a")], 1, 0, None).unwrap();
        let (a, x) = (g.entity("a").unwrap(), g.entity("x").unwrap());
        sub.apply_edits(&g, &[GraphEdit::SwapSeed { from: a, to: x }], &[])
            .unwrap();
        let labels: Vec<_> = sub
            .sorted_nodes()
            .into_iter()
            .map(|n| g.entity_label(n))
            .collect();
        assert_eq!(labels, vec!["x", "y"]);
        assert_eq!(sub.seeds().len(), 1);
        assert_eq!(sub.seeds()[0].entity, x);
    }

    #[test]
    fn dump_is_json() {
        let g = graph("a\tr\tb\n");
        let sub = Subgraph::expand_neighborhood(&g, &[seed(&g, "a")], 1, 0, None).unwrap();
        let json = serde_json::to_value(sub.dump(&g)).unwrap();
        assert_eq!(json["nodes"].as_array().unwrap().len(), 2);
        assert_eq!(json["edges"][0]["relation"], "r");
    }
}
