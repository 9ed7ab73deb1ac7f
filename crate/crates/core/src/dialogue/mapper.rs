//! Rule-based mapping from diagnostics to graph edits.

use log::warn;

use crate::dialogue::diagnostic::{DiagnosticKind, DiagnosticMessage};
use crate::enumerate::Path;
use crate::kg::{GraphEdit, KnowledgeGraph, Subgraph, Triple};

/// Edits for one diagnostic. Labels that do not resolve, and path ids that
/// are out of range, yield no edits and a logged warning.
pub fn map_diagnostic(
    message: &DiagnosticMessage,
    subgraph: &Subgraph,
    graph: &KnowledgeGraph,
    candidates: &[Path],
) -> Vec<GraphEdit> {
    match &message.kind {
        DiagnosticKind::None => Vec::new(),
        DiagnosticKind::Verify {
            head,
            relation,
            tail,
        } => {
            let (Some(h), Some(t)) = (graph.entity(head), graph.entity(tail)) else {
                warn!("VERIFY names an unknown entity: {}", message.raw_text);
                return Vec::new();
            };
            let Some(r) = graph.relation(relation) else {
                warn!("VERIFY names an unknown relation: {}", message.raw_text);
                return Vec::new();
            };
            let triple = Triple::new(h, r, t);
            if graph.contains(&triple) {
                vec![GraphEdit::ConfirmTriple { triple }]
            } else {
                vec![GraphEdit::RefuteTriple { triple }]
            }
        }
        DiagnosticKind::Expand { entity, radius } => match graph.entity(entity) {
            Some(e) if *radius > 0 => vec![GraphEdit::ExpandSeed {
                entity: e,
                radius: *radius,
            }],
            Some(_) => Vec::new(),
            None => {
                warn!("EXPAND names an unknown entity: {}", message.raw_text);
                Vec::new()
            }
        },
        DiagnosticKind::Disambiguate {
            mention,
            alternatives,
        } => {
            let from = graph.entity(mention).or_else(|| {
                subgraph
                    .seeds()
                    .iter()
                    .map(|s| s.entity)
                    .find(|&s| graph.entity_label(s).eq_ignore_ascii_case(mention))
            });
            let Some(from) = from else {
                warn!(
                    "DISAMBIGUATE names an unknown mention: {}",
                    message.raw_text
                );
                return Vec::new();
            };
            match alternatives
                .iter()
                .filter_map(|a| graph.entity(a))
                .find(|&a| a != from)
            {
                Some(to) => vec![GraphEdit::SwapSeed { from, to }],
                None => {
                    warn!(
                        "DISAMBIGUATE has no known alternative: {}",
                        message.raw_text
                    );
                    Vec::new()
                }
            }
        }
        DiagnosticKind::Prune { path_id } => match candidates.get(*path_id) {
            Some(p) => p
                .edges()
                .iter()
                .map(|&triple| GraphEdit::PruneEdge { triple })
                .collect(),
            None => {
                warn!("PRUNE names an unknown path: {}", message.raw_text);
                Vec::new()
            }
        },
    }
}

/// Parses `raw` and maps it; parse failures are logged and produce no edits.
pub fn map_raw(
    raw: &str,
    uncertainty: f64,
    subgraph: &Subgraph,
    graph: &KnowledgeGraph,
    candidates: &[Path],
) -> (Option<DiagnosticMessage>, Vec<GraphEdit>) {
    match DiagnosticMessage::parse(raw, uncertainty.clamp(0.0, 1.0)) {
        Ok(m) => {
            let edits = map_diagnostic(&m, subgraph, graph, candidates);
            (Some(m), edits)
        }
        Err(e) => {
            warn!("unparseable diagnostic: {e}");
            (None, Vec::new())
        }
    }
}
