//! Per-round operation-count estimate.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub gnn_term: f64,
    pub path_term: f64,
    pub attention_term: f64,
    pub total: f64,
}

/// `layers*|E|*d + K*avg_len*d + tokens*keys*d`.
pub fn estimate_round_cost(
    gnn_layers: usize,
    edges: usize,
    dim: usize,
    k: usize,
    avg_len: f64,
    tokens: usize,
    keys: usize,
) -> CostEstimate {
    let d = dim as f64;
    let gnn_term = gnn_layers as f64 * edges as f64 * d;
    let path_term = k as f64 * avg_len.max(0.0) * d;
    let attention_term = tokens as f64 * keys as f64 * d;
    CostEstimate {
        gnn_term,
        path_term,
        attention_term,
        total: gnn_term + path_term + attention_term,
    }
}
