//! Soft masks over edges and paths, and their top-K′ discretization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::enumerate::Path;
use crate::kg::{GraphEdit, Triple};
use crate::score::sample_gumbel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticContext {
    /// Diagnostic embedding; unused by the default logit.
    pub mu: Option<Embedding>,
    pub uncertainty: f64,
}

/// Mask logit `a * relevance + b * uncertainty`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub a: f64,
    pub b: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self { a: 4.0, b: 0.0 }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// +1 if some edit confirms `edge`, -1 if one refutes it, 0 otherwise.
/// A later edit overrides an earlier one.
pub fn edge_relevance(edge: &Triple, edits: &[GraphEdit]) -> f64 {
    edits
        .iter()
        .rev()
        .find_map(|e| match e {
            GraphEdit::ConfirmTriple { triple } | GraphEdit::RefuteTriple { triple }
                if triple == edge =>
            {
                Some(e.relevance())
            }
            _ => None,
        })
        .unwrap_or(0.0)
}

/// -1 if any edge is refuted, else +1 if any is confirmed, else 0.
pub fn path_relevance(path: &Path, edits: &[GraphEdit]) -> f64 {
    let rel: Vec<f64> = path
        .edges()
        .iter()
        .map(|e| edge_relevance(e, edits))
        .collect();
    if rel.iter().any(|&r| r < 0.0) {
        -1.0
    } else if rel.iter().any(|&r| r > 0.0) {
        1.0
    } else {
        0.0
    }
}

fn delta(ctx: &DiagnosticContext, params: &MaskParams, relevance: f64) -> f64 {
    sigmoid(params.a * relevance + params.b * ctx.uncertainty)
}

/// Per-edge mask values.
pub fn soft_mask(
    ctx: &DiagnosticContext,
    params: &MaskParams,
    edges: &[Triple],
    edits: &[GraphEdit],
) -> Vec<f64> {
    edges
        .iter()
        .map(|e| delta(ctx, params, edge_relevance(e, edits)))
        .collect()
}

/// Per-path mask values.
pub fn path_mask(
    ctx: &DiagnosticContext,
    params: &MaskParams,
    paths: &[Path],
    edits: &[GraphEdit],
) -> Vec<f64> {
    paths
        .iter()
        .map(|p| delta(ctx, params, path_relevance(p, edits)))
        .collect()
}

/// Mask value for each edit, from the relevance of the edit itself.
pub fn edit_mask(ctx: &DiagnosticContext, params: &MaskParams, edits: &[GraphEdit]) -> Vec<f64> {
    edits
        .iter()
        .map(|e| delta(ctx, params, e.relevance()))
        .collect()
}

/// `K' = min(ceil(0.2 K), 20)`.
pub fn reduced_k(k: usize) -> usize {
    k.div_ceil(5).min(20)
}

/// Indices of the `K'` items with the largest `(ln delta + g) / tau`,
/// returned in ascending index order. Ties go to the lower index.
pub fn discretize_topk<R: Rng + ?Sized>(
    deltas: &[f64],
    k: usize,
    tau: f64,
    rng: &mut R,
    deterministic: bool,
) -> Vec<usize> {
    let keep = reduced_k(k);
    let mut keyed: Vec<(f64, usize)> = deltas
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let g = if deterministic {
                0.0
            } else {
                sample_gumbel(rng)
            };
            ((d.ln() + g) / tau, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed.into_iter().take(keep).map(|(_, i)| i).collect();
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kg::{EntityId, RelationId};

    fn t(h: u32, r: u32, v: u32) -> Triple {
        Triple::new(EntityId(h), RelationId(r), EntityId(v))
    }

    fn ctx() -> DiagnosticContext {
        DiagnosticContext {
            mu: None,
            uncertainty: 0.5,
        }
    }

    #[test]
    fn mask_values() {
        let (a, b, c) = (t(0, 0, 1), t(1, 0, 2), t(2, 0, 3));
        let edits = [
            GraphEdit::ConfirmTriple { triple: a },
            GraphEdit::RefuteTriple { triple: b },
        ];
        let d = soft_mask(&ctx(), &MaskParams::default(), &[a, b, c], &edits);
        assert!((d[0] - 0.98201379).abs() < 1e-8);
        assert!((d[1] - 0.01798621).abs() < 1e-8);
        assert_eq!(d[2], 0.5);
        // Halving: 1 / (1 + 0.982) of the base cost.
        assert!((1.0 / (1.0 + d[0]) - 0.5045).abs() < 1e-3);

        let p = Path::from_edges(vec![a, b]).unwrap();
        let q = Path::single(a);
        let pm = path_mask(&ctx(), &MaskParams::default(), &[p, q], &edits);
        assert!(pm[0] < 0.02 && pm[1] > 0.98);
    }

    #[test]
    fn k_prime() {
        assert_eq!(reduced_k(200), 20);
        assert_eq!(reduced_k(50), 10);
        assert_eq!(reduced_k(10), 2);
        assert_eq!(reduced_k(1000), 20);
        assert_eq!(reduced_k(3), 1);
        assert_eq!(reduced_k(0), 0);
    }

    #[test]
    fn fewer_items_than_k_prime() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            discretize_topk(&[0.3, 0.9], 200, 0.2, &mut rng, false),
            vec![0, 1]
        );
    }

    #[test]
    fn ties_by_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            discretize_topk(&[0.5; 12], 10, 0.2, &mut rng, true),
            vec![0, 1]
        );
    }

    proptest! {
        #[test]
        fn deterministic_is_sort_and_truncate(d in prop::collection::vec(0.001f64..0.999, 0..80), k in 0usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let got = discretize_topk(&d, k, 0.2, &mut rng, true);
            let mut idx: Vec<usize> = (0..d.len()).collect();
            idx.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap().then(i.cmp(&j)));
            idx.truncate(reduced_k(k));
            idx.sort_unstable();
            prop_assert_eq!(got, idx);
        }
    }
}
