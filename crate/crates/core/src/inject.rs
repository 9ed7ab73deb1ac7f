//! Path latents, the soft context mixture, cross-attention and the
//! diagnostics that check whether injected paths are actually attended to.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dialogue::reasoner::{Question, Reasoner, SelectedPath};
use crate::embed::{mean_normalized, Embedding, Embeddings};
use crate::enumerate::Path;
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLatent {
    pub vector: Embedding,
    pub path_id: usize,
}

/// Mean of every node and relation embedding along the path, L2-normalized.
pub fn encode_path(
    path: &Path,
    embeddings: &Embeddings,
    graph: &KnowledgeGraph,
) -> Result<Embedding> {
    if path.is_empty() {
        return Err(Error::EmptyPath);
    }
    let mut parts = Vec::with_capacity(2 * path.len() + 1);
    for n in path.nodes() {
        parts.push(embeddings.entity(graph, n)?);
    }
    for r in path.relations() {
        parts.push(embeddings.relation(graph, r)?);
    }
    mean_normalized(parts.iter().map(|e| e.as_ref()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextMixture {
    pub z_ctx: Embedding,
    pub components: Vec<(usize, f64)>,
    /// Path id to the key columns it owns in the attention matrix.
    pub key_index: BTreeMap<usize, Vec<usize>>,
}

/// `z = sum(alpha_p * latent_p)`, one key per path in selection order.
pub fn context_mixture(selected: &[(PathLatent, f64)]) -> Result<ContextMixture> {
    let Some((first, _)) = selected.first() else {
        return Err(Error::EmptySelection);
    };
    let total: f64 = selected.iter().map(|(_, a)| a).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!(
            "mixture coefficients sum to {total}, expected 1"
        )));
    }
    let mut z = Embedding::zeros(first.vector.dim());
    let mut components = Vec::with_capacity(selected.len());
    let mut key_index = BTreeMap::new();
    for (k, (latent, alpha)) in selected.iter().enumerate() {
        z.add_scaled(&latent.vector, *alpha)?;
        components.push((latent.path_id, *alpha));
        key_index.insert(latent.path_id, vec![k]);
    }
    Ok(ContextMixture {
        z_ctx: z,
        components,
        key_index,
    })
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                left: rows * cols,
                right: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    left: cols,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Row-stochastic attention weights: output tokens by injected keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMatrix(Matrix);

impl AttentionMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.cols() == 0 {
            return Err(Error::Invalid("attention matrix has no keys".into()));
        }
        for i in 0..m.rows() {
            let row = m.row(i);
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Invalid(format!(
                    "attention row {i} has entries outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("attention row {i} sums to {s}")));
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn tokens(&self) -> usize {
        self.0.rows()
    }

    pub fn keys(&self) -> usize {
        self.0.cols()
    }
}

/// Offline attention dump: `{ "tokens": T, "keys": M, "rows": [[...]] }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionFile {
    pub tokens: usize,
    pub keys: usize,
    pub rows: Vec<Vec<f64>>,
}

impl AttentionFile {
    pub fn into_matrix(self) -> Result<AttentionMatrix> {
        if self.rows.len() != self.tokens {
            return Err(Error::Dimension {
                left: self.tokens,
                right: self.rows.len(),
            });
        }
        let m = Matrix::from_rows(&self.rows)?;
        if m.cols() != self.keys {
            return Err(Error::Dimension {
                left: self.keys,
                right: m.cols(),
            });
        }
        AttentionMatrix::new(m)
    }

    pub fn from_json(text: &str) -> Result<AttentionMatrix> {
        serde_json::from_str::<Self>(text)?.into_matrix()
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `softmax(Q K^T / sqrt(d)) V` with the attention weights returned.
pub fn cross_attention(
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
) -> Result<(Matrix, AttentionMatrix)> {
    if keys.rows() == 0 {
        return Err(Error::Invalid(
            "cross-attention needs at least one key".into(),
        ));
    }
    if queries.cols() != keys.cols() {
        return Err(Error::Dimension {
            left: queries.cols(),
            right: keys.cols(),
        });
    }
    if values.rows() != keys.rows() {
        return Err(Error::Dimension {
            left: keys.rows(),
            right: values.rows(),
        });
    }
    let d = queries.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let (t, m, dv) = (queries.rows(), keys.rows(), values.cols());
    let mut attn = vec![0.0; t * m];
    let mut out = vec![0.0; t * dv];
    for i in 0..t {
        let q = queries.row(i);
        let row = &mut attn[i * m..(i + 1) * m];
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = q.iter().zip(keys.row(k)).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        softmax_in_place(row);
        let o = &mut out[i * dv..(i + 1) * dv];
        for (k, &w) in row.iter().enumerate() {
            for (slot, v) in o.iter_mut().zip(values.row(k)) {
                *slot += w * v;
            }
        }
    }
    Ok((
        Matrix::new(t, dv, out)?,
        AttentionMatrix(Matrix::new(t, m, attn)?),
    ))
}

/// Mean over output tokens of the attention placed on `path_id`'s keys.
pub fn attention_mass(
    attention: &AttentionMatrix,
    key_index: &BTreeMap<usize, Vec<usize>>,
    path_id: usize,
) -> Result<f64> {
    let cols = key_index
        .get(&path_id)
        .ok_or_else(|| Error::Invalid(format!("unknown path id {path_id}")))?;
    let m = attention.matrix();
    if let Some(&bad) = cols.iter().find(|&&c| c >= m.cols()) {
        return Err(Error::Invalid(format!("key column {bad} out of range")));
    }
    if m.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..m.rows())
        .map(|t| cols.iter().map(|&k| m.get(t, k)).sum::<f64>())
        .sum();
    Ok(total / m.rows() as f64)
}

/// Mean squared gap between injection coefficients and attention masses,
/// matched by path id.
pub fn alignment_loss(alphas: &BTreeMap<usize, f64>, masses: &BTreeMap<usize, f64>) -> Result<f64> {
    if alphas.len() != masses.len() || alphas.keys().zip(masses.keys()).any(|(a, b)| a != b) {
        return Err(Error::Invalid("alpha and mass path sets differ".into()));
    }
    if alphas.is_empty() {
        return Err(Error::EmptySelection);
    }
    let sum: f64 = alphas.iter().map(|(id, a)| (a - masses[id]).powi(2)).sum();
    Ok(sum / alphas.len() as f64)
}

/// `log P(a | q, S) - log P(a | q, S \ {p})`, from two reasoner calls.
pub fn causal_effect(
    reasoner: &dyn Reasoner,
    question: &Question,
    selection: &[SelectedPath],
    index: usize,
    answer: &str,
) -> Result<f64> {
    if !reasoner.capabilities().log_probs {
        return Err(Error::Unsupported("answer log-probabilities"));
    }
    if index >= selection.len() {
        return Err(Error::Invalid(format!("path index {index} out of range")));
    }
    let with = reasoner.answer_log_prob(question, selection, answer)?;
    let without: Vec<SelectedPath> = selection
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != index)
        .map(|(_, p)| p.clone())
        .collect();
    let ablated = reasoner.answer_log_prob(question, &without, answer)?;
    Ok(with - ablated)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::embed::FileEmbedder;
    use crate::kg::LoadOptions;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn latent(v: &[f64], id: usize) -> PathLatent {
        PathLatent {
            vector: e(v),
            path_id: id,
        }
    }

    #[test]
    fn pooling() {
        let g =
            KnowledgeGraph::load_triples("a\tr\tb\nc\tr\td\n".as_bytes(), LoadOptions::default())
                .unwrap();
        let f = FileEmbedder::from_reader("a\t2,0\nb\t2,0\nr\t2,0\nc\t1,0\nd\t0,1\n".as_bytes())
            .unwrap();
        let emb = Embeddings::new(Arc::new(f));
        let p = Path::single(g.triples()[0]);
        assert_eq!(encode_path(&p, &emb, &g).unwrap(), e(&[1.0, 0.0]));

        // c=(1,0), d=(0,1), r=(2,0): mean (1, 1/3) normalized
        let q = Path::single(g.triples()[1]);
        let got = encode_path(&q, &emb, &g).unwrap();
        let n = (1.0f64 + 1.0 / 9.0).sqrt();
        assert!((got.values()[0] - 1.0 / n).abs() < 1e-12);
        assert!((got.values()[1] - (1.0 / 3.0) / n).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_mean_direction() {
        let m = mean_normalized([&e(&[1.0, 0.0]), &e(&[0.0, 1.0])]).unwrap();
        let h = 0.5f64.sqrt();
        assert!((m.values()[0] - h).abs() < 1e-12 && (m.values()[1] - h).abs() < 1e-12);
    }

    #[test]
    fn mixture_examples() {
        let one = context_mixture(&[(latent(&[0.6, 0.8], 0), 1.0)]).unwrap();
        assert_eq!(one.z_ctx, e(&[0.6, 0.8]));

        let same = context_mixture(&[(latent(&[0.6, 0.8], 0), 0.5), (latent(&[0.6, 0.8], 1), 0.5)])
            .unwrap();
        assert_eq!(same.z_ctx, e(&[0.6, 0.8]));

        let mix = context_mixture(&[
            (latent(&[1.0, 0.0, 0.0], 0), 0.25),
            (latent(&[0.0, 1.0, 0.0], 1), 0.75),
        ])
        .unwrap();
        assert_eq!(mix.z_ctx, e(&[0.25, 0.75, 0.0]));
        assert_eq!(mix.key_index[&1], vec![1]);

        assert!(matches!(context_mixture(&[]), Err(Error::EmptySelection)));
        assert!(context_mixture(&[(latent(&[1.0], 0), 0.5)]).is_err());
    }

    #[test]
    fn single_key_attention() {
        let q = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let k = Matrix::from_rows(&[vec![0.3, 0.1]]).unwrap();
        let v = Matrix::from_rows(&[vec![7.0, -1.0, 2.0]]).unwrap();
        let (out, attn) = cross_attention(&q, &k, &v).unwrap();
        for i in 0..2 {
            assert_eq!(attn.matrix().row(i), &[1.0]);
            assert_eq!(out.row(i), &[7.0, -1.0, 2.0]);
        }
    }

    #[test]
    fn identical_keys_split_evenly() {
        let q = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let k = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let (_, attn) = cross_attention(&q, &k, &k).unwrap();
        assert_eq!(attn.matrix().row(0), &[0.5, 0.5]);
    }

    #[test]
    fn identity_two_by_two() {
        let i = Matrix::identity(2);
        let (_, attn) = cross_attention(&i, &i, &i).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let expect = s.exp() / (s.exp() + 1.0);
        assert!((attn.matrix().get(0, 0) - expect).abs() < 1e-12);
        assert!((expect - 0.6698).abs() < 1e-4);
        assert!((attn.matrix().get(1, 1) - expect).abs() < 1e-12);
    }

    #[test]
    fn no_keys_is_error() {
        let q = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let k = Matrix::new(0, 1, vec![]).unwrap();
        assert!(cross_attention(&q, &k, &k).is_err());
    }

    #[test]
    fn mass_examples() {
        let full =
            AttentionMatrix::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap())
                .unwrap();
        let idx = BTreeMap::from([(0, vec![0]), (1, vec![1])]);
        assert_eq!(attention_mass(&full, &idx, 0).unwrap(), 1.0);
        assert!(attention_mass(&full, &idx, 7).is_err());

        let uniform = AttentionMatrix::new(Matrix::new(3, 4, vec![0.25; 12]).unwrap()).unwrap();
        let idx = BTreeMap::from([(0, vec![0, 2, 3]), (1, vec![1])]);
        assert!((attention_mass(&uniform, &idx, 0).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn alignment_examples() {
        let a = BTreeMap::from([(0, 1.0), (1, 0.0)]);
        assert_eq!(alignment_loss(&a, &a).unwrap(), 0.0);
        let m = BTreeMap::from([(0, 0.0), (1, 1.0)]);
        assert_eq!(alignment_loss(&a, &m).unwrap(), 1.0);
        let other = BTreeMap::from([(0, 0.5), (2, 0.5)]);
        assert!(alignment_loss(&a, &other).is_err());
    }

    #[test]
    fn attention_file() {
        let m = AttentionFile::from_json(r#"{"tokens":2,"keys":2,"rows":[[0.5,0.5],[0.2,0.8]]}"#)
            .unwrap();
        assert_eq!((m.tokens(), m.keys()), (2, 2));
        assert!(AttentionFile::from_json(r#"{"tokens":1,"keys":2,"rows":[[0.5,0.6]]}"#).is_err());
        assert!(AttentionFile::from_json(r#"{"tokens":2,"keys":2,"rows":[[0.5,0.5]]}"#).is_err());
    }
}
