//! Candidate scoring, Gumbel soft weights, verifier gating and injection
//! coefficients.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path as FsPath;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::enumerate::Path;
use crate::error::{Error, Result};
use crate::kg::{SeedCandidate, Subgraph};
use crate::weights::CostModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    /// Position in the round's candidate list; used as the path id.
    pub id: usize,
    pub path: Path,
    pub cost: f64,
    pub u: f64,
    pub soft_weight: f64,
    pub verifier: f64,
    pub injection: f64,
    pub adjusted_injection: f64,
}

impl ScoredCandidate {
    pub fn new(id: usize, path: Path, cost: f64, u: f64) -> Self {
        Self {
            id,
            path,
            cost,
            u,
            soft_weight: 0.0,
            verifier: 0.0,
            injection: 0.0,
            adjusted_injection: 0.0,
        }
    }

    pub fn gated_weight(&self) -> f64 {
        self.soft_weight * self.verifier
    }
}

/// Features a linear scorer or verifier can weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathFeatures {
    pub cost: f64,
    pub semantic: f64,
    pub length: f64,
}

impl PathFeatures {
    pub fn compute(model: &CostModel<'_>, path: &Path) -> Result<Self> {
        Ok(Self {
            cost: model.path_cost(path)?,
            semantic: model.semantic_match(path)?,
            length: path.len() as f64,
        })
    }

    fn get(&self, name: &str) -> Option<f64> {
        match name {
            "bias" => Some(1.0),
            "cost" => Some(self.cost),
            "semantic" => Some(self.semantic),
            "length" => Some(self.length),
            _ => None,
        }
    }
}

pub const FEATURE_NAMES: [&str; 4] = ["bias", "cost", "semantic", "length"];

pub trait CandidateScorer: Send + Sync {
    fn score(&self, model: &CostModel<'_>, path: &Path) -> Result<f64>;
}

/// `u = path score`.
#[derive(Clone, Copy, Debug, Default)]
pub struct PathScorer;

impl CandidateScorer for PathScorer {
    fn score(&self, model: &CostModel<'_>, path: &Path) -> Result<f64> {
        model.score(path)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantScorer(pub f64);

impl CandidateScorer for ConstantScorer {
    fn score(&self, _: &CostModel<'_>, _: &Path) -> Result<f64> {
        Ok(self.0)
    }
}

/// Dot product of a weight table with [`PathFeatures`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearModel {
    weights: BTreeMap<String, f64>,
}

impl LinearModel {
    pub fn new(weights: BTreeMap<String, f64>) -> Result<Self> {
        for (k, v) in &weights {
            if !FEATURE_NAMES.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown feature `{k}`")));
            }
            if !v.is_finite() {
                return Err(Error::Config(format!("weight for `{k}` is not finite")));
            }
        }
        Ok(Self { weights })
    }

    /// `feature<TAB>weight` per line; `#` starts a comment.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut weights = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(k), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected feature<TAB>weight".into(),
                });
            };
            let v: f64 = v.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad weight `{v}`"),
            })?;
            weights.insert(k.trim().to_string(), v);
        }
        Self::new(weights)
    }

    pub fn from_file(path: impl AsRef<FsPath>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    pub fn apply(&self, f: &PathFeatures) -> f64 {
        self.weights
            .iter()
            .map(|(k, w)| w * f.get(k).unwrap_or(0.0))
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct LinearScorer(pub LinearModel);

impl CandidateScorer for LinearScorer {
    fn score(&self, model: &CostModel<'_>, path: &Path) -> Result<f64> {
        Ok(self.0.apply(&PathFeatures::compute(model, path)?))
    }
}

/// Scores every path; `u` must come out finite.
pub fn score_candidates(
    model: &CostModel<'_>,
    paths: &[Path],
    scorer: &dyn CandidateScorer,
) -> Result<Vec<ScoredCandidate>> {
    if paths.is_empty() {
        return Err(Error::Invalid("no candidate paths to score".into()));
    }
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let u = scorer.score(model, p).map_err(|e| Error::Scorer {
                index: i,
                msg: e.to_string(),
            })?;
            if !u.is_finite() {
                return Err(Error::Scorer {
                    index: i,
                    msg: format!("non-finite score {u}"),
                });
            }
            let cost = model.path_cost(p)?;
            Ok(ScoredCandidate::new(i, p.clone(), cost, u))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumbelConfig {
    pub temperature: f64,
    pub rng_seed: u64,
    pub deterministic: bool,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            rng_seed: 0,
            deterministic: false,
        }
    }
}

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One standard Gumbel draw, `-ln(-ln U)` with `U` in the open unit interval.
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return -(-u.ln()).ln();
        }
    }
}

/// Numerically stable softmax of `(u + g) / tau`.
pub fn softmax_with_noise(u: &[f64], noise: &[f64], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = u.iter().zip(noise).map(|(u, g)| (u + g) / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Fills `soft_weight` for every candidate.
pub fn gumbel_soft_weights(
    candidates: &mut [ScoredCandidate],
    config: &GumbelConfig,
) -> Result<()> {
    config.validate()?;
    if candidates.is_empty() {
        return Ok(());
    }
    let u: Vec<f64> = candidates.iter().map(|c| c.u).collect();
    let noise: Vec<f64> = if config.deterministic {
        vec![0.0; u.len()]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        (0..u.len()).map(|_| sample_gumbel(&mut rng)).collect()
    };
    for (c, w) in candidates
        .iter_mut()
        .zip(softmax_with_noise(&u, &noise, config.temperature))
    {
        c.soft_weight = w;
    }
    Ok(())
}

pub trait PathVerifier: Send + Sync {
    fn verify(&self, model: &CostModel<'_>, path: &Path) -> Result<f64>;
}

/// `v = clamp((sem + 1) / 2, 0, 1)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicVerifier;

impl PathVerifier for HeuristicVerifier {
    fn verify(&self, model: &CostModel<'_>, path: &Path) -> Result<f64> {
        Ok(((model.semantic_match(path)? + 1.0) / 2.0).clamp(0.0, 1.0))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantVerifier(pub f64);

impl PathVerifier for ConstantVerifier {
    fn verify(&self, _: &CostModel<'_>, _: &Path) -> Result<f64> {
        Ok(self.0.clamp(0.0, 1.0))
    }
}

/// Logistic of a linear model over [`PathFeatures`].
#[derive(Clone, Debug)]
pub struct LinearVerifier(pub LinearModel);

impl PathVerifier for LinearVerifier {
    fn verify(&self, model: &CostModel<'_>, path: &Path) -> Result<f64> {
        let z = self.0.apply(&PathFeatures::compute(model, path)?);
        Ok(1.0 / (1.0 + (-z).exp()))
    }
}

/// True when the path uses a refuted edge or ends at the head of a refuted
/// triple (the claim "terminal satisfies r to x" was checked and failed).
pub fn is_gated(subgraph: &Subgraph, path: &Path) -> bool {
    let refuted = subgraph.refuted();
    if refuted.is_empty() {
        return false;
    }
    let end = path.terminal();
    path.edges().iter().any(|e| refuted.contains(e)) || refuted.iter().any(|t| t.head == end)
}

/// Verifier score with the refutation gate applied when `gate` is set.
pub fn verify(
    model: &CostModel<'_>,
    path: &Path,
    verifier: &dyn PathVerifier,
    gate: bool,
) -> Result<f64> {
    if gate && is_gated(model.subgraph(), path) {
        return Ok(0.0);
    }
    verifier.verify(model, path)
}

/// The selected set in descending `w * v` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Vec<ScoredCandidate>,
}

impl Selection {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Highest adjusted coefficient, ties to the earlier (better ranked) path.
    pub fn top(&self) -> Option<&ScoredCandidate> {
        self.selected
            .iter()
            .fold(None, |best: Option<&ScoredCandidate>, c| match best {
                Some(b) if b.adjusted_injection >= c.adjusted_injection => Some(b),
                _ => Some(c),
            })
    }
}

/// Keeps candidates with `w * v >= threshold`, truncates to `top_k`, sets
/// `alpha` proportional to `w * v` and attenuates it by seed confidences
/// raised to `rho`.
pub fn select_and_inject(
    candidates: &[ScoredCandidate],
    top_k: usize,
    threshold: f64,
    seeds: &[SeedCandidate],
    rho: f64,
) -> Result<Selection> {
    if rho < 0.0 || !rho.is_finite() {
        return Err(Error::Config(format!(
            "rho must be non-negative, got {rho}"
        )));
    }
    let mut pool: Vec<ScoredCandidate> = candidates
        .iter()
        .filter(|c| c.gated_weight() >= threshold)
        .cloned()
        .collect();
    pool.sort_by(|a, b| {
        b.gated_weight()
            .total_cmp(&a.gated_weight())
            .then_with(|| a.path.tie_order(&b.path))
    });
    pool.truncate(top_k);
    let total: f64 = pool.iter().map(ScoredCandidate::gated_weight).sum();
    if pool.is_empty() || total <= 0.0 {
        return Err(Error::EmptySelection);
    }
    let confidence = |id| {
        seeds
            .iter()
            .find(|s| s.entity == id)
            .map_or(1.0, |s| s.confidence)
    };
    for c in &mut pool {
        c.injection = c.gated_weight() / total;
        let factor: f64 = c.path.nodes().map(|n| confidence(n).powf(rho)).product();
        c.adjusted_injection = c.injection * factor;
    }
    let adjusted: f64 = pool.iter().map(|c| c.adjusted_injection).sum();
    if adjusted <= 0.0 {
        return Err(Error::EmptySelection);
    }
    for c in &mut pool {
        c.adjusted_injection /= adjusted;
    }
    Ok(Selection { selected: pool })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::embed::Embedding;
    use crate::embed::{Embeddings, FileEmbedder};
    use crate::kg::{EntityId, GraphEdit, KnowledgeGraph, LoadOptions, Triple};
    use crate::weights::WeightCoefficients;

    fn cand(id: usize, u: f64) -> ScoredCandidate {
        let t = Triple::new(
            EntityId(0),
            crate::kg::RelationId(0),
            EntityId(id as u32 + 1),
        );
        ScoredCandidate::new(id, Path::single(t), 0.0, u)
    }

    fn det(tau: f64) -> GumbelConfig {
        GumbelConfig {
            temperature: tau,
            rng_seed: 0,
            deterministic: true,
        }
    }

    #[test]
    fn symmetric_pair() {
        let mut c = vec![cand(0, 1.0), cand(1, 1.0)];
        gumbel_soft_weights(&mut c, &det(0.2)).unwrap();
        assert_eq!((c[0].soft_weight, c[1].soft_weight), (0.5, 0.5));
    }

    #[test]
    fn ln2_pair() {
        let mut c = vec![cand(0, 2f64.ln()), cand(1, 0.0)];
        gumbel_soft_weights(&mut c, &det(1.0)).unwrap();
        assert!((c[0].soft_weight - 2.0 / 3.0).abs() < 1e-12);
        assert!((c[1].soft_weight - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hot_is_uniform() {
        let mut c: Vec<_> = (0..7).map(|i| cand(i, i as f64 * 0.5 - 1.5)).collect();
        gumbel_soft_weights(&mut c, &det(1e6)).unwrap();
        for x in &c {
            assert!((x.soft_weight - 1.0 / 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_candidate_weight_one() {
        let mut c = vec![cand(0, -3.0)];
        gumbel_soft_weights(
            &mut c,
            &GumbelConfig {
                temperature: 0.2,
                rng_seed: 9,
                deterministic: false,
            },
        )
        .unwrap();
        assert_eq!(c[0].soft_weight, 1.0);
    }

    #[test]
    fn rejects_nonpositive_tau() {
        let mut c = vec![cand(0, 0.0)];
        assert!(gumbel_soft_weights(&mut c, &det(0.0)).is_err());
        assert!(gumbel_soft_weights(&mut c, &det(-1.0)).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = |s| GumbelConfig {
            temperature: 0.5,
            rng_seed: s,
            deterministic: false,
        };
        let run = |s| {
            let mut c: Vec<_> = (0..5).map(|i| cand(i, 0.0)).collect();
            gumbel_soft_weights(&mut c, &cfg(s)).unwrap();
            c.iter().map(|x| x.soft_weight).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    fn with_weights(wv: &[(f64, f64)]) -> Vec<ScoredCandidate> {
        wv.iter()
            .enumerate()
            .map(|(i, &(w, v))| {
                let mut c = cand(i, 0.0);
                c.soft_weight = w;
                c.verifier = v;
                c
            })
            .collect()
    }

    #[test]
    fn proportional_injection() {
        let c = with_weights(&[(0.6, 1.0), (0.4, 0.5)]);
        let s = select_and_inject(&c, 8, 0.0, &[], 1.0).unwrap();
        assert!((s.selected[0].injection - 0.75).abs() < 1e-12);
        assert!((s.selected[1].injection - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rho_zero_keeps_alpha() {
        let c = with_weights(&[(0.6, 1.0), (0.4, 0.5)]);
        let seeds = [SeedCandidate::new(EntityId(0), 0.3).unwrap()];
        let s = select_and_inject(&c, 8, 0.0, &seeds, 0.0).unwrap();
        for x in &s.selected {
            assert!((x.adjusted_injection - x.injection).abs() < 1e-12);
        }
    }

    #[test]
    fn single_selection_is_one() {
        let c = with_weights(&[(0.6, 1.0), (0.4, 0.5)]);
        let s = select_and_inject(&c, 1, 0.0, &[], 2.0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.selected[0].adjusted_injection, 1.0);
        assert_eq!(s.top().unwrap().id, 0);
    }

    #[test]
    fn seed_confidence_attenuates() {
        // Path 0 starts at a seed with confidence 0.25; path 1 does not.
        let mut c = with_weights(&[(0.5, 1.0), (0.5, 1.0)]);
        c[1].path = Path::single(Triple::new(
            EntityId(9),
            crate::kg::RelationId(0),
            EntityId(8),
        ));
        let seeds = [SeedCandidate::new(EntityId(0), 0.25).unwrap()];
        let s = select_and_inject(&c, 8, 0.0, &seeds, 1.0).unwrap();
        let a0 = s
            .selected
            .iter()
            .find(|x| x.id == 0)
            .unwrap()
            .adjusted_injection;
        assert!((a0 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn threshold_and_empty() {
        let c = with_weights(&[(0.6, 1.0), (0.4, 0.5)]);
        let s = select_and_inject(&c, 8, 0.5, &[], 0.0).unwrap();
        assert_eq!(s.len(), 1);
        assert!(matches!(
            select_and_inject(&c, 8, 0.9, &[], 0.0),
            Err(Error::EmptySelection)
        ));
        let zero = with_weights(&[(1.0, 0.0)]);
        assert!(matches!(
            select_and_inject(&zero, 8, 0.0, &[], 0.0),
            Err(Error::EmptySelection)
        ));
    }

    fn fixture() -> (KnowledgeGraph, Embeddings) {
        let g =
            KnowledgeGraph::load_triples("a\tr\tb\na\ts\tc\n".as_bytes(), LoadOptions::default())
                .unwrap();
        let f = FileEmbedder::from_reader("a\t1,0\nb\t1,0\nc\t-1,0\nr\t1,0\ns\t0,1\n".as_bytes())
            .unwrap();
        (g, Embeddings::new(Arc::new(f)))
    }

    #[test]
    fn default_scorer_counts_hops() {
        let (g, emb) = fixture();
        let seeds = [SeedCandidate::new(g.entity("a").unwrap(), 1.0).unwrap()];
        let sub = Subgraph::expand_neighborhood(&g, &seeds, 2, 0, None).unwrap();
        let coeffs = WeightCoefficients {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            lambda_sem: 0.0,
            ..Default::default()
        };
        let m = CostModel::new(
            &g,
            &sub,
            &emb,
            coeffs,
            Embedding::new(vec![1.0, 0.0]).unwrap(),
        );
        let paths: Vec<Path> = g.triples().iter().map(|t| Path::single(*t)).collect();
        let c = score_candidates(&m, &paths, &PathScorer).unwrap();
        assert!(c.iter().all(|x| x.u == -1.0));
        let z = score_candidates(&m, &paths, &ConstantScorer(0.0)).unwrap();
        assert!(z.iter().all(|x| x.u == 0.0));
        assert!(score_candidates(&m, &[], &PathScorer).is_err());
        let bad = score_candidates(&m, &paths, &ConstantScorer(f64::NAN));
        assert!(matches!(bad, Err(Error::Scorer { index: 0, .. })));
    }

    #[test]
    fn heuristic_and_gate() {
        let (g, emb) = fixture();
        let seeds = [SeedCandidate::new(g.entity("a").unwrap(), 1.0).unwrap()];
        let mut sub = Subgraph::expand_neighborhood(&g, &seeds, 2, 0, None).unwrap();
        let ab = g.resolve_triple("a", "r", "b").unwrap();
        let p = Path::single(ab);
        {
            // a, r, b are all (1, 0): pooled vector equals the query.
            let m = CostModel::new(
                &g,
                &sub,
                &emb,
                Default::default(),
                Embedding::new(vec![1.0, 0.0]).unwrap(),
            );
            assert!((verify(&m, &p, &HeuristicVerifier, true).unwrap() - 1.0).abs() < 1e-12);
            let m = CostModel::new(
                &g,
                &sub,
                &emb,
                Default::default(),
                Embedding::new(vec![0.0, 1.0]).unwrap(),
            );
            assert!((verify(&m, &p, &HeuristicVerifier, true).unwrap() - 0.5).abs() < 1e-12);
        }
        sub.apply_edits(&g, &[GraphEdit::RefuteTriple { triple: ab }], &[])
            .unwrap();
        let m = CostModel::new(
            &g,
            &sub,
            &emb,
            Default::default(),
            Embedding::new(vec![1.0, 0.0]).unwrap(),
        );
        assert_eq!(verify(&m, &p, &HeuristicVerifier, true).unwrap(), 0.0);
        assert_eq!(verify(&m, &p, &ConstantVerifier(1.0), false).unwrap(), 1.0);
    }

    #[test]
    fn linear_model_file() {
        let m = LinearModel::from_reader("# w\nbias\t0.5\nsemantic\t2\n".as_bytes()).unwrap();
        let f = PathFeatures {
            cost: 3.0,
            semantic: 0.25,
            length: 2.0,
        };
        assert_eq!(m.apply(&f), 1.0);
        assert!(LinearModel::from_reader("bogus\t1\n".as_bytes()).is_err());
        assert!(LinearModel::from_reader("bias 1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(u in prop::collection::vec(-50.0f64..50.0, 1..200), seed in any::<u64>(), tau in 0.01f64..10.0) {
            let mut c: Vec<_> = u.iter().enumerate().map(|(i, &x)| cand(i, x)).collect();
            gumbel_soft_weights(&mut c, &GumbelConfig { temperature: tau, rng_seed: seed, deterministic: false }).unwrap();
            let s: f64 = c.iter().map(|x| x.soft_weight).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(c.iter().all(|x| (0.0..=1.0).contains(&x.soft_weight)));
        }

        #[test]
        fn shift_keeps_ranking(u in prop::collection::vec(-10.0f64..10.0, 2..50), shift in -100.0f64..100.0) {
            let mut a: Vec<_> = u.iter().enumerate().map(|(i, &x)| cand(i, x)).collect();
            let mut b: Vec<_> = u.iter().enumerate().map(|(i, &x)| cand(i, x + shift)).collect();
            gumbel_soft_weights(&mut a, &det(0.7)).unwrap();
            gumbel_soft_weights(&mut b, &det(0.7)).unwrap();
            for i in 0..u.len() {
                for j in 0..u.len() {
                    if u[i] > u[j] {
                        prop_assert!(b[i].soft_weight >= b[j].soft_weight);
                        prop_assert!(a[i].soft_weight >= a[j].soft_weight);
                    }
                }
            }
        }

        #[test]
        fn adjusted_sums_to_one(wv in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..30), k in 1usize..10, rho in 0.0f64..3.0, conf in 0.05f64..1.0) {
            let c = with_weights(&wv);
            let seeds = [SeedCandidate::new(EntityId(0), conf).unwrap()];
            let s = select_and_inject(&c, k, 0.0, &seeds, rho).unwrap();
            prop_assert!(s.len() <= k);
            let a: f64 = s.selected.iter().map(|x| x.adjusted_injection).sum();
            let b: f64 = s.selected.iter().map(|x| x.injection).sum();
            prop_assert!((a - 1.0).abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
        }
    }
}
