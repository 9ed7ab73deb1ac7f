//! Tunables and the flat `key = value` configuration format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dialogue::mask::MaskParams;
use crate::enumerate::EnumerationBudget;
use crate::error::{Error, Result};
use crate::score::GumbelConfig;
use crate::weights::{StructMode, WeightCoefficients};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Verifier fixed at 1 with no refutation gate.
    pub no_verifier: bool,
    /// Only the top selected path reaches the reasoner, with coefficient 1.
    pub no_soft_injection: bool,
    pub single_round: bool,
    /// `alpha = beta = gamma = 1/3`.
    pub fixed_weights: bool,
    /// Skip attention masses and alignment loss.
    pub no_align_diagnostics: bool,
}

/// Everything one episode needs besides the graph, embeddings and reasoner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub coeffs: WeightCoefficients,
    pub budget: EnumerationBudget,
    pub tau: f64,
    pub deterministic: bool,
    pub seed: u64,
    pub select_top_k: usize,
    pub select_threshold: f64,
    pub rho: f64,
    pub rounds: usize,
    pub conf_threshold: f64,
    pub edit_budget: usize,
    pub radius: u32,
    pub knn: usize,
    pub mask: MaskParams,
    pub causal_diagnostics: bool,
    pub ablations: Ablations,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            coeffs: WeightCoefficients::default(),
            budget: EnumerationBudget::default(),
            tau: 0.2,
            deterministic: false,
            seed: 0,
            select_top_k: 8,
            select_threshold: 0.0,
            rho: 1.0,
            rounds: 3,
            conf_threshold: 0.7,
            edit_budget: 4,
            radius: 2,
            knn: 0,
            mask: MaskParams::default(),
            causal_diagnostics: false,
            ablations: Ablations::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.coeffs.validate()?;
        self.budget.validate()?;
        self.gumbel(0).validate()?;
        if self.select_top_k == 0 {
            return Err(Error::Config("select_top_k must be at least 1".into()));
        }
        if !self.select_threshold.is_finite() || self.select_threshold < 0.0 {
            return Err(Error::Config("select_threshold must be >= 0".into()));
        }
        if !self.rho.is_finite() || self.rho < 0.0 {
            return Err(Error::Config("rho must be >= 0".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.conf_threshold > 0.0 && self.conf_threshold <= 1.0) {
            return Err(Error::Config("conf_threshold must lie in (0, 1]".into()));
        }
        if self.radius == 0 {
            return Err(Error::Config("radius must be at least 1".into()));
        }
        if !self.mask.a.is_finite() || !self.mask.b.is_finite() {
            return Err(Error::Config("mask_a and mask_b must be finite".into()));
        }
        Ok(())
    }

    /// Coefficients after the fixed-weights ablation.
    pub fn effective_coeffs(&self) -> WeightCoefficients {
        if self.ablations.fixed_weights {
            WeightCoefficients {
                alpha: 1.0 / 3.0,
                beta: 1.0 / 3.0,
                gamma: 1.0 / 3.0,
                ..self.coeffs
            }
        } else {
            self.coeffs
        }
    }

    pub fn effective_rounds(&self) -> usize {
        if self.ablations.single_round {
            1
        } else {
            self.rounds
        }
    }

    /// Gumbel settings for `round`; noise is redrawn every round.
    pub fn gumbel(&self, round: usize) -> GumbelConfig {
        GumbelConfig {
            temperature: self.tau,
            rng_seed: stream_seed(self.seed, round as u64, 1),
            deterministic: self.deterministic,
        }
    }
}

/// Independent rng stream per (seed, round, purpose).
pub fn stream_seed(seed: u64, round: u64, purpose: u64) -> u64 {
    let mut z = seed
        ^ round.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ purpose.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    Hash,
    File,
    Service,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasonerKind {
    Scripted,
    Service,
}

/// Engine settings plus providers, files and parallelism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub engine: EngineConfig,
    pub embedding: EmbeddingMode,
    pub embedding_file: Option<PathBuf>,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub reasoner: ReasonerKind,
    pub reasoner_timeout_ms: u64,
    pub relation_priors: Option<PathBuf>,
    pub scorer_weights: Option<PathBuf>,
    pub verifier_weights: Option<PathBuf>,
    pub add_inverse: bool,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            embedding: EmbeddingMode::Hash,
            embedding_file: None,
            embedding_dim: crate::embed::DEFAULT_DIM,
            embedding_seed: 0,
            reasoner: ReasonerKind::Scripted,
            reasoner_timeout_ms: 30_000,
            relation_priors: None,
            scorer_weights: None,
            verifier_weights: None,
            add_inverse: false,
            jobs: 1,
        }
    }
}

/// Every key with a one-line description, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("alpha", "structural cost coefficient"),
    ("beta", "semantic gap coefficient"),
    ("gamma", "relation prior coefficient"),
    (
        "lambda_sem",
        "weight of path-query similarity in the path score",
    ),
    ("struct_mode", "structural cost: uniform | degree"),
    ("L", "maximum path length in edges"),
    ("K", "maximum candidate paths per round"),
    ("beam", "beam width"),
    ("walks", "random walks per round"),
    ("restart", "random walk restart probability, in (0, 1)"),
    ("tau", "Gumbel-softmax temperature, > 0"),
    ("deterministic", "disable Gumbel noise: true | false"),
    ("seed", "rng seed"),
    ("select_top_k", "maximum selected paths"),
    (
        "select_threshold",
        "minimum soft weight times verifier score",
    ),
    ("rho", "seed-confidence attenuation exponent, >= 0"),
    ("rounds", "maximum retrieval rounds"),
    (
        "conf_threshold",
        "stop once answer confidence exceeds this, in (0, 1]",
    ),
    ("edit_budget", "maximum graph edits per episode"),
    ("radius", "seed expansion radius in hops"),
    ("knn", "embedding nearest neighbours added per seed"),
    ("mask_a", "soft mask weight on edit relevance"),
    ("mask_b", "soft mask weight on uncertainty"),
    (
        "causal_diagnostics",
        "compute per-path ablation effects: true | false",
    ),
    ("embedding", "embedding provider: hash | file | service"),
    ("embedding_file", "TSV of label<TAB>comma-separated vector"),
    (
        "embedding_dim",
        "embedding dimension for hash and service modes",
    ),
    ("embedding_seed", "seed for hash embeddings"),
    ("reasoner", "reasoner: scripted | service"),
    (
        "reasoner_timeout_ms",
        "per-call timeout for the reasoner service",
    ),
    ("relation_priors", "TSV of relation<TAB>prior overrides"),
    (
        "scorer_weights",
        "TSV of feature<TAB>weight for a linear scorer",
    ),
    (
        "verifier_weights",
        "TSV of feature<TAB>weight for a linear verifier",
    ),
    (
        "add_inverse",
        "add inverse edges when loading: true | false",
    ),
    ("jobs", "parallel episodes in bench and sweep"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad value `{value}` for `{key}`"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let e = &mut self.engine;
        match key.trim() {
            "alpha" => e.coeffs.alpha = parse(key, value)?,
            "beta" => e.coeffs.beta = parse(key, value)?,
            "gamma" => e.coeffs.gamma = parse(key, value)?,
            "lambda_sem" => e.coeffs.lambda_sem = parse(key, value)?,
            "struct_mode" => {
                e.coeffs.struct_mode = value
                    .parse::<StructMode>()
                    .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))?
            }
            "L" => e.budget.max_length = parse(key, value)?,
            "K" => e.budget.max_candidates = parse(key, value)?,
            "beam" => e.budget.beam_size = parse(key, value)?,
            "walks" => e.budget.walks = parse(key, value)?,
            "restart" => e.budget.restart_prob = parse(key, value)?,
            "tau" => e.tau = parse(key, value)?,
            "deterministic" => e.deterministic = parse_bool(key, value)?,
            "seed" => e.seed = parse(key, value)?,
            "select_top_k" => e.select_top_k = parse(key, value)?,
            "select_threshold" => e.select_threshold = parse(key, value)?,
            "rho" => e.rho = parse(key, value)?,
            "rounds" => e.rounds = parse(key, value)?,
            "conf_threshold" => e.conf_threshold = parse(key, value)?,
            "edit_budget" => e.edit_budget = parse(key, value)?,
            "radius" => e.radius = parse(key, value)?,
            "knn" => e.knn = parse(key, value)?,
            "mask_a" => e.mask.a = parse(key, value)?,
            "mask_b" => e.mask.b = parse(key, value)?,
            "causal_diagnostics" => e.causal_diagnostics = parse_bool(key, value)?,
            "embedding" => {
                self.embedding = match value {
                    "hash" => EmbeddingMode::Hash,
                    "file" => EmbeddingMode::File,
                    "service" => EmbeddingMode::Service,
                    _ => return Err(Error::Config(format!("bad value `{value}` for `{key}`"))),
                }
            }
            "embedding_file" => self.embedding_file = opt_path(value),
            "embedding_dim" => self.embedding_dim = parse(key, value)?,
            "embedding_seed" => self.embedding_seed = parse(key, value)?,
            "reasoner" => {
                self.reasoner = match value {
                    "scripted" => ReasonerKind::Scripted,
                    "service" => ReasonerKind::Service,
                    _ => return Err(Error::Config(format!("bad value `{value}` for `{key}`"))),
                }
            }
            "reasoner_timeout_ms" => self.reasoner_timeout_ms = parse(key, value)?,
            "relation_priors" => self.relation_priors = opt_path(value),
            "scorer_weights" => self.scorer_weights = opt_path(value),
            "verifier_weights" => self.verifier_weights = opt_path(value),
            "add_inverse" => self.add_inverse = parse_bool(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment. Relative file paths are
    /// kept as written.
    pub fn parse_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected key = value".into(),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.parse_text(text)?;
        Ok(c)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<'a>(
        &mut self,
        overrides: impl IntoIterator<Item = &'a str>,
    ) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        if self.embedding == EmbeddingMode::File && self.embedding_file.is_none() {
            return Err(Error::Config(
                "embedding = file needs embedding_file".into(),
            ));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    /// Current values in the file format, one key per line.
    pub fn to_text(&self) -> String {
        let map = self.values();
        let mut s = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(s, "{k} = {}", map[k]);
        }
        s
    }

    fn values(&self) -> BTreeMap<&'static str, String> {
        let e = &self.engine;
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let mut m = BTreeMap::new();
        m.insert("alpha", e.coeffs.alpha.to_string());
        m.insert("beta", e.coeffs.beta.to_string());
        m.insert("gamma", e.coeffs.gamma.to_string());
        m.insert("lambda_sem", e.coeffs.lambda_sem.to_string());
        m.insert(
            "struct_mode",
            match e.coeffs.struct_mode {
                StructMode::Uniform => "uniform",
                StructMode::Degree => "degree",
            }
            .to_string(),
        );
        m.insert("L", e.budget.max_length.to_string());
        m.insert("K", e.budget.max_candidates.to_string());
        m.insert("beam", e.budget.beam_size.to_string());
        m.insert("walks", e.budget.walks.to_string());
        m.insert("restart", e.budget.restart_prob.to_string());
        m.insert("tau", e.tau.to_string());
        m.insert("deterministic", e.deterministic.to_string());
        m.insert("seed", e.seed.to_string());
        m.insert("select_top_k", e.select_top_k.to_string());
        m.insert("select_threshold", e.select_threshold.to_string());
        m.insert("rho", e.rho.to_string());
        m.insert("rounds", e.rounds.to_string());
        m.insert("conf_threshold", e.conf_threshold.to_string());
        m.insert("edit_budget", e.edit_budget.to_string());
        m.insert("radius", e.radius.to_string());
        m.insert("knn", e.knn.to_string());
        m.insert("mask_a", e.mask.a.to_string());
        m.insert("mask_b", e.mask.b.to_string());
        m.insert("causal_diagnostics", e.causal_diagnostics.to_string());
        m.insert(
            "embedding",
            match self.embedding {
                EmbeddingMode::Hash => "hash",
                EmbeddingMode::File => "file",
                EmbeddingMode::Service => "service",
            }
            .to_string(),
        );
        m.insert("embedding_file", path(&self.embedding_file));
        m.insert("embedding_dim", self.embedding_dim.to_string());
        m.insert("embedding_seed", self.embedding_seed.to_string());
        m.insert(
            "reasoner",
            match self.reasoner {
                ReasonerKind::Scripted => "scripted",
                ReasonerKind::Service => "service",
            }
            .to_string(),
        );
        m.insert("reasoner_timeout_ms", self.reasoner_timeout_ms.to_string());
        m.insert("relation_priors", path(&self.relation_priors));
        m.insert("scorer_weights", path(&self.scorer_weights));
        m.insert("verifier_weights", path(&self.verifier_weights));
        m.insert("add_inverse", self.add_inverse.to_string());
        m.insert("jobs", self.jobs.to_string());
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let e = EngineConfig::default();
        assert_eq!(
            (e.coeffs.alpha, e.coeffs.beta, e.coeffs.gamma),
            (0.4, 0.4, 0.2)
        );
        assert_eq!((e.tau, e.coeffs.lambda_sem), (0.2, 0.7));
        assert_eq!((e.select_top_k, e.edit_budget, e.rounds), (8, 4, 3));
    }

    #[test]
    fn parses_file_and_overrides() {
        let mut c =
            RunConfig::from_text("# comment\ntau = 0.5\nK=50 # inline\n\nstruct_mode = degree\n")
                .unwrap();
        assert_eq!(c.engine.tau, 0.5);
        assert_eq!(c.engine.budget.max_candidates, 50);
        assert_eq!(c.engine.coeffs.struct_mode, StructMode::Degree);
        c.apply_overrides(["tau=0.1", "deterministic=true"])
            .unwrap();
        assert_eq!(c.engine.tau, 0.1);
        assert!(c.engine.deterministic);
    }

    #[test]
    fn errors() {
        assert!(RunConfig::from_text("tau 0.5").is_err());
        assert!(RunConfig::from_text("nope = 1").is_err());
        assert!(RunConfig::from_text("K = ten").is_err());
        for bad in [
            "tau = 0",
            "tau = -1",
            "rounds = 0",
            "conf_threshold = 1.5",
            "restart = 1",
            "alpha = -0.1",
            "embedding = file",
        ] {
            let c = RunConfig::from_text(bad).unwrap();
            assert!(c.validate().is_err(), "{bad}");
        }
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_overrides([
            "seed=7",
            "embedding_file=/tmp/x.tsv",
            "embedding=file",
            "jobs=3",
        ])
        .unwrap();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn every_key_is_settable() {
        let text = RunConfig::default().to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        RunConfig::from_text(&text).unwrap();
    }

    #[test]
    fn ablation_views() {
        let mut e = EngineConfig::default();
        e.ablations.fixed_weights = true;
        e.ablations.single_round = true;
        let c = e.effective_coeffs();
        assert_eq!(
            (c.alpha, c.beta, c.gamma),
            (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
        );
        assert_eq!(c.lambda_sem, 0.7);
        assert_eq!(e.effective_rounds(), 1);
        assert_ne!(e.gumbel(0).rng_seed, e.gumbel(1).rng_seed);
    }
}
