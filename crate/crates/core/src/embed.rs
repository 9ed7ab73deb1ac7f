//! Embedding providers and similarity primitives.
//!
//! Three provider modes exist: a seeded hash mode that needs no model files,
//! a TSV file of precomputed vectors, and an HTTP service. [`Embeddings`]
//! wraps any provider with a per-episode cache keyed by graph id.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path as FsPath;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

pub const DEFAULT_DIM: usize = 64;
pub const ENDPOINT_ENV: &str = "KGPATH_EMBED_URL";
pub const TOKEN_ENV: &str = "KGPATH_EMBED_TOKEN";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Self(self.0.iter().map(|v| v / n).collect()))
    }

    pub fn add_scaled(&mut self, other: &Self, k: f64) -> Result<()> {
        check_dims(self, other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.iter().map(|v| v * k).collect())
    }
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Cosine similarity clamped to `[-1, 1]`. Zero vectors are an error.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean of the given vectors, L2-normalized.
pub fn mean_normalized<'a>(vectors: impl IntoIterator<Item = &'a Embedding>) -> Result<Embedding> {
    let mut iter = vectors.into_iter();
    let first = iter.next().ok_or(Error::ZeroVector)?;
    let mut acc = first.clone();
    let mut count = 1usize;
    for v in iter {
        acc.add_scaled(v, 1.0)?;
        count += 1;
    }
    acc.scaled(1.0 / count as f64).normalized()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Item<'a> {
    Entity(&'a str),
    Relation(&'a str),
    Query(&'a str),
}

impl Item<'_> {
    fn tag(&self) -> &'static [u8] {
        match self {
            Item::Entity(_) => b"entity",
            Item::Relation(_) => b"relation",
            Item::Query(_) => b"query",
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Item::Entity(s) | Item::Relation(s) | Item::Query(s) => s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderMode {
    File,
    HashDeterministic,
    ExternalService,
}

pub trait EmbeddingProvider: Send + Sync {
    fn mode(&self) -> ProviderMode;

    fn dim(&self) -> usize;

    fn embed(&self, item: Item<'_>) -> Result<Embedding>;

    /// A vector stored for the literal query text, if the provider has one.
    fn lookup_query(&self, _text: &str) -> Result<Option<Embedding>> {
        Ok(None)
    }
}

/// Seeded pseudorandom unit vectors derived from the item label.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(Self { dim, seed })
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn mode(&self) -> ProviderMode {
        ProviderMode::HashDeterministic
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, item: Item<'_>) -> Result<Embedding> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(item.tag());
        hasher.update([0u8]);
        hasher.update(item.label().as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest[..32]);
        let mut rng = ChaCha8Rng::from_seed(key);
        loop {
            let v: Vec<f64> = (0..self.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let e = Embedding::new(v)?;
            if e.norm() > 0.0 {
                return e.normalized();
            }
        }
    }
}

/// Vectors read from `label<TAB>v1,v2,...`. Entities, relations and literal
/// query texts share one namespace.
#[derive(Clone, Debug, Default)]
pub struct FileEmbedder {
    dim: usize,
    vectors: HashMap<String, Embedding>,
}

impl FileEmbedder {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut out = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let Some((label, values)) = line.split_once('\t') else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected `label<TAB>v1,v2,...`".into(),
                });
            };
            let parsed: std::result::Result<Vec<f64>, _> =
                values.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let values = parsed.map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let e = Embedding::new(values).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            out.insert(label.trim(), e).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(out)
    }

    pub fn from_file(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn insert(&mut self, label: &str, e: Embedding) -> Result<()> {
        if self.vectors.is_empty() {
            self.dim = e.dim();
        } else if e.dim() != self.dim {
            return Err(Error::Dimension {
                left: self.dim,
                right: e.dim(),
            });
        }
        self.vectors.insert(label.to_string(), e);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for FileEmbedder {
    fn mode(&self) -> ProviderMode {
        ProviderMode::File
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, item: Item<'_>) -> Result<Embedding> {
        self.vectors
            .get(item.label())
            .cloned()
            .ok_or_else(|| Error::MissingEmbedding(item.label().to_string()))
    }

    fn lookup_query(&self, text: &str) -> Result<Option<Embedding>> {
        Ok(self.vectors.get(text).cloned())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    items: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// HTTP embedding service: `POST {"items": [...]}` returning
/// `{"vectors": [[...]]}`. Results are cached per label.
pub struct ServiceEmbedder {
    endpoint: String,
    token: Option<String>,
    dim: usize,
    agent: ureq::Agent,
    max_attempts: u32,
    base_backoff: Duration,
    cache: RwLock<HashMap<String, Embedding>>,
}

impl ServiceEmbedder {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, dim: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            token,
            dim,
            agent,
            max_attempts: 3,
            base_backoff: Duration::from_millis(100),
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn from_env(dim: usize) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::Config(format!("{ENDPOINT_ENV} is not set")))?;
        Ok(Self::new(endpoint, std::env::var(TOKEN_ENV).ok(), dim))
    }

    pub fn with_retries(mut self, attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = attempts.max(1);
        self.base_backoff = backoff;
        self
    }

    fn request(&self, items: &[&str]) -> Result<Vec<Embedding>> {
        let mut last = String::new();
        let mut retryable = true;
        let mut attempt = 0;
        while attempt < self.max_attempts && retryable {
            if attempt > 0 {
                std::thread::sleep(self.base_backoff * 2u32.pow(attempt - 1));
            }
            attempt += 1;
            let mut req = self.agent.post(&self.endpoint);
            if let Some(token) = &self.token {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(EmbedRequest { items }) {
                Ok(mut resp) if resp.status().is_success() => {
                    let body: EmbedResponse = resp
                        .body_mut()
                        .read_json()
                        .map_err(|e| Error::Invalid(format!("bad embedding response: {e}")))?;
                    if body.vectors.len() != items.len() {
                        return Err(Error::Invalid(format!(
                            "service returned {} vectors for {} items",
                            body.vectors.len(),
                            items.len()
                        )));
                    }
                    return body
                        .vectors
                        .into_iter()
                        .map(|v| {
                            let e = Embedding::new(v)?;
                            if e.dim() != self.dim {
                                return Err(Error::Dimension {
                                    left: self.dim,
                                    right: e.dim(),
                                });
                            }
                            Ok(e)
                        })
                        .collect();
                }
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    retryable = status >= 500 || status == 429;
                    last = format!("HTTP {status}");
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Service {
            msg: last,
            retryable,
            attempts: attempt,
            retry_after_ms: (self.base_backoff * 2u32.pow(attempt)).as_millis() as u64,
        })
    }
}

impl EmbeddingProvider for ServiceEmbedder {
    fn mode(&self) -> ProviderMode {
        ProviderMode::ExternalService
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, item: Item<'_>) -> Result<Embedding> {
        let label = item.label();
        if let Some(e) = self.cache.read().unwrap().get(label) {
            return Ok(e.clone());
        }
        let e = self.request(&[label])?.remove(0);
        self.cache
            .write()
            .unwrap()
            .insert(label.to_string(), e.clone());
        Ok(e)
    }

    fn lookup_query(&self, text: &str) -> Result<Option<Embedding>> {
        self.embed(Item::Query(text)).map(Some)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Key {
    Entity(EntityId),
    Relation(RelationId),
}

/// Cached access to a provider by graph id.
#[derive(Clone)]
pub struct Embeddings {
    provider: Arc<dyn EmbeddingProvider>,
    cache: Arc<RwLock<HashMap<Key, Arc<Embedding>>>>,
}

impl Embeddings {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            provider,
            cache: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.provider.dim()
    }

    fn cached(&self, key: Key, item: Item<'_>) -> Result<Arc<Embedding>> {
        if let Some(e) = self.cache.read().unwrap().get(&key) {
            return Ok(Arc::clone(e));
        }
        let e = Arc::new(self.provider.embed(item)?);
        if e.dim() != self.provider.dim() {
            return Err(Error::Dimension {
                left: self.provider.dim(),
                right: e.dim(),
            });
        }
        self.cache.write().unwrap().insert(key, Arc::clone(&e));
        Ok(e)
    }

    pub fn entity(&self, graph: &KnowledgeGraph, id: EntityId) -> Result<Arc<Embedding>> {
        self.cached(Key::Entity(id), Item::Entity(graph.entity_label(id)))
    }

    pub fn relation(&self, graph: &KnowledgeGraph, id: RelationId) -> Result<Arc<Embedding>> {
        self.cached(Key::Relation(id), Item::Relation(graph.relation_label(id)))
    }

    /// Query vector: a provider-stored vector for the literal text if there
    /// is one, else the normalized mean over every entity and relation whose
    /// label is fully mentioned in the text, else (hash mode only) the hashed
    /// text itself.
    pub fn query(&self, graph: &KnowledgeGraph, text: &str) -> Result<Embedding> {
        if let Some(e) = self.provider.lookup_query(text)? {
            return Ok(e);
        }
        let tokens = tokenize(text);
        let mut matched = Vec::new();
        for id in graph.entity_ids() {
            if label_mentioned(graph.entity_label(id), &tokens) {
                matched.push(self.entity(graph, id)?);
            }
        }
        for id in graph.relation_ids() {
            if label_mentioned(graph.relation_label(id), &tokens) {
                matched.push(self.relation(graph, id)?);
            }
        }
        if matched.is_empty() {
            return match self.provider.mode() {
                ProviderMode::HashDeterministic => self.provider.embed(Item::Query(text)),
                _ => Err(Error::MissingEmbedding(text.to_string())),
            };
        }
        mean_normalized(matched.iter().map(|e| e.as_ref()))
    }
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// True when every alphanumeric part of `label` is a token of the text.
pub fn label_mentioned(label: &str, tokens: &BTreeSet<String>) -> bool {
    let mut parts = label
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .peekable();
    if parts.peek().is_none() {
        return false;
    }
    parts.all(|p| tokens.contains(&p.to_lowercase()))
}
