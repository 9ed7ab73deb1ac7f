//! Path retrieval over knowledge graphs.
//!
//! The crate enumerates bounded-length, semantically weighted paths from
//! seed entities, turns them into soft selection weights gated by a
//! verifier, mixes the selected path latents into a context vector and runs
//! an iterative loop in which a reasoner's diagnostics are mapped back onto
//! graph edits. An evaluation harness reports answer, coverage and ranking
//! metrics over benchmark files.

pub mod config;
pub mod dialogue;
pub mod embed;
pub mod enumerate;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod inject;
pub mod kg;
pub mod losses;
pub mod score;
pub mod weights;

pub use config::{Ablations, EngineConfig, RunConfig};
pub use dialogue::{
    DiagnosticKind, DiagnosticMessage, Engine, EpisodeResult, EpisodeStatus, Question, Reasoner,
    RoundState, ScriptedReasoner,
};
pub use embed::{cosine, Embedding, EmbeddingProvider, Embeddings, FileEmbedder, HashEmbedder};
pub use enumerate::{Candidate, EnumerationBudget, Path};
pub use error::{Error, Result};
pub use kg::{EntityId, GraphEdit, KnowledgeGraph, RelationId, SeedCandidate, Subgraph, Triple};
pub use score::{GumbelConfig, ScoredCandidate, Selection};
pub use weights::{CostModel, StructMode, WeightCoefficients};
