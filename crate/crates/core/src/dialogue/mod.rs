//! The iterative dialogue between retrieval and a reasoner: diagnostics,
//! their mapping onto graph edits, soft masking and the episode loop.

pub mod diagnostic;
pub mod episode;
pub mod mapper;
pub mod mask;
pub mod reasoner;

pub use diagnostic::{DiagnosticKind, DiagnosticMessage};
pub use episode::{Counters, EditRecord, Engine, EpisodeResult, EpisodeStatus, RoundState};
pub use mapper::map_diagnostic;
pub use mask::{discretize_topk, reduced_k, soft_mask, DiagnosticContext, MaskParams};
pub use reasoner::{
    Capabilities, Constraint, Question, Reasoner, ReasonerOutput, ScriptedReasoner, SelectedPath,
    ServiceReasoner,
};
