//! One question episode: the iterative retrieve, select, reason and edit
//! loop, with a per-round trace.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{stream_seed, EngineConfig};
use crate::dialogue::diagnostic::{DiagnosticKind, DiagnosticMessage};
use crate::dialogue::mapper::{map_diagnostic, map_raw};
use crate::dialogue::mask::{discretize_topk, edit_mask, DiagnosticContext};
use crate::dialogue::reasoner::{Question, Reasoner, SelectedPath};
use crate::embed::{Embedding, Embeddings};
use crate::enumerate::{enumerate_paths, Path};
use crate::error::{Error, Result};
use crate::eval::metrics::spearman;
use crate::inject::{
    alignment_loss, attention_mass, causal_effect, context_mixture, cross_attention, encode_path,
    AttentionMatrix, Matrix, PathLatent,
};
use crate::kg::{GraphEdit, KnowledgeGraph, SeedCandidate, Subgraph};
use crate::score::{
    gumbel_soft_weights, score_candidates, select_and_inject, verify, CandidateScorer,
    HeuristicVerifier, PathScorer, PathVerifier, ScoredCandidate, Selection,
};
use crate::weights::CostModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: usize,
    pub path: String,
    pub cost: f64,
    pub u: f64,
    pub soft_weight: f64,
    pub verifier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub id: usize,
    pub path: String,
    pub injection: f64,
    pub adjusted_injection: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub edit: GraphEdit,
    pub text: String,
    pub delta: f64,
    /// Raw text of the diagnostic the edit came from.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub masses: BTreeMap<usize, f64>,
    pub alignment_loss: f64,
    pub spearman: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub reasoner_calls: u64,
    pub logprob_calls: u64,
    pub tokens: u64,
    pub edits: u64,
}

/// Everything that happened in one round. Counters are cumulative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: usize,
    pub subgraph_nodes: usize,
    pub subgraph_edges: usize,
    pub candidates: Vec<CandidateRecord>,
    pub selected: Vec<SelectionRecord>,
    pub mixture: Vec<f64>,
    pub answer: Option<String>,
    pub confidence: f64,
    pub diagnostic: Option<DiagnosticMessage>,
    /// True when the diagnostic was forced by an empty candidate set or an
    /// empty selection rather than produced by the reasoner.
    pub forced: bool,
    pub edits: Vec<EditRecord>,
    /// Edits mapped but not applied (discretization or edit budget).
    pub dropped_edits: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub causal_effects: Vec<(usize, f64)>,
    pub counters: Counters,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpisodeStatus {
    Confident,
    RoundsExhausted,
    Failed { error: String },
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub answer: Option<String>,
    pub confidence: f64,
    pub status: EpisodeStatus,
    pub trace: Vec<RoundState>,
    /// Final-round candidate paths, best first.
    pub candidates: Vec<Path>,
    pub counters: Counters,
    pub answer_in_subgraph: bool,
    pub latency: Duration,
    pub subgraph: Option<Subgraph>,
}

impl EpisodeResult {
    pub fn rounds(&self) -> usize {
        self.trace.len()
    }

    pub fn failed(&self) -> bool {
        matches!(self.status, EpisodeStatus::Failed { .. })
    }

    /// One JSON object per round.
    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.trace {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs episodes over a shared graph and embedding cache.
pub struct Engine<'a> {
    graph: &'a KnowledgeGraph,
    embeddings: &'a Embeddings,
    reasoner: &'a dyn Reasoner,
    scorer: Arc<dyn CandidateScorer>,
    verifier: Arc<dyn PathVerifier>,
    config: EngineConfig,
}

struct RoundCtx {
    t: usize,
    state: RoundState,
    candidates: Vec<Path>,
}

enum Outcome {
    Continue,
    Stop(EpisodeStatus),
}

impl<'a> Engine<'a> {
    pub fn new(
        graph: &'a KnowledgeGraph,
        embeddings: &'a Embeddings,
        reasoner: &'a dyn Reasoner,
        config: EngineConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            graph,
            embeddings,
            reasoner,
            scorer: Arc::new(PathScorer),
            verifier: Arc::new(HeuristicVerifier),
            config,
        })
    }

    pub fn with_scorer(mut self, scorer: Arc<dyn CandidateScorer>) -> Self {
        self.scorer = scorer;
        self
    }

    pub fn with_verifier(mut self, verifier: Arc<dyn PathVerifier>) -> Self {
        self.verifier = verifier;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        self.graph
    }

    /// Runs the loop for one question. Failures after setup end the episode
    /// with a partial trace instead of an error.
    pub fn run(&self, question: &Question, seeds: &[SeedCandidate]) -> Result<EpisodeResult> {
        if seeds.is_empty() {
            return Err(Error::Invalid("at least one seed is required".into()));
        }
        let start = Instant::now();
        let cfg = &self.config;
        let mut sub = Subgraph::expand_neighborhood(
            self.graph,
            seeds,
            cfg.radius,
            cfg.knn,
            Some(self.embeddings),
        )?;
        let mut result = EpisodeResult {
            answer: None,
            confidence: 0.0,
            status: EpisodeStatus::RoundsExhausted,
            trace: Vec::new(),
            candidates: Vec::new(),
            counters: Counters::default(),
            answer_in_subgraph: false,
            latency: Duration::ZERO,
            subgraph: None,
        };
        let query = match self.embeddings.query(self.graph, &question.text) {
            Ok(q) => q,
            Err(e) => {
                result.status = EpisodeStatus::Failed {
                    error: e.to_string(),
                };
                result.latency = start.elapsed();
                result.subgraph = Some(sub);
                return Ok(result);
            }
        };
        for t in 0..cfg.effective_rounds() {
            sub.set_round(t as u32);
            let mut ctx = RoundCtx {
                t,
                state: RoundState {
                    round: t,
                    subgraph_nodes: sub.num_nodes(),
                    subgraph_edges: sub.num_edges(),
                    candidates: Vec::new(),
                    selected: Vec::new(),
                    mixture: Vec::new(),
                    answer: None,
                    confidence: 0.0,
                    diagnostic: None,
                    forced: false,
                    edits: Vec::new(),
                    dropped_edits: 0,
                    attention: None,
                    causal_effects: Vec::new(),
                    counters: result.counters,
                },
                candidates: Vec::new(),
            };
            let outcome = self.round(question, &query, &mut sub, &mut ctx, &mut result.counters);
            ctx.state.counters = result.counters;
            if let Some(a) = &ctx.state.answer {
                result.answer = Some(a.clone());
                result.confidence = ctx.state.confidence;
            }
            result.candidates = std::mem::take(&mut ctx.candidates);
            result.trace.push(ctx.state);
            match outcome {
                Ok(Outcome::Continue) => {}
                Ok(Outcome::Stop(status)) => {
                    result.status = status;
                    break;
                }
                Err(e) => {
                    warn!("episode failed in round {t}: {e}");
                    result.status = EpisodeStatus::Failed {
                        error: e.to_string(),
                    };
                    break;
                }
            }
        }
        result.answer_in_subgraph = result
            .answer
            .as_deref()
            .and_then(|a| self.graph.entity(a))
            .is_some_and(|id| sub.contains_node(id));
        result.latency = start.elapsed();
        result.subgraph = Some(sub);
        Ok(result)
    }

    fn round(
        &self,
        question: &Question,
        query: &Embedding,
        sub: &mut Subgraph,
        ctx: &mut RoundCtx,
        counters: &mut Counters,
    ) -> Result<Outcome> {
        let cfg = &self.config;
        let t = ctx.t;
        let selection = {
            let model = CostModel::new(
                self.graph,
                sub,
                self.embeddings,
                cfg.effective_coeffs(),
                query.clone(),
            );
            let cands = enumerate_paths(
                &model,
                sub.seeds(),
                &cfg.budget,
                stream_seed(cfg.seed, t as u64, 2),
            )?;
            ctx.candidates = cands.iter().map(|c| c.path.clone()).collect();
            if ctx.candidates.is_empty() {
                None
            } else {
                let mut scored = score_candidates(&model, &ctx.candidates, self.scorer.as_ref())?;
                gumbel_soft_weights(&mut scored, &cfg.gumbel(t))?;
                for c in &mut scored {
                    c.verifier = if cfg.ablations.no_verifier {
                        1.0
                    } else {
                        verify(&model, &c.path, self.verifier.as_ref(), true)?
                    };
                }
                ctx.state.candidates = scored.iter().map(|c| self.candidate_record(c)).collect();
                match select_and_inject(
                    &scored,
                    cfg.select_top_k,
                    cfg.select_threshold,
                    sub.seeds(),
                    cfg.rho,
                ) {
                    Ok(s) => Some(s),
                    Err(Error::EmptySelection) => None,
                    Err(e) => return Err(e),
                }
            }
        };

        let Some(selection) = selection else {
            let seed = sub
                .seeds()
                .iter()
                .fold(None, |best: Option<&SeedCandidate>, s| match best {
                    Some(b) if b.confidence >= s.confidence => Some(b),
                    _ => Some(s),
                })
                .ok_or_else(|| Error::Invalid("episode has no seeds left".into()))?;
            let kind = DiagnosticKind::Expand {
                entity: self.graph.entity_label(seed.entity).to_string(),
                radius: sub.radius() + t as u32 + 1,
            };
            debug!("round {t}: nothing to select, forcing {kind}");
            let message = DiagnosticMessage::new(kind, 1.0)?;
            let edits = map_diagnostic(&message, sub, self.graph, &ctx.candidates);
            ctx.state.forced = true;
            self.apply(sub, ctx, counters, &message, edits)?;
            ctx.state.diagnostic = Some(message);
            return Ok(Outcome::Continue);
        };

        ctx.state.selected = selection
            .selected
            .iter()
            .map(|c| SelectionRecord {
                id: c.id,
                path: c.path.verbalize(self.graph),
                injection: c.injection,
                adjusted_injection: c.adjusted_injection,
            })
            .collect();
        let latents: Vec<(PathLatent, f64)> = selection
            .selected
            .iter()
            .map(|c| {
                Ok((
                    PathLatent {
                        vector: encode_path(&c.path, self.embeddings, self.graph)?,
                        path_id: c.id,
                    },
                    c.adjusted_injection,
                ))
            })
            .collect::<Result<_>>()?;
        let mixture = context_mixture(&latents)?;
        ctx.state.mixture = mixture.z_ctx.values().to_vec();

        let shown = self.reasoner_view(&selection);
        let out = self.reasoner.reason(question, &shown, &ctx.state.mixture)?;
        counters.reasoner_calls += 1;
        counters.tokens += out.tokens;
        ctx.state.answer = out.answer.clone();
        ctx.state.confidence = out.confidence;

        if !cfg.ablations.no_align_diagnostics {
            ctx.state.attention =
                self.attention_record(&latents, &mixture, out.attention.as_deref());
        }
        if cfg.causal_diagnostics && self.reasoner.capabilities().log_probs {
            if let Some(a) = &out.answer {
                for i in 0..shown.len() {
                    let e = causal_effect(self.reasoner, question, &shown, i, a)?;
                    counters.logprob_calls += 2;
                    ctx.state.causal_effects.push((shown[i].id, e));
                }
            }
        }

        if out.answer.is_some() && out.confidence > cfg.conf_threshold {
            return Ok(Outcome::Stop(EpisodeStatus::Confident));
        }
        let raw = out.diagnostic.as_deref().unwrap_or("NONE");
        let uncertainty = (1.0 - out.confidence).clamp(0.0, 1.0);
        let (message, edits) = map_raw(raw, uncertainty, sub, self.graph, &ctx.candidates);
        if let Some(m) = &message {
            self.apply(sub, ctx, counters, m, edits)?;
        }
        ctx.state.diagnostic = message;
        Ok(Outcome::Continue)
    }

    /// Soft mask, top-K' discretization, edit budget, then the update.
    fn apply(
        &self,
        sub: &mut Subgraph,
        ctx: &mut RoundCtx,
        counters: &mut Counters,
        message: &DiagnosticMessage,
        edits: Vec<GraphEdit>,
    ) -> Result<()> {
        if edits.is_empty() {
            return Ok(());
        }
        let cfg = &self.config;
        let dctx = DiagnosticContext {
            mu: None,
            uncertainty: message.uncertainty,
        };
        let deltas = edit_mask(&dctx, &cfg.mask, &edits);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, ctx.t as u64, 3));
        let chosen = discretize_topk(
            &deltas,
            cfg.budget.max_candidates,
            cfg.tau,
            &mut rng,
            cfg.deterministic,
        );
        let room = cfg.edit_budget.saturating_sub(counters.edits as usize);
        let kept: Vec<usize> = chosen.into_iter().take(room).collect();
        ctx.state.dropped_edits = edits.len() - kept.len();
        if kept.is_empty() {
            return Ok(());
        }
        let kept_edits: Vec<GraphEdit> = kept.iter().map(|&i| edits[i].clone()).collect();
        let kept_deltas: Vec<f64> = kept.iter().map(|&i| deltas[i]).collect();
        sub.set_round(ctx.t as u32 + 1);
        let report = sub.apply_edits(self.graph, &kept_edits, &kept_deltas)?;
        for w in &report.warnings {
            warn!("round {}: {w}", ctx.t);
        }
        counters.edits += report.applied as u64;
        for (edit, delta) in kept_edits.into_iter().zip(kept_deltas) {
            ctx.state.edits.push(EditRecord {
                text: edit.describe(self.graph),
                edit,
                delta,
                source: message.raw_text.clone(),
            });
        }
        Ok(())
    }

    fn candidate_record(&self, c: &ScoredCandidate) -> CandidateRecord {
        CandidateRecord {
            id: c.id,
            path: c.path.verbalize(self.graph),
            cost: c.cost,
            u: c.u,
            soft_weight: c.soft_weight,
            verifier: c.verifier,
        }
    }

    fn reasoner_view(&self, selection: &Selection) -> Vec<SelectedPath> {
        let view = |c: &ScoredCandidate, coefficient: f64| SelectedPath {
            id: c.id,
            text: c.path.verbalize(self.graph),
            terminal: self.graph.entity_label(c.path.terminal()).to_string(),
            edges: c.path.to_labels(self.graph),
            coefficient,
            verifier: c.verifier,
        };
        if self.config.ablations.no_soft_injection {
            selection
                .selected
                .first()
                .map(|c| vec![view(c, 1.0)])
                .unwrap_or_default()
        } else {
            selection
                .selected
                .iter()
                .map(|c| view(c, c.adjusted_injection))
                .collect()
        }
    }

    /// Attention of the mixture over the selected path latents, or the
    /// reasoner's own attention rows when it returns them.
    fn attention_record(
        &self,
        latents: &[(PathLatent, f64)],
        mixture: &crate::inject::ContextMixture,
        external: Option<&[Vec<f64>]>,
    ) -> Option<AttentionRecord> {
        let attn: AttentionMatrix = match external {
            Some(rows) => match Matrix::from_rows(rows).and_then(AttentionMatrix::new) {
                Ok(a) if a.keys() == latents.len() => a,
                _ => {
                    warn!("ignoring malformed attention from reasoner");
                    return None;
                }
            },
            None => {
                let keys: Vec<Vec<f64>> = latents
                    .iter()
                    .map(|(l, _)| l.vector.values().to_vec())
                    .collect();
                let keys = Matrix::from_rows(&keys).ok()?;
                let q = Matrix::from_rows(&[mixture.z_ctx.values().to_vec()]).ok()?;
                cross_attention(&q, &keys, &keys).ok()?.1
            }
        };
        let mut masses = BTreeMap::new();
        let mut alphas = BTreeMap::new();
        for (l, a) in latents {
            masses.insert(
                l.path_id,
                attention_mass(&attn, &mixture.key_index, l.path_id).ok()?,
            );
            alphas.insert(l.path_id, *a);
        }
        let loss = alignment_loss(&alphas, &masses).ok()?;
        let xs: Vec<f64> = alphas.values().copied().collect();
        let ys: Vec<f64> = masses.values().copied().collect();
        Some(AttentionRecord {
            spearman: spearman(&xs, &ys),
            masses,
            alignment_loss: loss,
        })
    }
}
