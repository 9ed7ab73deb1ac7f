//! The reasoner interface, a deterministic scripted implementation and an
//! HTTP client for external reasoners.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dialogue::diagnostic::DiagnosticKind;
use crate::error::{Error, Result};

pub const REASONER_URL_ENV: &str = "KGPATH_REASONER_URL";
pub const REASONER_TOKEN_ENV: &str = "KGPATH_REASONER_TOKEN";

/// A relation an answer must satisfy towards a named entity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub relation: String,
    pub entity: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<Constraint>,
}

impl Question {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            constraints: Vec::new(),
        }
    }

    pub fn with_constraint(mut self, relation: &str, entity: &str) -> Self {
        self.constraints.push(Constraint {
            relation: relation.into(),
            entity: entity.into(),
        });
        self
    }
}

/// A selected path as the reasoner sees it, by label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedPath {
    pub id: usize,
    pub text: String,
    pub terminal: String,
    pub edges: Vec<[String; 3]>,
    pub coefficient: f64,
    pub verifier: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasonerOutput {
    pub answer: Option<String>,
    pub confidence: f64,
    /// Raw diagnostic text; parsed by the loop.
    #[serde(default)]
    pub diagnostic: Option<String>,
    #[serde(default)]
    pub attention: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub logprob: Option<f64>,
    #[serde(default)]
    pub tokens: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub answers: bool,
    pub log_probs: bool,
    pub attention: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasonerMode {
    Scripted,
    ExternalService,
}

pub trait Reasoner: Send + Sync {
    fn mode(&self) -> ReasonerMode;

    fn capabilities(&self) -> Capabilities;

    fn reason(
        &self,
        question: &Question,
        selection: &[SelectedPath],
        mixture: &[f64],
    ) -> Result<ReasonerOutput>;

    /// `ln P(answer | question, selection)`.
    fn answer_log_prob(
        &self,
        _question: &Question,
        _selection: &[SelectedPath],
        _answer: &str,
    ) -> Result<f64> {
        Err(Error::Unsupported("answer log-probabilities"))
    }
}

/// Whitespace tokens of the verbalized selection.
pub fn count_tokens(selection: &[SelectedPath]) -> u64 {
    selection
        .iter()
        .map(|p| p.text.split_whitespace().count() as u64)
        .sum()
}

/// Deterministic stand-in for a language model.
///
/// The answer is the terminal of the path with the largest coefficient and
/// its confidence is that coefficient times the path's verifier score. Below
/// the confidence threshold it asks to verify the answer against the first
/// question constraint, or, without constraints, the top path's last edge.
///
/// `P(a) = eps + (1 - eps) * (coefficient mass of paths ending at a)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScriptedReasoner {
    pub conf_threshold: f64,
    pub epsilon: f64,
}

impl ScriptedReasoner {
    pub fn new(conf_threshold: f64) -> Self {
        Self {
            conf_threshold,
            epsilon: 0.05,
        }
    }

    fn top(selection: &[SelectedPath]) -> Option<&SelectedPath> {
        selection
            .iter()
            .fold(None, |best: Option<&SelectedPath>, p| match best {
                Some(b) if b.coefficient >= p.coefficient => Some(b),
                _ => Some(p),
            })
    }
}

impl Reasoner for ScriptedReasoner {
    fn mode(&self) -> ReasonerMode {
        ReasonerMode::Scripted
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            answers: true,
            log_probs: true,
            attention: false,
        }
    }

    fn reason(
        &self,
        question: &Question,
        selection: &[SelectedPath],
        _mixture: &[f64],
    ) -> Result<ReasonerOutput> {
        let tokens = count_tokens(selection);
        let Some(top) = Self::top(selection) else {
            return Ok(ReasonerOutput {
                tokens,
                ..Default::default()
            });
        };
        let confidence = (top.coefficient * top.verifier).clamp(0.0, 1.0);
        let diagnostic = if confidence < self.conf_threshold {
            let kind = match question.constraints.first() {
                Some(c) => DiagnosticKind::Verify {
                    head: top.terminal.clone(),
                    relation: c.relation.clone(),
                    tail: c.entity.clone(),
                },
                None => {
                    let [h, r, t] = top.edges.last().cloned().ok_or(Error::EmptyPath)?;
                    DiagnosticKind::Verify {
                        head: h,
                        relation: r,
                        tail: t,
                    }
                }
            };
            kind.to_string()
        } else {
            DiagnosticKind::None.to_string()
        };
        Ok(ReasonerOutput {
            answer: Some(top.terminal.clone()),
            confidence,
            diagnostic: Some(diagnostic),
            attention: None,
            logprob: None,
            tokens,
        })
    }

    fn answer_log_prob(
        &self,
        _question: &Question,
        selection: &[SelectedPath],
        answer: &str,
    ) -> Result<f64> {
        let total: f64 = selection.iter().map(|p| p.coefficient).sum();
        let share = if total > 0.0 {
            selection
                .iter()
                .filter(|p| p.terminal == answer)
                .map(|p| p.coefficient)
                .sum::<f64>()
                / total
        } else {
            0.0
        };
        Ok((self.epsilon + (1.0 - self.epsilon) * share).ln())
    }
}

#[derive(Serialize)]
struct PathPayload<'a> {
    text: &'a str,
    coefficient: f64,
    verifier: f64,
}

#[derive(Serialize)]
struct ReasonRequest<'a> {
    question: &'a str,
    paths: Vec<PathPayload<'a>>,
    mixture: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    answer: Option<&'a str>,
}

/// External reasoner over HTTP. The service must return a confidence in
/// `[0, 1]`; diagnostics use the canonical text forms.
pub struct ServiceReasoner {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
    capabilities: Capabilities,
    max_attempts: u32,
    base_backoff: Duration,
}

impl ServiceReasoner {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            token,
            agent,
            capabilities: Capabilities {
                answers: true,
                log_probs: false,
                attention: false,
            },
            max_attempts: 3,
            base_backoff: Duration::from_millis(200),
        }
    }

    pub fn from_env(timeout: Duration) -> Result<Self> {
        let url = std::env::var(REASONER_URL_ENV)
            .map_err(|_| Error::Config(format!("{REASONER_URL_ENV} is not set")))?;
        Ok(Self::new(
            url,
            std::env::var(REASONER_TOKEN_ENV).ok(),
            timeout,
        ))
    }

    pub fn with_capabilities(mut self, capabilities: Capabilities) -> Self {
        self.capabilities = capabilities;
        self
    }

    pub fn with_retries(mut self, attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = attempts.max(1);
        self.base_backoff = backoff;
        self
    }

    fn call(&self, body: &ReasonRequest<'_>) -> Result<ReasonerOutput> {
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
            match req.send_json(body) {
                Ok(mut resp) if resp.status().is_success() => {
                    let out: ReasonerOutput = resp
                        .body_mut()
                        .read_json()
                        .map_err(|e| Error::Invalid(format!("bad reasoner response: {e}")))?;
                    if !(0.0..=1.0).contains(&out.confidence) {
                        return Err(Error::Invalid(format!(
                            "reasoner confidence {} outside [0, 1]",
                            out.confidence
                        )));
                    }
                    return Ok(out);
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

    fn request<'a>(
        question: &'a Question,
        selection: &'a [SelectedPath],
        mixture: &'a [f64],
        answer: Option<&'a str>,
    ) -> ReasonRequest<'a> {
        ReasonRequest {
            question: &question.text,
            paths: selection
                .iter()
                .map(|p| PathPayload {
                    text: &p.text,
                    coefficient: p.coefficient,
                    verifier: p.verifier,
                })
                .collect(),
            mixture,
            answer,
        }
    }
}

impl Reasoner for ServiceReasoner {
    fn mode(&self) -> ReasonerMode {
        ReasonerMode::ExternalService
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn reason(
        &self,
        question: &Question,
        selection: &[SelectedPath],
        mixture: &[f64],
    ) -> Result<ReasonerOutput> {
        self.call(&Self::request(question, selection, mixture, None))
    }

    fn answer_log_prob(
        &self,
        question: &Question,
        selection: &[SelectedPath],
        answer: &str,
    ) -> Result<f64> {
        if !self.capabilities.log_probs {
            return Err(Error::Unsupported("answer log-probabilities"));
        }
        let out = self.call(&Self::request(question, selection, &[], Some(answer)))?;
        out.logprob
            .ok_or_else(|| Error::Invalid("reasoner returned no logprob".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inject::causal_effect;

    fn sp(id: usize, terminal: &str, coefficient: f64, verifier: f64) -> SelectedPath {
        SelectedPath {
            id,
            text: format!("Argo -x-> {terminal}"),
            terminal: terminal.into(),
            edges: vec![["Argo".into(), "x".into(), terminal.into()]],
            coefficient,
            verifier,
        }
    }

    #[test]
    fn confident_answer_has_no_diagnostic() {
        let r = ScriptedReasoner::new(0.7);
        let out = r
            .reason(
                &Question::new("q"),
                &[sp(0, "a", 0.99, 1.0), sp(1, "b", 0.01, 1.0)],
                &[],
            )
            .unwrap();
        assert_eq!(out.answer.as_deref(), Some("a"));
        assert!((out.confidence - 0.99).abs() < 1e-12);
        assert_eq!(out.diagnostic.as_deref(), Some("NONE"));
        assert_eq!(out.tokens, 6);
    }

    #[test]
    fn low_confidence_verifies() {
        let r = ScriptedReasoner::new(0.7);
        let sel = [sp(0, "Boston", 0.6, 0.85), sp(1, "NYC", 0.4, 0.9)];
        let out = r.reason(&Question::new("q"), &sel, &[]).unwrap();
        assert_eq!(out.diagnostic.as_deref(), Some("VERIFY(Argo, x, Boston)"));
        let q = Question::new("q").with_constraint("host_event", "1976_Summer_Olympics");
        let out = r.reason(&q, &sel, &[]).unwrap();
        assert_eq!(
            out.diagnostic.as_deref(),
            Some("VERIFY(Boston, host_event, 1976_Summer_Olympics)")
        );
    }

    #[test]
    fn empty_selection_gives_no_answer() {
        let r = ScriptedReasoner::new(0.7);
        let out = r.reason(&Question::new("q"), &[], &[]).unwrap();
        assert!(out.answer.is_none());
        assert_eq!(out.confidence, 0.0);
    }

    #[test]
    fn log_prob_rule() {
        let r = ScriptedReasoner::new(0.7);
        let q = Question::new("q");
        let sel = [sp(0, "a", 0.75, 1.0), sp(1, "b", 0.25, 1.0)];
        let lp = r.answer_log_prob(&q, &sel, "b").unwrap();
        assert!((lp - (0.05 + 0.95 * 0.25f64).ln()).abs() < 1e-12);
        assert!((r.answer_log_prob(&q, &[], "b").unwrap() - 0.05f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn causal_effects() {
        let r = ScriptedReasoner::new(0.7);
        let q = Question::new("q");
        // Only path 0 supports `a`: removing it falls back to eps.
        let sel = [sp(0, "a", 1.0, 1.0)];
        let e = causal_effect(&r, &q, &sel, 0, "a").unwrap();
        assert!((e - (1.0f64.ln() - 0.05f64.ln())).abs() < 1e-12);
        assert!(e > 0.0);
        // Removing a zero-coefficient path changes nothing.
        let sel = [
            sp(0, "a", 0.6, 1.0),
            sp(1, "b", 0.4, 1.0),
            sp(2, "c", 0.0, 1.0),
        ];
        assert_eq!(causal_effect(&r, &q, &sel, 2, "a").unwrap(), 0.0);
        assert!(causal_effect(&r, &q, &sel, 3, "a").is_err());
    }

    struct Deaf;

    impl Reasoner for Deaf {
        fn mode(&self) -> ReasonerMode {
            ReasonerMode::Scripted
        }

        fn capabilities(&self) -> Capabilities {
            Capabilities {
                answers: true,
                log_probs: true,
                attention: false,
            }
        }

        fn reason(&self, _: &Question, _: &[SelectedPath], _: &[f64]) -> Result<ReasonerOutput> {
            Ok(ReasonerOutput::default())
        }

        fn answer_log_prob(&self, _: &Question, _: &[SelectedPath], _: &str) -> Result<f64> {
            Ok(0.3f64.ln())
        }
    }

    #[test]
    fn context_blind_reasoner_has_zero_effect() {
        let sel = [sp(0, "a", 0.5, 1.0), sp(1, "b", 0.5, 1.0)];
        for i in 0..2 {
            assert_eq!(
                causal_effect(&Deaf, &Question::new("q"), &sel, i, "a").unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn service_without_log_probs() {
        let s = ServiceReasoner::new("http://127.0.0.1:9", None, Duration::from_millis(50));
        let r = causal_effect(&s, &Question::new("q"), &[sp(0, "a", 1.0, 1.0)], 0, "a");
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn service_unreachable_is_error() {
        let s = ServiceReasoner::new("http://127.0.0.1:9", None, Duration::from_millis(200))
            .with_retries(2, Duration::from_millis(1));
        let r = s.reason(&Question::new("q"), &[], &[]);
        assert!(matches!(r, Err(Error::Service { attempts: 2, .. })));
    }
}
