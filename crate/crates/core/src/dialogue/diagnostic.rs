//! Structured diagnostics emitted by a reasoner.
//!
//! Canonical text forms:
//! `VERIFY(head, relation, tail)`, `EXPAND(entity, radius)`,
//! `DISAMBIGUATE(mention, alt1, alt2, ...)`, `PRUNE(path_id)`, `NONE`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum DiagnosticKind {
    Verify {
        head: String,
        relation: String,
        tail: String,
    },
    Expand {
        entity: String,
        radius: u32,
    },
    Disambiguate {
        mention: String,
        alternatives: Vec<String>,
    },
    Prune {
        path_id: usize,
    },
    None,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagnosticKind::Verify {
                head,
                relation,
                tail,
            } => write!(f, "VERIFY({head}, {relation}, {tail})"),
            DiagnosticKind::Expand { entity, radius } => write!(f, "EXPAND({entity}, {radius})"),
            DiagnosticKind::Disambiguate {
                mention,
                alternatives,
            } => {
                write!(f, "DISAMBIGUATE({mention}")?;
                for a in alternatives {
                    write!(f, ", {a}")?;
                }
                write!(f, ")")
            }
            DiagnosticKind::Prune { path_id } => write!(f, "PRUNE({path_id})"),
            DiagnosticKind::None => write!(f, "NONE"),
        }
    }
}

fn syntax(text: &str, msg: &str) -> Error {
    Error::Parse {
        line: 1,
        msg: format!("diagnostic `{text}`: {msg}"),
    }
}

impl FromStr for DiagnosticKind {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let s = text.trim();
        if s.eq_ignore_ascii_case("NONE") {
            return Ok(DiagnosticKind::None);
        }
        let open = s.find('(').ok_or_else(|| syntax(text, "missing `(`"))?;
        if !s.ends_with(')') {
            return Err(syntax(text, "missing `)`"));
        }
        let keyword = s[..open].trim().to_ascii_uppercase();
        let args: Vec<String> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().to_string())
            .collect();
        if args.iter().any(String::is_empty) {
            return Err(syntax(text, "empty argument"));
        }
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(syntax(
                    text,
                    &format!("expected {n} arguments, got {}", args.len()),
                ))
            }
        };
        match keyword.as_str() {
            "VERIFY" => {
                arity(3)?;
                Ok(DiagnosticKind::Verify {
                    head: args[0].clone(),
                    relation: args[1].clone(),
                    tail: args[2].clone(),
                })
            }
            "EXPAND" => {
                arity(2)?;
                let radius = args[1]
                    .parse()
                    .map_err(|_| syntax(text, "radius must be a non-negative integer"))?;
                Ok(DiagnosticKind::Expand {
                    entity: args[0].clone(),
                    radius,
                })
            }
            "DISAMBIGUATE" => {
                if args.len() < 2 {
                    return Err(syntax(text, "needs a mention and at least one alternative"));
                }
                Ok(DiagnosticKind::Disambiguate {
                    mention: args[0].clone(),
                    alternatives: args[1..].to_vec(),
                })
            }
            "PRUNE" => {
                arity(1)?;
                let path_id = args[0]
                    .parse()
                    .map_err(|_| syntax(text, "path id must be a non-negative integer"))?;
                Ok(DiagnosticKind::Prune { path_id })
            }
            _ => Err(syntax(text, "unknown keyword")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticMessage {
    pub kind: DiagnosticKind,
    pub uncertainty: f64,
    pub raw_text: String,
}

impl DiagnosticMessage {
    pub fn new(kind: DiagnosticKind, uncertainty: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&uncertainty) {
            return Err(Error::Invalid(format!(
                "uncertainty {uncertainty} outside [0, 1]"
            )));
        }
        let raw_text = kind.to_string();
        Ok(Self {
            kind,
            uncertainty,
            raw_text,
        })
    }

    pub fn parse(raw: &str, uncertainty: f64) -> Result<Self> {
        let mut m = Self::new(raw.parse()?, uncertainty)?;
        m.raw_text = raw.to_string();
        Ok(m)
    }

    pub fn none() -> Self {
        Self {
            kind: DiagnosticKind::None,
            uncertainty: 0.0,
            raw_text: "NONE".into(),
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == DiagnosticKind::None
    }
}

impl fmt::Display for DiagnosticMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn parses_each_kind() {
        let v: DiagnosticKind = "VERIFY(Boston, host_event, 1976_Summer_Olympics)"
            .parse()
            .unwrap();
        assert_eq!(
            v,
            DiagnosticKind::Verify {
                head: "Boston".into(),
                relation: "host_event".into(),
                tail: "1976_Summer_Olympics".into()
            }
        );
        assert_eq!(
            "expand( Argo ,2 )".parse::<DiagnosticKind>().unwrap(),
            DiagnosticKind::Expand {
                entity: "Argo".into(),
                radius: 2
            }
        );
        assert_eq!(
            "DISAMBIGUATE(Paris, Paris_Texas, Paris_France)"
                .parse::<DiagnosticKind>()
                .unwrap(),
            DiagnosticKind::Disambiguate {
                mention: "Paris".into(),
                alternatives: vec!["Paris_Texas".into(), "Paris_France".into()]
            }
        );
        assert_eq!(
            "PRUNE(3)".parse::<DiagnosticKind>().unwrap(),
            DiagnosticKind::Prune { path_id: 3 }
        );
        assert_eq!(
            " none ".parse::<DiagnosticKind>().unwrap(),
            DiagnosticKind::None
        );
    }

    #[test]
    fn rejects_garbage() {
        for bad in [
            "",
            "I am not sure",
            "VERIFY(a, b)",
            "EXPAND(a, -1)",
            "PRUNE(x)",
            "DISAMBIGUATE(a)",
            "VERIFY(a, , c)",
            "LOOKUP(a)",
            "VERIFY(a, b, c",
        ] {
            assert!(bad.parse::<DiagnosticKind>().is_err(), "{bad}");
        }
    }

    #[test]
    fn uncertainty_range() {
        assert!(DiagnosticMessage::new(DiagnosticKind::None, 1.5).is_err());
        let m = DiagnosticMessage::parse("prune(1)", 0.4).unwrap();
        assert_eq!(m.raw_text, "prune(1)");
        assert_eq!(m.to_string(), "PRUNE(1)");
    }

    fn label() -> impl Strategy<Value = String> {
        "[A-Za-z0-9_]{1,12}"
    }

    fn kind() -> impl Strategy<Value = DiagnosticKind> {
        prop_oneof![
            (label(), label(), label()).prop_map(|(head, relation, tail)| DiagnosticKind::Verify {
                head,
                relation,
                tail
            }),
            (label(), 0u32..10)
                .prop_map(|(entity, radius)| DiagnosticKind::Expand { entity, radius }),
            (label(), prop::collection::vec(label(), 1..4)).prop_map(|(mention, alternatives)| {
                DiagnosticKind::Disambiguate {
                    mention,
                    alternatives,
                }
            }),
            (0usize..1000).prop_map(|path_id| DiagnosticKind::Prune { path_id }),
            Just(DiagnosticKind::None),
        ]
    }

    proptest! {
        #[test]
        fn canonical_round_trip(k in kind()) {
            let text = k.to_string();
            prop_assert_eq!(text.parse::<DiagnosticKind>().unwrap(), k);
        }
    }
}
