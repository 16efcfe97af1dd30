//! Knowledge-base access for assistant queries: an in-memory triple store
//! with a restricted SELECT evaluator, and a SPARQL-protocol endpoint client.
//! Both sit behind [`KnowledgeBase`].

mod endpoint;
mod query;
mod store;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::codec::CodecError;

pub use endpoint::{parse_results_json, Endpoint, EndpointConfig};
pub use query::{parse_select, Pattern, PatternTerm, SelectQuery};
pub use store::{parse_ntriples, Triple, TripleStore};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported query: {0}")]
    UnsupportedQuery(String),
    #[error("query lexing failed: {0}")]
    Lex(#[from] CodecError),
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP error {0}")]
    Http(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermKind {
    Iri,
    Literal,
    BlankNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RdfTerm {
    pub kind: TermKind,
    pub value: String,
    pub lang: Option<String>,
    pub datatype: Option<String>,
}

impl RdfTerm {
    pub fn iri(value: impl Into<String>) -> Self {
        Self { kind: TermKind::Iri, value: value.into(), lang: None, datatype: None }
    }

    pub fn literal(value: impl Into<String>) -> Self {
        Self { kind: TermKind::Literal, value: value.into(), lang: None, datatype: None }
    }

    pub fn lang_literal(value: impl Into<String>, lang: impl Into<String>) -> Self {
        Self { kind: TermKind::Literal, value: value.into(), lang: Some(lang.into()), datatype: None }
    }

    pub fn typed_literal(value: impl Into<String>, datatype: impl Into<String>) -> Self {
        Self { kind: TermKind::Literal, value: value.into(), lang: None, datatype: Some(datatype.into()) }
    }

    pub fn blank(label: impl Into<String>) -> Self {
        Self { kind: TermKind::BlankNode, value: label.into(), lang: None, datatype: None }
    }

    pub fn is_iri(&self) -> bool {
        self.kind == TermKind::Iri
    }

    pub fn is_literal(&self) -> bool {
        self.kind == TermKind::Literal
    }
}

/// Terms order by value first, so sorted results read lexicographically.
impl Ord for RdfTerm {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .cmp(&other.value)
            .then(self.kind.cmp(&other.kind))
            .then_with(|| self.lang.cmp(&other.lang))
            .then_with(|| self.datatype.cmp(&other.datatype))
    }
}

impl PartialOrd for RdfTerm {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for RdfTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TermKind::Iri => write!(f, "<{}>", self.value),
            TermKind::BlankNode => write!(f, "_:{}", self.value),
            TermKind::Literal => {
                write!(f, "\"{}\"", self.value.replace('\\', "\\\\").replace('"', "\\\""))?;
                if let Some(lang) = &self.lang {
                    write!(f, "@{lang}")?;
                } else if let Some(dt) = &self.datatype {
                    write!(f, "^^<{dt}>")?;
                }
                Ok(())
            }
        }
    }
}

/// One solution: variable name (without `?`) to term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Binding(BTreeMap<String, RdfTerm>);

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, var: impl Into<String>, term: RdfTerm) {
        let var = var.into();
        let var = var.strip_prefix('?').map(str::to_string).unwrap_or(var);
        self.0.insert(var, term);
    }

    pub fn get(&self, var: &str) -> Option<&RdfTerm> {
        self.0.get(var.strip_prefix('?').unwrap_or(var))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RdfTerm)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl<S: Into<String>> FromIterator<(S, RdfTerm)> for Binding {
    fn from_iter<I: IntoIterator<Item = (S, RdfTerm)>>(iter: I) -> Self {
        let mut b = Binding::new();
        for (k, v) in iter {
            b.insert(k, v);
        }
        b
    }
}

/// Anything that can answer an assistant SELECT query.
pub trait KnowledgeBase {
    fn select(&self, query: &str) -> Result<Vec<Binding>, KbError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binding_strips_question_mark() {
        let mut b = Binding::new();
        b.insert("?uri", RdfTerm::iri("http://dbpedia.org/resource/Carew_Cross"));
        assert!(b.get("uri").is_some());
        assert!(b.get("?uri").is_some());
    }

    #[test]
    fn term_order_is_by_value() {
        let mut v = [RdfTerm::literal("b"), RdfTerm::iri("c"), RdfTerm::iri("a")];
        v.sort();
        assert_eq!(v.iter().map(|t| t.value.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn display_is_ntriples() {
        assert_eq!(RdfTerm::lang_literal("Carew Cross", "en").to_string(), "\"Carew Cross\"@en");
        assert_eq!(RdfTerm::iri("http://x/").to_string(), "<http://x/>");
    }
}
