//! Reversible conversion between SPARQL text and flat token sequences.
//!
//! IRIs are abbreviated to `label_local` tokens, variables become `var_x`,
//! punctuation and operators get verbal names (`brack_open`, `sep_dot`,
//! `math_lt`) and keywords are lower-cased with multi-word keywords joined by
//! underscores. Every emitted token matches `[A-Za-z0-9_]+`.
//!
//! ```
//! use nl2sparql::codec::Codec;
//!
//! let codec = Codec::dbpedia();
//! let enc = codec.encode("SELECT ?x WHERE { ?x ?p ?o . }").unwrap();
//! assert_eq!(enc.to_string(), "select var_x where brack_open var_x var_p var_o sep_dot brack_close");
//! assert_eq!(codec.decode(&enc).unwrap(), "SELECT ?x WHERE { ?x ?p ?o . }");
//! ```

mod escape;
mod lexer;
mod tables;

use std::fmt;

use thiserror::Error;

pub use escape::{escape_local, escape_strict, is_token, unescape};
pub use lexer::{lex, Lexeme};
pub use tables::{PrefixTable, ReplacementTable, Rule, SurfaceKind};

use lexer::{is_absolute_iri, render_local};
use tables::{QUOT_CLOSE, QUOT_OPEN};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("lexical error at byte {offset}: {message}")]
    Lex { offset: usize, message: String },
    #[error("no prefix covers IRI <{0}>")]
    UnknownNamespace(String),
    #[error("undeclared prefix `{0}:`")]
    UnknownPrefix(String),
    #[error("cannot decode token `{token}` at position {index}")]
    UnknownToken { token: String, index: usize },
    #[error("invalid codec table: {0}")]
    InvalidTable(String),
}

/// A query as a flat token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct EncodedQuery {
    pub tokens: Vec<String>,
}

impl EncodedQuery {
    pub fn new(tokens: Vec<String>) -> Self {
        Self { tokens }
    }

    /// Splits a space-joined line. No alphabet check is made, so sequences
    /// produced by other encoders load unchanged.
    pub fn from_line(line: &str) -> Self {
        Self { tokens: line.split_whitespace().map(str::to_string).collect() }
    }

    pub fn is_well_formed(&self) -> bool {
        self.tokens.iter().all(|t| is_token(t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for EncodedQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

/// Prefix and replacement tables bundled together after a consistency check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codec {
    prefixes: PrefixTable,
    table: ReplacementTable,
    passthrough: bool,
}

fn is_number(s: &str) -> bool {
    let s = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], Some(&s[i + 1..])),
        None => (s, None),
    };
    let (int, frac) = match mantissa.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (mantissa, None),
    };
    let digits = |d: &str| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit());
    digits(int)
        && frac.is_none_or(digits)
        && exp.is_none_or(|e| digits(e.strip_prefix(['+', '-']).unwrap_or(e)))
}

impl Codec {
    pub fn new(prefixes: PrefixTable, table: ReplacementTable) -> Result<Self, CodecError> {
        for rule in table.rules() {
            if let Some((head, _)) = rule.token.split_once('_') {
                if prefixes.namespace(head).is_some() {
                    return Err(CodecError::InvalidTable(format!(
                        "token `{}` is ambiguous with prefix label `{head}`",
                        rule.token
                    )));
                }
            }
        }
        Ok(Self { prefixes, table, passthrough: false })
    }

    /// DBpedia prefixes with the built-in replacement table.
    pub fn dbpedia() -> Self {
        Self::new(PrefixTable::dbpedia(), ReplacementTable::default()).expect("built-in tables agree")
    }

    /// Encode IRIs outside every namespace as `iri_<escaped>` instead of failing.
    pub fn with_passthrough(mut self, on: bool) -> Self {
        self.passthrough = on;
        self
    }

    pub fn prefixes(&self) -> &PrefixTable {
        &self.prefixes
    }

    pub fn table(&self) -> &ReplacementTable {
        &self.table
    }

    pub fn lex(&self, raw: &str) -> Result<Vec<Lexeme>, CodecError> {
        lex(raw, &self.prefixes, &self.table)
    }

    pub fn encode(&self, raw: &str) -> Result<EncodedQuery, CodecError> {
        self.encode_lexemes(&self.lex(raw)?)
    }

    pub fn encode_lexemes(&self, lexemes: &[Lexeme]) -> Result<EncodedQuery, CodecError> {
        let mut tokens = Vec::with_capacity(lexemes.len());
        for lexeme in lexemes {
            match lexeme {
                Lexeme::Symbol(s) => {
                    let rule = self
                        .table
                        .rule_for_surface(s)
                        .ok_or_else(|| CodecError::InvalidTable(format!("no rule for `{s}`")))?;
                    tokens.push(rule.token.clone());
                }
                Lexeme::Var(v) => tokens.push(format!("var_{v}")),
                Lexeme::Iri(iri) => tokens.push(self.encode_iri(iri)?),
                Lexeme::Literal { value, lang } => {
                    tokens.push(QUOT_OPEN.to_string());
                    tokens.extend(value.split_whitespace().map(escape_strict));
                    tokens.push(QUOT_CLOSE.to_string());
                    if let Some(lang) = lang {
                        tokens.push(format!("lang_{}", escape_local(lang)));
                    }
                }
                Lexeme::Number(n) => tokens.push(escape_strict(n)),
            }
        }
        Ok(EncodedQuery { tokens })
    }

    fn encode_iri(&self, iri: &str) -> Result<String, CodecError> {
        match self.prefixes.shorten(iri) {
            Some((label, local)) => Ok(format!("{label}_{}", escape_local(local))),
            None if self.passthrough => Ok(format!("iri_{}", escape_local(iri))),
            None => Err(CodecError::UnknownNamespace(iri.to_string())),
        }
    }

    pub fn decode(&self, encoded: &EncodedQuery) -> Result<String, CodecError> {
        self.render(&self.decode_lexemes(&encoded.tokens)?)
    }

    /// Maps tokens back to lexemes; the inverse of [`Codec::encode_lexemes`].
    pub fn decode_lexemes<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<Lexeme>, CodecError> {
        let unknown = |index: usize, token: &str| CodecError::UnknownToken { token: token.to_string(), index };
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        while i < tokens.len() {
            let token = tokens[i].as_ref();
            if let Some(rule) = self.table.rule_for_token(token) {
                out.push(Lexeme::Symbol(rule.surface.clone()));
            } else if token == QUOT_OPEN {
                let mut words = Vec::new();
                let mut j = i + 1;
                loop {
                    let Some(w) = tokens.get(j).map(AsRef::as_ref) else {
                        return Err(unknown(i, token));
                    };
                    if w == QUOT_CLOSE {
                        break;
                    }
                    match unescape(w) {
                        Some(word) if !w.contains("_") || w.contains("__") => words.push(word),
                        _ => return Err(unknown(j, w)),
                    }
                    j += 1;
                }
                let mut lang = None;
                if let Some(tag) = tokens.get(j + 1).and_then(|t| t.as_ref().strip_prefix("lang_")) {
                    lang = Some(unescape(tag).filter(|t| !t.is_empty()).ok_or_else(|| unknown(j + 1, tag))?);
                    j += 1;
                }
                out.push(Lexeme::Literal { value: words.join(" "), lang });
                i = j;
            } else if let Some(name) = token.strip_prefix("var_") {
                if name.is_empty() || !is_token(name) {
                    return Err(unknown(i, token));
                }
                out.push(Lexeme::Var(name.to_string()));
            } else if let Some(rest) = token.strip_prefix("iri_") {
                match unescape(rest) {
                    Some(iri) if is_absolute_iri(&iri) => out.push(Lexeme::Iri(iri)),
                    _ => return Err(unknown(i, token)),
                }
            } else if token.starts_with(|c: char| c.is_ascii_digit()) || token.starts_with("__") {
                match unescape(token) {
                    Some(n) if is_number(&n) => out.push(Lexeme::Number(n)),
                    _ => return Err(unknown(i, token)),
                }
            } else if let Some((label, local)) = token.split_once('_') {
                let ns = self.prefixes.namespace(label).ok_or_else(|| unknown(i, token))?;
                let local = unescape(local).ok_or_else(|| unknown(i, token))?;
                out.push(Lexeme::Iri(format!("{ns}{local}")));
            } else {
                return Err(unknown(i, token));
            }
            i += 1;
        }
        Ok(out)
    }

    /// Canonical one-line form: single spaces, upper-case keywords,
    /// prefixed names wherever the prefix table covers an IRI.
    pub fn normalize(&self, raw: &str) -> Result<String, CodecError> {
        self.render(&self.lex(raw)?)
    }

    pub fn render(&self, lexemes: &[Lexeme]) -> Result<String, CodecError> {
        let mut parts = Vec::with_capacity(lexemes.len());
        for lexeme in lexemes {
            parts.push(match lexeme {
                Lexeme::Symbol(s) => s.clone(),
                Lexeme::Var(v) => format!("?{v}"),
                Lexeme::Iri(iri) => self.render_iri(iri)?,
                Lexeme::Literal { value, lang } => {
                    let mut s = String::with_capacity(value.len() + 2);
                    s.push('"');
                    for c in value.chars() {
                        match c {
                            '"' => s.push_str("\\\""),
                            '\\' => s.push_str("\\\\"),
                            c => s.push(c),
                        }
                    }
                    s.push('"');
                    if let Some(lang) = lang {
                        s.push('@');
                        s.push_str(lang);
                    }
                    s
                }
                Lexeme::Number(n) => n.clone(),
            });
        }
        Ok(parts.join(" "))
    }

    /// Prefixed name for an IRI, or `<iri>` when its local part has no
    /// prefixed-name spelling.
    pub fn render_iri(&self, iri: &str) -> Result<String, CodecError> {
        match self.prefixes.shorten(iri) {
            Some((label, local)) => Ok(match render_local(local) {
                Some(local) => format!("{label}:{local}"),
                None => format!("<{iri}>"),
            }),
            None if self.passthrough => Ok(format!("<{iri}>")),
            None => Err(CodecError::UnknownNamespace(iri.to_string())),
        }
    }

    /// Prepends `PREFIX` declarations for the labels a normalized query uses,
    /// making it executable on an endpoint without predefined prefixes.
    pub fn with_prologue(&self, normalized: &str) -> String {
        let mut out = String::new();
        for (label, ns) in self.prefixes.entries() {
            let needle = format!("{label}:");
            let used = normalized
                .match_indices(&needle)
                .any(|(i, _)| i == 0 || !normalized.as_bytes()[i - 1].is_ascii_alphanumeric());
            let declared = normalized.to_uppercase().contains(&format!("PREFIX {}", needle.to_uppercase()));
            if used && !declared {
                out.push_str(&format!("PREFIX {label}: <{ns}>\n"));
            }
        }
        out.push_str(normalized);
        out
    }
}

pub fn encode(raw: &str, prefixes: &PrefixTable, table: &ReplacementTable) -> Result<EncodedQuery, CodecError> {
    Codec::new(prefixes.clone(), table.clone())?.encode(raw)
}

pub fn decode(encoded: &EncodedQuery, prefixes: &PrefixTable, table: &ReplacementTable) -> Result<String, CodecError> {
    Codec::new(prefixes.clone(), table.clone())?.decode(encoded)
}

pub fn normalize(raw: &str, prefixes: &PrefixTable, table: &ReplacementTable) -> Result<String, CodecError> {
    Codec::new(prefixes.clone(), table.clone())?.normalize(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const KNOWN_FOR_QUERY: &str = "PREFIX dbr: <http://dbpedia.org/resource/>
PREFIX dbo: <http://dbpedia.org/ontology/>

SELECT DISTINCT ?uri
WHERE {
dbr:Sam_Loyd dbo:knownFor ?uri .
dbr:Eric_Schiller dbo:knownFor ?uri . }";

    const KNOWN_FOR_TOKENS: &str = "select distinct var_uri where brack_open dbr_Sam_Loyd dbo_knownFor var_uri sep_dot \
                             dbr_Eric_Schiller dbo_knownFor var_uri sep_dot brack_close";

    #[test]
    fn known_for_round_trip() {
        let c = Codec::dbpedia();
        let enc = c.encode(KNOWN_FOR_QUERY).unwrap();
        assert_eq!(enc.to_string(), KNOWN_FOR_TOKENS);
        assert_eq!(
            c.decode(&enc).unwrap(),
            "SELECT DISTINCT ?uri WHERE { dbr:Sam_Loyd dbo:knownFor ?uri . dbr:Eric_Schiller dbo:knownFor ?uri . }"
        );
    }

    #[test]
    fn full_iri_is_shortened() {
        let c = Codec::dbpedia();
        let enc = c.encode("SELECT ?x WHERE { <http://dbpedia.org/resource/Carew_Cross> dbo:location ?x . }").unwrap();
        assert_eq!(
            enc.to_string(),
            "select var_x where brack_open dbr_Carew_Cross dbo_location var_x sep_dot brack_close"
        );
    }

    #[test]
    fn empty_pattern_decodes() {
        let c = Codec::dbpedia();
        let q = EncodedQuery::from_line("select var_x where brack_open brack_close");
        assert_eq!(c.decode(&q).unwrap(), "SELECT ?x WHERE { }");
    }

    #[test]
    fn normalize_is_idempotent_and_uppercases() {
        let c = Codec::dbpedia();
        let n = c.normalize(KNOWN_FOR_QUERY).unwrap();
        assert_eq!(c.normalize(&n).unwrap(), n);
        assert!(c.normalize("select ?x where { }").unwrap().starts_with("SELECT ?x WHERE"));
    }

    #[test]
    fn filters_literals_and_numbers() {
        let c = Codec::dbpedia();
        let q = "SELECT ?x WHERE { ?x rdfs:label \"Brandenburg Gate\"@de . ?x dbo:height ?h . \
                 FILTER ( ?h >= 10.5 && ?h != -3 ) } ORDER BY DESC ( ?h ) LIMIT 5";
        let enc = c.encode(q).unwrap();
        let s = enc.to_string();
        assert!(s.contains("quot_open Brandenburg Gate quot_close lang_de"));
        assert!(s.contains("math_geq 10__2E5 logical_and var_h math_neq __2D3"));
        assert!(s.contains("order_by desc par_open"));
        assert!(enc.is_well_formed());
        assert_eq!(c.decode(&enc).unwrap(), c.normalize(q).unwrap());
    }

    #[test]
    fn unknown_namespace() {
        let c = Codec::dbpedia();
        let q = "SELECT ?x WHERE { ?x <http://example.org/p> ?o }";
        assert_eq!(c.encode(q), Err(CodecError::UnknownNamespace("http://example.org/p".into())));
        let c = c.with_passthrough(true);
        let enc = c.encode(q).unwrap();
        assert!(enc.is_well_formed());
        assert_eq!(c.decode(&enc).unwrap(), "SELECT ?x WHERE { ?x <http://example.org/p> ?o }");
    }

    #[test]
    fn unknown_tokens() {
        let c = Codec::dbpedia();
        for bad in ["foo_bar", "select", "quot_open a", "var_", "lang_en", "nonsense"] {
            let q = EncodedQuery::from_line(bad);
            if bad == "select" {
                assert!(c.decode(&q).is_ok());
            } else {
                assert!(matches!(c.decode(&q), Err(CodecError::UnknownToken { .. })), "{bad}");
            }
        }
    }

    #[test]
    fn literal_words_cannot_spoof_structure() {
        let c = Codec::dbpedia();
        let q = "ASK WHERE { ?x rdfs:label \"quot_close brack_close\" }";
        let enc = c.encode(q).unwrap();
        assert_eq!(c.decode(&enc).unwrap(), c.normalize(q).unwrap());
    }

    #[test]
    fn ambiguous_tables_rejected() {
        let mut p = PrefixTable::new();
        p.insert("brack", "http://b.org/").unwrap();
        assert!(Codec::new(p, ReplacementTable::default()).is_err());
    }

    #[test]
    fn prologue_lists_used_prefixes() {
        let c = Codec::dbpedia();
        let q = c.with_prologue("SELECT ?x WHERE { dbr:A dbo:b ?x . }");
        assert!(q.starts_with("PREFIX dbo: <http://dbpedia.org/ontology/>\nPREFIX dbr:"));
        assert!(!q.contains("PREFIX dbc"));
    }
}
