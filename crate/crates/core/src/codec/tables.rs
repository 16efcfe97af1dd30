use std::collections::HashMap;
use std::path::Path;

use super::CodecError;
use crate::codec::escape::is_token;

/// Token prefixes owned by the encoding scheme itself.
pub(crate) const SCHEME_PREFIXES: &[&str] = &["var", "lang", "iri", "quot"];
pub(crate) const QUOT_OPEN: &str = "quot_open";
pub(crate) const QUOT_CLOSE: &str = "quot_close";

/// Ordered `label -> namespace` table used to abbreviate IRIs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PrefixTable {
    entries: Vec<(String, String)>,
}

fn valid_label(label: &str) -> bool {
    let mut chars = label.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric())
}

impl PrefixTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// The namespaces commonly used by DBpedia queries.
    pub fn dbpedia() -> Self {
        let mut table = Self::new();
        for (label, ns) in [
            ("dbo", "http://dbpedia.org/ontology/"),
            ("dbp", "http://dbpedia.org/property/"),
            ("dbr", "http://dbpedia.org/resource/"),
            ("dbc", "http://dbpedia.org/resource/Category:"),
            ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
            ("rdfs", "http://www.w3.org/2000/01/rdf-schema#"),
            ("xsd", "http://www.w3.org/2001/XMLSchema#"),
            ("owl", "http://www.w3.org/2002/07/owl#"),
            ("foaf", "http://xmlns.com/foaf/0.1/"),
            ("dct", "http://purl.org/dc/terms/"),
            ("skos", "http://www.w3.org/2004/02/skos/core#"),
            ("geo", "http://www.w3.org/2003/01/geo/wgs84_pos#"),
            ("georss", "http://www.georss.org/georss/"),
        ] {
            table.insert(label, ns).expect("built-in prefixes are consistent");
        }
        table
    }

    pub fn insert(&mut self, label: &str, namespace: &str) -> Result<(), CodecError> {
        if !valid_label(label) {
            return Err(CodecError::InvalidTable(format!("bad prefix label `{label}`")));
        }
        if SCHEME_PREFIXES.contains(&label) {
            return Err(CodecError::InvalidTable(format!("prefix label `{label}` is reserved")));
        }
        if !namespace.contains(':') {
            return Err(CodecError::InvalidTable(format!("namespace `{namespace}` is not absolute")));
        }
        if self.entries.iter().any(|(l, _)| l == label) {
            return Err(CodecError::InvalidTable(format!("duplicate prefix label `{label}`")));
        }
        if self.entries.iter().any(|(_, n)| n == namespace) {
            return Err(CodecError::InvalidTable(format!("duplicate namespace <{namespace}>")));
        }
        self.entries.push((label.to_string(), namespace.to_string()));
        Ok(())
    }

    /// Parses `label<TAB>namespace` lines; `#` starts a comment line.
    pub fn parse_tsv(text: &str) -> Result<Self, CodecError> {
        let mut table = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (label, ns) = line.split_once('\t').ok_or_else(|| {
                CodecError::InvalidTable(format!("line {}: expected label<TAB>namespace", lineno + 1))
            })?;
            table
                .insert(label.trim(), ns.trim())
                .map_err(|e| CodecError::InvalidTable(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, CodecError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CodecError::InvalidTable(format!("{}: {e}", path.display())))?;
        Self::parse_tsv(&text)
    }

    pub fn to_tsv(&self) -> String {
        self.entries.iter().map(|(l, n)| format!("{l}\t{n}\n")).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(l, n)| (l.as_str(), n.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn namespace(&self, label: &str) -> Option<&str> {
        self.entries.iter().find(|(l, _)| l == label).map(|(_, n)| n.as_str())
    }

    /// Longest-namespace match: returns `(label, local name)`.
    pub fn shorten<'a>(&'a self, iri: &'a str) -> Option<(&'a str, &'a str)> {
        self.entries
            .iter()
            .filter(|(_, ns)| iri.starts_with(ns.as_str()))
            .max_by_key(|(_, ns)| ns.len())
            .map(|(label, ns)| (label.as_str(), &iri[ns.len()..]))
    }
}

/// Whether a rule's surface is punctuation or a (possibly multi-word) keyword.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    Punct,
    Keyword,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub surface: String,
    pub token: String,
    pub kind: SurfaceKind,
}

/// Surface-to-token rules for punctuation, operators and keywords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplacementTable {
    rules: Vec<Rule>,
    by_token: HashMap<String, usize>,
    by_surface: HashMap<String, usize>,
}

const DEFAULT_PUNCT: &[(&str, &str)] = &[
    ("{", "brack_open"),
    ("}", "brack_close"),
    ("(", "par_open"),
    (")", "par_close"),
    (".", "sep_dot"),
    (";", "sep_semicolon"),
    (",", "sep_comma"),
    ("*", "wildcard"),
    ("<=", "math_leq"),
    (">=", "math_geq"),
    ("!=", "math_neq"),
    ("<", "math_lt"),
    (">", "math_gt"),
    ("=", "math_eq"),
    ("&&", "logical_and"),
    ("||", "logical_or"),
    ("!", "logical_not"),
    ("+", "math_plus"),
    ("-", "math_minus"),
    ("/", "math_div"),
    ("^^", "datatype"),
];

const DEFAULT_KEYWORDS: &[&str] = &[
    "SELECT", "ASK", "DISTINCT", "WHERE", "FILTER", "ORDER BY", "GROUP BY", "LIMIT", "OFFSET",
    "UNION", "OPTIONAL", "ASC", "DESC", "COUNT", "AS", "a", "LANG", "LANGMATCHES", "REGEX", "STR",
    "CONTAINS", "STRSTARTS", "BOUND", "YEAR", "true", "false",
];

fn keyword_token(surface: &str) -> String {
    surface.to_lowercase().replace(' ', "_")
}

impl Default for ReplacementTable {
    fn default() -> Self {
        let mut rules: Vec<Rule> = DEFAULT_PUNCT
            .iter()
            .map(|(s, t)| Rule { surface: s.to_string(), token: t.to_string(), kind: SurfaceKind::Punct })
            .collect();
        rules.extend(DEFAULT_KEYWORDS.iter().map(|s| Rule {
            surface: s.to_string(),
            token: keyword_token(s),
            kind: SurfaceKind::Keyword,
        }));
        Self::from_rules(rules).expect("built-in replacement table is invertible")
    }
}

fn surface_kind(surface: &str) -> Option<SurfaceKind> {
    if surface.is_empty() {
        return None;
    }
    if surface.split(' ').all(|w| !w.is_empty() && w.chars().all(|c| c.is_ascii_alphabetic())) {
        Some(SurfaceKind::Keyword)
    } else if surface.chars().all(|c| c.is_ascii_punctuation()) && surface.len() <= 2 {
        Some(SurfaceKind::Punct)
    } else {
        None
    }
}

impl ReplacementTable {
    pub fn from_rules(rules: Vec<Rule>) -> Result<Self, CodecError> {
        let mut by_token = HashMap::new();
        let mut by_surface = HashMap::new();
        for (i, rule) in rules.iter().enumerate() {
            let t = &rule.token;
            if !is_token(t) || !t.starts_with(|c: char| c.is_ascii_alphabetic()) {
                return Err(CodecError::InvalidTable(format!("token `{t}` leaves the alphabet")));
            }
            if t == QUOT_OPEN
                || t == QUOT_CLOSE
                || SCHEME_PREFIXES.iter().any(|p| t.starts_with(&format!("{p}_")))
            {
                return Err(CodecError::InvalidTable(format!("token `{t}` is reserved")));
            }
            let key = Self::surface_key(&rule.surface);
            if by_token.insert(t.clone(), i).is_some() {
                return Err(CodecError::InvalidTable(format!("token `{t}` used twice")));
            }
            if by_surface.insert(key, i).is_some() {
                return Err(CodecError::InvalidTable(format!("surface `{}` used twice", rule.surface)));
            }
        }
        Ok(Self { rules, by_token, by_surface })
    }

    /// Applies `surface<TAB>token` overrides on top of the built-in table.
    /// Existing surfaces get a new token; new keyword surfaces are added.
    pub fn with_override_tsv(text: &str) -> Result<Self, CodecError> {
        let mut rules = Self::default().rules;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (surface, token) = line.split_once('\t').ok_or_else(|| {
                CodecError::InvalidTable(format!("line {}: expected surface<TAB>token", lineno + 1))
            })?;
            let surface = surface.trim();
            let kind = surface_kind(surface).ok_or_else(|| {
                CodecError::InvalidTable(format!("line {}: unsupported surface `{surface}`", lineno + 1))
            })?;
            let key = Self::surface_key(surface);
            match rules.iter_mut().find(|r| Self::surface_key(&r.surface) == key) {
                Some(rule) => rule.token = token.trim().to_string(),
                None if kind == SurfaceKind::Keyword => rules.push(Rule {
                    surface: surface.to_uppercase(),
                    token: token.trim().to_string(),
                    kind,
                }),
                None => {
                    return Err(CodecError::InvalidTable(format!(
                        "line {}: unknown punctuation `{surface}`",
                        lineno + 1
                    )))
                }
            }
        }
        Self::from_rules(rules)
    }

    pub fn load_override(path: &Path) -> Result<Self, CodecError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CodecError::InvalidTable(format!("{}: {e}", path.display())))?;
        Self::with_override_tsv(&text)
    }

    fn surface_key(surface: &str) -> String {
        surface.to_uppercase()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule_for_surface(&self, surface: &str) -> Option<&Rule> {
        self.by_surface.get(&Self::surface_key(surface)).map(|&i| &self.rules[i])
    }

    pub fn rule_for_token(&self, token: &str) -> Option<&Rule> {
        self.by_token.get(token).map(|&i| &self.rules[i])
    }

    /// Punctuation surfaces, longest first.
    pub(crate) fn punct_surfaces(&self) -> Vec<&str> {
        let mut p: Vec<&str> = self
            .rules
            .iter()
            .filter(|r| r.kind == SurfaceKind::Punct)
            .map(|r| r.surface.as_str())
            .collect();
        p.sort_by_key(|s| std::cmp::Reverse(s.len()));
        p
    }

    pub(crate) fn is_multiword_head(&self, word: &str) -> bool {
        let head = format!("{} ", word.to_uppercase());
        self.rules.iter().any(|r| r.kind == SurfaceKind::Keyword && r.surface.to_uppercase().starts_with(&head))
    }

    pub fn to_tsv(&self) -> String {
        self.rules.iter().map(|r| format!("{}\t{}\n", r.surface, r.token)).collect()
    }
}
