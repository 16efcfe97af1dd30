use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::{KbError, KnowledgeBase, RdfTerm, TermKind};
use crate::codec::PrefixTable;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triple {
    pub subject: RdfTerm,
    pub predicate: RdfTerm,
    pub object: RdfTerm,
}

/// Immutable set of triples indexed by subject and predicate.
#[derive(Debug, Clone, Default)]
pub struct TripleStore {
    triples: Vec<Triple>,
    by_subject: HashMap<RdfTerm, Vec<usize>>,
    by_predicate: HashMap<RdfTerm, Vec<usize>>,
    prefixes: PrefixTable,
}

impl TripleStore {
    /// Builds a store; duplicates are dropped, first occurrence order kept.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Result<Self, KbError> {
        let mut seen = HashSet::new();
        let mut store = TripleStore { prefixes: PrefixTable::dbpedia(), ..Default::default() };
        for t in triples {
            if t.subject.is_literal() || t.predicate.kind != TermKind::Iri {
                return Err(KbError::Parse { line: 0, message: "literal subject or non-IRI predicate".into() });
            }
            if seen.insert(t.clone()) {
                let i = store.triples.len();
                store.by_subject.entry(t.subject.clone()).or_default().push(i);
                store.by_predicate.entry(t.predicate.clone()).or_default().push(i);
                store.triples.push(t);
            }
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_triples(parse_ntriples(&text)?)
    }

    /// Prefixes used to resolve prefixed names in queries. DBpedia by default.
    pub fn with_prefixes(mut self, prefixes: PrefixTable) -> Self {
        self.prefixes = prefixes;
        self
    }

    pub fn prefixes(&self) -> &PrefixTable {
        &self.prefixes
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, s: &RdfTerm, p: &RdfTerm, o: &RdfTerm) -> bool {
        self.by_subject
            .get(s)
            .is_some_and(|ix| ix.iter().any(|&i| self.triples[i].predicate == *p && self.triples[i].object == *o))
    }

    /// Candidate triples for a pattern with the given bound positions.
    pub(crate) fn candidates(&self, s: Option<&RdfTerm>, p: Option<&RdfTerm>) -> Box<dyn Iterator<Item = &Triple> + '_> {
        const NONE: &[usize] = &[];
        match (s, p) {
            (Some(s), _) => Box::new(self.by_subject.get(s).map_or(NONE, Vec::as_slice).iter().map(|&i| &self.triples[i])),
            (None, Some(p)) => {
                Box::new(self.by_predicate.get(p).map_or(NONE, Vec::as_slice).iter().map(|&i| &self.triples[i]))
            }
            (None, None) => Box::new(self.triples.iter()),
        }
    }
}

impl KnowledgeBase for TripleStore {
    fn select(&self, query: &str) -> Result<Vec<super::Binding>, KbError> {
        let q = super::parse_select(query, &self.prefixes)?;
        Ok(q.evaluate(self))
    }
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
}

impl Cursor<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, KbError> {
        Err(KbError::Parse { line: self.line, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn until(&mut self, end: char) -> Result<String, KbError> {
        let mut s = String::new();
        loop {
            match self.chars.next() {
                Some(c) if c == end => return Ok(s),
                Some(c) => s.push(c),
                None => return self.err(format!("expected `{end}`")),
            }
        }
    }

    fn hex_char(&mut self, n: usize) -> Result<char, KbError> {
        let hex: String = (0..n).filter_map(|_| self.chars.next()).collect();
        match u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
            Some(c) if hex.len() == n => Ok(c),
            _ => self.err("bad unicode escape"),
        }
    }

    fn term(&mut self) -> Result<RdfTerm, KbError> {
        self.skip_ws();
        match self.chars.next() {
            Some('<') => {
                let iri = self.until('>')?;
                if !iri.contains(':') {
                    return self.err(format!("relative IRI <{iri}>"));
                }
                Ok(RdfTerm::iri(iri))
            }
            Some('_') => {
                if self.chars.next() != Some(':') {
                    return self.err("expected `_:`");
                }
                let mut label = String::new();
                while self.chars.peek().is_some_and(|c| c.is_alphanumeric() || *c == '_' || *c == '-') {
                    label.push(self.chars.next().unwrap());
                }
                if label.is_empty() {
                    return self.err("empty blank node label");
                }
                Ok(RdfTerm::blank(label))
            }
            Some('"') => {
                let mut value = String::new();
                loop {
                    match self.chars.next() {
                        Some('"') => break,
                        Some('\\') => match self.chars.next() {
                            Some('n') => value.push('\n'),
                            Some('t') => value.push('\t'),
                            Some('r') => value.push('\r'),
                            Some('"') => value.push('"'),
                            Some('\\') => value.push('\\'),
                            Some('u') => value.push(self.hex_char(4)?),
                            Some('U') => value.push(self.hex_char(8)?),
                            _ => return self.err("bad escape in literal"),
                        },
                        Some(c) => value.push(c),
                        None => return self.err("unterminated literal"),
                    }
                }
                match self.chars.peek() {
                    Some('@') => {
                        self.chars.next();
                        let mut lang = String::new();
                        while self.chars.peek().is_some_and(|c| c.is_ascii_alphanumeric() || *c == '-') {
                            lang.push(self.chars.next().unwrap());
                        }
                        if lang.is_empty() {
                            return self.err("empty language tag");
                        }
                        Ok(RdfTerm::lang_literal(value, lang))
                    }
                    Some('^') => {
                        self.chars.next();
                        if self.chars.next() != Some('^') || self.chars.next() != Some('<') {
                            return self.err("expected `^^<datatype>`");
                        }
                        Ok(RdfTerm::typed_literal(value, self.until('>')?))
                    }
                    _ => Ok(RdfTerm::literal(value)),
                }
            }
            Some(c) => self.err(format!("unexpected `{c}`")),
            None => self.err("unexpected end of line"),
        }
    }
}

/// Parses N-Triples lines `<s> <p> <o> .`; `#` lines and blank lines are
/// skipped. Errors carry 1-based line numbers.
pub fn parse_ntriples(text: &str) -> Result<Vec<Triple>, KbError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut cur = Cursor { chars: trimmed.chars().peekable(), line: i + 1 };
        let subject = cur.term()?;
        let predicate = cur.term()?;
        let object = cur.term()?;
        if subject.is_literal() {
            return cur.err("literal in subject position");
        }
        if predicate.kind != TermKind::Iri {
            return cur.err("predicate must be an IRI");
        }
        cur.skip_ws();
        if cur.chars.next() != Some('.') {
            return cur.err("expected `.` at end of triple");
        }
        cur.skip_ws();
        if cur.chars.peek().is_some_and(|c| *c != '#') {
            return cur.err("trailing characters after `.`");
        }
        out.push(Triple { subject, predicate, object });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"
# monuments
<http://dbpedia.org/resource/Carew_Cross> <http://dbpedia.org/ontology/location> <http://dbpedia.org/resource/Carew> .
<http://dbpedia.org/resource/Carew_Cross> <http://www.w3.org/2000/01/rdf-schema#label> "Carew Cross"@en .
<http://dbpedia.org/resource/Carew_Cross> <http://dbpedia.org/ontology/height> "4.2"^^<http://www.w3.org/2001/XMLSchema#double> .
_:b0 <http://dbpedia.org/ontology/note> "say \"hi\"é" .
<http://dbpedia.org/resource/Carew> <http://www.w3.org/2000/01/rdf-schema#label> "Carew"@en .
"#;

    #[test]
    fn fixture_loads() {
        let store = TripleStore::from_triples(parse_ntriples(FIXTURE).unwrap()).unwrap();
        assert_eq!(store.len(), 5);
        assert_eq!(store.triples()[3].object.value, "say \"hi\"é");
        assert!(store.contains(
            &RdfTerm::iri("http://dbpedia.org/resource/Carew_Cross"),
            &RdfTerm::iri("http://dbpedia.org/ontology/location"),
            &RdfTerm::iri("http://dbpedia.org/resource/Carew"),
        ));
    }

    #[test]
    fn empty_and_duplicates() {
        assert!(TripleStore::from_triples(parse_ntriples("").unwrap()).unwrap().is_empty());
        let line = "<http://a/s> <http://a/p> <http://a/o> .\n";
        let store = TripleStore::from_triples(parse_ntriples(&line.repeat(2)).unwrap()).unwrap();
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn errors_report_line_numbers() {
        let bad = "<http://a/s> <http://a/p> <http://a/o> .\n<http://a/s> \"lit\" <http://a/o> .\n";
        match parse_ntriples(bad) {
            Err(KbError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_ntriples("<http://a/s> <http://a/p> <http://a/o>").is_err());
        assert!(parse_ntriples("\"x\" <http://a/p> <http://a/o> .").is_err());
    }
}
