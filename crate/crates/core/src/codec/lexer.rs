use std::collections::HashMap;

use super::tables::{PrefixTable, ReplacementTable, SurfaceKind};
use super::CodecError;

/// One lexical unit of a query, with prefixed names already resolved to
/// absolute IRIs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Lexeme {
    /// Canonical surface of a replacement rule (`SELECT`, `{`, `ORDER BY`, ...).
    Symbol(String),
    Var(String),
    Iri(String),
    /// String literal; internal whitespace is collapsed to single spaces.
    Literal { value: String, lang: Option<String> },
    Number(String),
}

impl Lexeme {
    fn is_value(&self) -> bool {
        match self {
            Lexeme::Symbol(s) => s == ")",
            _ => true,
        }
    }
}

const PN_LOCAL_ESC: &str = "_~.-!$&'()*+,;=/?#@%";

pub(crate) fn is_absolute_iri(iri: &str) -> bool {
    match iri.split_once(':') {
        Some((scheme, _)) => {
            let mut c = scheme.chars();
            matches!(c.next(), Some(f) if f.is_ascii_alphabetic())
                && c.all(|c| c.is_ascii_alphanumeric() || "+.-".contains(c))
        }
        None => false,
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    table: &'a ReplacementTable,
    prefixes: &'a PrefixTable,
    declared: HashMap<String, String>,
    out: Vec<Lexeme>,
}

impl<'a> Lexer<'a> {
    fn err(&self, message: impl Into<String>) -> CodecError {
        CodecError::Lex { offset: self.pos, message: message.into() }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.rest().chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
    }

    fn run(mut self) -> Result<Vec<Lexeme>, CodecError> {
        loop {
            self.skip_trivia();
            let Some(c) = self.peek() else { break };
            match c {
                '?' | '$' => self.var()?,
                '<' => {
                    if let Some(iri) = self.try_iriref() {
                        if !is_absolute_iri(&iri) {
                            return Err(self.err(format!("relative IRI <{iri}>")));
                        }
                        self.out.push(Lexeme::Iri(iri));
                    } else {
                        self.punct()?;
                    }
                }
                '"' | '\'' => self.literal()?,
                '0'..='9' => self.number()?,
                '+' | '-'
                    if self.peek_at(1).is_some_and(|d| d.is_ascii_digit())
                        && !self.out.last().is_some_and(Lexeme::is_value) =>
                {
                    self.number()?
                }
                c if c.is_ascii_alphabetic() => self.word()?,
                ':' => return Err(self.err("empty prefix labels are not supported")),
                _ => self.punct()?,
            }
        }
        Ok(self.out)
    }

    fn var(&mut self) -> Result<(), CodecError> {
        self.bump();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.bump();
        }
        if start == self.pos {
            return Err(self.err("empty variable name"));
        }
        self.out.push(Lexeme::Var(self.src[start..self.pos].to_string()));
        Ok(())
    }

    /// Consumes `<...>` if it forms an IRI reference; otherwise leaves the
    /// position untouched.
    fn try_iriref(&mut self) -> Option<String> {
        let rest = self.rest();
        let body = &rest[1..];
        let end = body.find(|c: char| c == '>' || c.is_whitespace() || "<\"{}|^`\\".contains(c))?;
        if !body[end..].starts_with('>') || end == 0 {
            return None;
        }
        let iri = body[..end].to_string();
        self.pos += end + 2;
        Some(iri)
    }

    fn literal(&mut self) -> Result<(), CodecError> {
        let quote = self.bump().unwrap();
        let mut value = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err("unterminated string literal")),
                Some(c) if c == quote => break,
                Some('\\') => match self.bump() {
                    Some('n') => value.push('\n'),
                    Some('t') => value.push('\t'),
                    Some('r') => value.push('\r'),
                    Some(c @ ('"' | '\'' | '\\')) => value.push(c),
                    _ => return Err(self.err("bad escape in string literal")),
                },
                Some(c) => value.push(c),
            }
        }
        let mut lang = None;
        if self.peek() == Some('@') {
            self.bump();
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '-') {
                self.bump();
            }
            let tag = &self.src[start..self.pos];
            if tag.is_empty() || !tag.starts_with(|c: char| c.is_ascii_alphabetic()) {
                return Err(self.err("bad language tag"));
            }
            lang = Some(tag.to_string());
        }
        let value = value.split_whitespace().collect::<Vec<_>>().join(" ");
        self.out.push(Lexeme::Literal { value, lang });
        Ok(())
    }

    fn number(&mut self) -> Result<(), CodecError> {
        let start = self.pos;
        if matches!(self.peek(), Some('+' | '-')) {
            self.bump();
        }
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.peek().is_some_and(|c| c.is_ascii_digit()) {
                lx.bump();
            }
            lx.pos > s
        };
        digits(self);
        if self.peek() == Some('.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
            digits(self);
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.bump();
            if matches!(self.peek(), Some('+' | '-')) {
                self.bump();
            }
            if !digits(self) {
                self.pos = save;
            }
        }
        if self.peek().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') {
            return Err(self.err("malformed number"));
        }
        self.out.push(Lexeme::Number(self.src[start..self.pos].to_string()));
        Ok(())
    }

    fn word(&mut self) -> Result<(), CodecError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
            self.bump();
        }
        let word = &self.src[start..self.pos];
        if self.peek() == Some(':') {
            self.bump();
            let local = self.local_name()?;
            let ns = self
                .declared
                .get(word)
                .map(String::as_str)
                .or_else(|| self.prefixes.namespace(word))
                .ok_or_else(|| CodecError::UnknownPrefix(word.to_string()))?;
            self.out.push(Lexeme::Iri(format!("{ns}{local}")));
            return Ok(());
        }
        if word.eq_ignore_ascii_case("PREFIX") {
            return self.prefix_decl();
        }
        if word.eq_ignore_ascii_case("BASE") {
            return Err(self.err("BASE declarations are not supported"));
        }
        let mut surface = word.to_string();
        if self.table.is_multiword_head(word) {
            let save = self.pos;
            self.skip_trivia();
            let s2 = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
                self.bump();
            }
            let candidate = format!("{word} {}", &self.src[s2..self.pos]);
            if self.table.rule_for_surface(&candidate).is_some() {
                surface = candidate;
            } else {
                self.pos = save;
            }
        }
        match self.table.rule_for_surface(&surface) {
            Some(rule) if rule.kind == SurfaceKind::Keyword => {
                self.out.push(Lexeme::Symbol(rule.surface.clone()));
                Ok(())
            }
            _ => {
                self.pos = start;
                Err(self.err(format!("unknown keyword `{surface}`")))
            }
        }
    }

    fn local_name(&mut self) -> Result<String, CodecError> {
        let start = self.pos;
        let mut local = String::new();
        // byte offsets of the end of each pushed char plus whether it was a bare '.'
        let mut marks: Vec<(usize, bool)> = Vec::new();
        loop {
            let Some(c) = self.peek() else { break };
            if c.is_alphanumeric() || c == '_' || c == '-' || c == ':' || c == '.' {
                self.bump();
                local.push(c);
                marks.push((self.pos, c == '.'));
            } else if c == '%' {
                let h1 = self.peek_at(1);
                let h2 = self.peek_at(2);
                if h1.is_some_and(|h| h.is_ascii_hexdigit()) && h2.is_some_and(|h| h.is_ascii_hexdigit()) {
                    for _ in 0..3 {
                        local.push(self.bump().unwrap());
                    }
                    marks.push((self.pos, false));
                } else {
                    return Err(self.err("bad percent escape in local name"));
                }
            } else if c == '\\' {
                match self.peek_at(1) {
                    Some(e) if PN_LOCAL_ESC.contains(e) => {
                        self.bump();
                        self.bump();
                        local.push(e);
                        marks.push((self.pos, false));
                    }
                    _ => return Err(self.err("bad escape in local name")),
                }
            } else {
                break;
            }
        }
        // A trailing bare '.' terminates the triple, it is not part of the name.
        while let Some(&(_, true)) = marks.last() {
            marks.pop();
            local.pop();
            self.pos = marks.last().map(|m| m.0).unwrap_or(start);
        }
        Ok(local)
    }

    fn prefix_decl(&mut self) -> Result<(), CodecError> {
        self.skip_trivia();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
            self.bump();
        }
        let label = self.src[start..self.pos].to_string();
        if self.bump() != Some(':') {
            return Err(self.err("expected `:` in PREFIX declaration"));
        }
        self.skip_trivia();
        if self.peek() != Some('<') {
            return Err(self.err("expected IRI in PREFIX declaration"));
        }
        let ns = self.try_iriref().ok_or_else(|| self.err("bad IRI in PREFIX declaration"))?;
        self.declared.insert(label, ns);
        Ok(())
    }

    fn punct(&mut self) -> Result<(), CodecError> {
        let rest = self.rest();
        let hit = self.table.punct_surfaces().into_iter().find(|s| rest.starts_with(s)).map(str::to_string);
        match hit {
            Some(s) => {
                self.pos += s.len();
                self.out.push(Lexeme::Symbol(s));
                Ok(())
            }
            None => Err(self.err(format!("unexpected character `{}`", self.peek().unwrap_or(' ')))),
        }
    }
}

/// Splits query text into lexemes. `PREFIX` declarations are consumed and
/// used to resolve prefixed names; undeclared labels fall back to `prefixes`.
pub fn lex(raw: &str, prefixes: &PrefixTable, table: &ReplacementTable) -> Result<Vec<Lexeme>, CodecError> {
    Lexer { src: raw, pos: 0, table, prefixes, declared: HashMap::new(), out: Vec::new() }.run()
}

/// Renders an IRI local name as a SPARQL `PN_LOCAL`, or `None` if the name
/// has no prefixed-name spelling.
pub(crate) fn render_local(local: &str) -> Option<String> {
    let chars: Vec<char> = local.chars().collect();
    let mut out = String::with_capacity(local.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let first = i == 0;
        let last = i + 1 == chars.len();
        if c.is_alphanumeric() || c == '_' || c == ':' {
            out.push(c);
        } else if c == '-' && !first {
            out.push(c);
        } else if c == '.' && !first && !last {
            out.push(c);
        } else if c == '%'
            && chars.get(i + 1).is_some_and(|h| h.is_ascii_hexdigit())
            && chars.get(i + 2).is_some_and(|h| h.is_ascii_hexdigit())
        {
            out.extend(&chars[i..i + 3]);
            i += 3;
            continue;
        } else if PN_LOCAL_ESC.contains(c) {
            out.push('\\');
            out.push(c);
        } else {
            return None;
        }
        i += 1;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lx(s: &str) -> Vec<Lexeme> {
        lex(s, &PrefixTable::dbpedia(), &ReplacementTable::default()).unwrap()
    }

    #[test]
    fn known_for_query() {
        let q = "PREFIX dbr: <http://dbpedia.org/resource/>\nPREFIX dbo: <http://dbpedia.org/ontology/>\n\
                 SELECT DISTINCT ?uri WHERE { dbr:Sam_Loyd dbo:knownFor ?uri . }";
        let l = lx(q);
        assert_eq!(l[0], Lexeme::Symbol("SELECT".into()));
        assert_eq!(l[5], Lexeme::Iri("http://dbpedia.org/resource/Sam_Loyd".into()));
        assert_eq!(l.len(), 10);
    }

    #[test]
    fn trailing_dot_is_a_separator() {
        let l = lx("{ ?x dbo:location dbr:Carew.}");
        assert_eq!(l[3], Lexeme::Iri("http://dbpedia.org/resource/Carew".into()));
        assert_eq!(l[4], Lexeme::Symbol(".".into()));
    }

    #[test]
    fn operators_and_iri_disambiguation() {
        let l = lx("FILTER(?x<=5 && ?y < ?z) ?a <http://x.org/a> (-3) ?b-2");
        assert!(l.contains(&Lexeme::Symbol("<=".into())));
        assert!(l.contains(&Lexeme::Symbol("<".into())));
        assert!(l.contains(&Lexeme::Iri("http://x.org/a".into())));
        assert!(l.contains(&Lexeme::Number("-3".into())));
        // after a value, `-` is the binary operator
        assert_eq!(&l[l.len() - 2..], &[Lexeme::Symbol("-".into()), Lexeme::Number("2".into())]);
    }

    #[test]
    fn literals_and_keywords() {
        let l = lx("select ?l where { ?s rdfs:label 'Carew   Cross'@en } order  by desc(?l)");
        assert_eq!(l[0], Lexeme::Symbol("SELECT".into()));
        assert!(l.contains(&Lexeme::Literal { value: "Carew Cross".into(), lang: Some("en".into()) }));
        assert!(l.contains(&Lexeme::Symbol("ORDER BY".into())));
    }

    #[test]
    fn errors() {
        let p = PrefixTable::dbpedia();
        let t = ReplacementTable::default();
        assert!(matches!(lex("SELECT ?x WHERE { <rel> ?p ?o }", &p, &t), Err(CodecError::Lex { .. })));
        assert!(matches!(lex("SELECT ?x WHERE { ex:a ?p ?o }", &p, &t), Err(CodecError::UnknownPrefix(_))));
        assert!(matches!(lex("SELECT ?x WHERE { \"open", &p, &t), Err(CodecError::Lex { .. })));
        assert!(matches!(lex("FROBNICATE ?x", &p, &t), Err(CodecError::Lex { .. })));
    }

    #[test]
    fn escaped_local_names() {
        let l = lx("dbr:Foo_\\(bar\\) dbr:A.B");
        assert_eq!(l[0], Lexeme::Iri("http://dbpedia.org/resource/Foo_(bar)".into()));
        assert_eq!(l[1], Lexeme::Iri("http://dbpedia.org/resource/A.B".into()));
        assert_eq!(render_local("Foo_(bar)").unwrap(), "Foo_\\(bar\\)");
        assert_eq!(render_local("A."), Some("A\\.".into()));
        assert_eq!(render_local("a b"), None);
    }
}
