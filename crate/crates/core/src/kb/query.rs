use std::collections::{HashMap, HashSet};

use super::{Binding, KbError, RdfTerm, TripleStore};
use crate::codec::{lex, Lexeme, PrefixTable, ReplacementTable};

const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
const XSD: &str = "http://www.w3.org/2001/XMLSchema#";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PatternTerm {
    Var(String),
    Term(RdfTerm),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

impl Pattern {
    pub fn terms(&self) -> [&PatternTerm; 3] {
        [&self.subject, &self.predicate, &self.object]
    }
}

/// The subset of SELECT the local evaluator understands: projection,
/// DISTINCT, a basic graph pattern, LIMIT and OFFSET.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectQuery {
    pub distinct: bool,
    /// `None` for `SELECT *`.
    pub projection: Option<Vec<String>>,
    pub patterns: Vec<Pattern>,
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

fn unsupported<T>(msg: impl Into<String>) -> Result<T, KbError> {
    Err(KbError::UnsupportedQuery(msg.into()))
}

fn is_sym(l: Option<&Lexeme>, s: &str) -> bool {
    matches!(l, Some(Lexeme::Symbol(x)) if x == s)
}

struct Parser {
    lexemes: Vec<Lexeme>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Lexeme> {
        self.lexemes.get(self.pos)
    }

    fn next(&mut self) -> Option<Lexeme> {
        let l = self.lexemes.get(self.pos).cloned();
        self.pos += 1;
        l
    }

    fn eat(&mut self, s: &str) -> bool {
        if is_sym(self.peek(), s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn term(&mut self) -> Result<PatternTerm, KbError> {
        Ok(match self.next() {
            Some(Lexeme::Var(v)) => PatternTerm::Var(v),
            Some(Lexeme::Iri(i)) => PatternTerm::Term(RdfTerm::iri(i)),
            Some(Lexeme::Literal { value, lang }) => {
                if self.eat("^^") {
                    match self.next() {
                        Some(Lexeme::Iri(dt)) => PatternTerm::Term(RdfTerm::typed_literal(value, dt)),
                        _ => return unsupported("expected datatype IRI after ^^"),
                    }
                } else {
                    match lang {
                        Some(l) => PatternTerm::Term(RdfTerm::lang_literal(value, l)),
                        None => PatternTerm::Term(RdfTerm::literal(value)),
                    }
                }
            }
            Some(Lexeme::Number(n)) => {
                let dt = if n.contains(['e', 'E']) {
                    "double"
                } else if n.contains('.') {
                    "decimal"
                } else {
                    "integer"
                };
                PatternTerm::Term(RdfTerm::typed_literal(n, format!("{XSD}{dt}")))
            }
            Some(Lexeme::Symbol(s)) if s == "a" => PatternTerm::Term(RdfTerm::iri(RDF_TYPE)),
            Some(Lexeme::Symbol(s)) if s == "true" || s == "false" => {
                PatternTerm::Term(RdfTerm::typed_literal(s, format!("{XSD}boolean")))
            }
            Some(other) => return unsupported(format!("unexpected {other:?} in graph pattern")),
            None => return unsupported("unexpected end of query"),
        })
    }

    fn count(&mut self) -> Result<usize, KbError> {
        match self.next() {
            Some(Lexeme::Number(n)) => n.parse().or_else(|_| unsupported(format!("bad count `{n}`"))),
            _ => unsupported("expected a number"),
        }
    }

    fn parse(mut self) -> Result<SelectQuery, KbError> {
        if !self.eat("SELECT") {
            return unsupported("only SELECT queries are evaluated locally");
        }
        let distinct = self.eat("DISTINCT");
        let projection = if self.eat("*") {
            None
        } else {
            let mut vars = Vec::new();
            while let Some(Lexeme::Var(v)) = self.peek() {
                vars.push(v.clone());
                self.pos += 1;
            }
            if vars.is_empty() {
                return unsupported("empty projection");
            }
            Some(vars)
        };
        self.eat("WHERE");
        if !self.eat("{") {
            return unsupported("expected `{`");
        }
        let mut patterns = Vec::new();
        'triples: loop {
            if self.eat("}") {
                break;
            }
            let subject = self.term()?;
            loop {
                let predicate = self.term()?;
                loop {
                    let object = self.term()?;
                    patterns.push(Pattern { subject: subject.clone(), predicate: predicate.clone(), object });
                    if !self.eat(",") {
                        break;
                    }
                }
                if self.eat(";") {
                    if is_sym(self.peek(), ".") || is_sym(self.peek(), "}") {
                        break;
                    }
                    continue;
                }
                break;
            }
            if self.eat(".") {
                continue 'triples;
            }
            if self.eat("}") {
                break;
            }
            return unsupported(format!("unexpected {:?} after triple pattern", self.peek()));
        }
        let (mut limit, mut offset) = (None, None);
        while let Some(l) = self.next() {
            match l {
                Lexeme::Symbol(s) if s == "LIMIT" && limit.is_none() => limit = Some(self.count()?),
                Lexeme::Symbol(s) if s == "OFFSET" && offset.is_none() => offset = Some(self.count()?),
                other => return unsupported(format!("unsupported clause {other:?}")),
            }
        }
        Ok(SelectQuery { distinct, projection, patterns, limit, offset })
    }
}

pub fn parse_select(query: &str, prefixes: &PrefixTable) -> Result<SelectQuery, KbError> {
    let lexemes = lex(query, prefixes, &ReplacementTable::default())?;
    Parser { lexemes, pos: 0 }.parse()
}

type Solution = HashMap<String, RdfTerm>;

fn resolve<'a>(t: &'a PatternTerm, sol: &'a Solution) -> Option<&'a RdfTerm> {
    match t {
        PatternTerm::Term(term) => Some(term),
        PatternTerm::Var(v) => sol.get(v),
    }
}

fn unify(t: &PatternTerm, value: &RdfTerm, sol: &mut Solution) -> bool {
    match t {
        PatternTerm::Term(term) => term == value,
        PatternTerm::Var(v) => match sol.get(v) {
            Some(bound) => bound == value,
            None => {
                sol.insert(v.clone(), value.clone());
                true
            }
        },
    }
}

impl SelectQuery {
    /// Variables in order of first appearance in the pattern.
    pub fn pattern_vars(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for p in &self.patterns {
            for t in p.terms() {
                if let PatternTerm::Var(v) = t {
                    if seen.insert(v.clone()) {
                        out.push(v.clone());
                    }
                }
            }
        }
        out
    }

    pub fn projected_vars(&self) -> Vec<String> {
        self.projection.clone().unwrap_or_else(|| self.pattern_vars())
    }

    /// Left-to-right join with index lookups on bound positions.
    pub fn evaluate(&self, store: &TripleStore) -> Vec<Binding> {
        let mut solutions: Vec<Solution> = vec![Solution::new()];
        for p in &self.patterns {
            let mut next = Vec::new();
            for sol in &solutions {
                let s = resolve(&p.subject, sol);
                let pr = resolve(&p.predicate, sol);
                for triple in store.candidates(s, pr) {
                    let mut ext = sol.clone();
                    if unify(&p.subject, &triple.subject, &mut ext)
                        && unify(&p.predicate, &triple.predicate, &mut ext)
                        && unify(&p.object, &triple.object, &mut ext)
                    {
                        next.push(ext);
                    }
                }
            }
            solutions = next;
            if solutions.is_empty() {
                break;
            }
        }
        self.finish(solutions)
    }

    /// Projection, DISTINCT, sort by projected values, OFFSET and LIMIT.
    pub(crate) fn finish(&self, solutions: Vec<Solution>) -> Vec<Binding> {
        let vars = self.projected_vars();
        let mut rows: Vec<Binding> = solutions
            .into_iter()
            .map(|sol| vars.iter().filter_map(|v| sol.get(v).map(|t| (v.clone(), t.clone()))).collect())
            .collect();
        let key = |b: &Binding| vars.iter().map(|v| b.get(v).cloned()).collect::<Vec<_>>();
        rows.sort_by_cached_key(key);
        if self.distinct {
            rows.dedup();
        }
        let offset = self.offset.unwrap_or(0).min(rows.len());
        let rows = rows.split_off(offset);
        match self.limit {
            Some(l) => rows.into_iter().take(l).collect(),
            None => rows,
        }
    }
}
