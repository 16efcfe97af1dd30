use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, ParallelCorpus, Provenance, QQPair, TemplateStat};
use crate::codec::{Codec, Lexeme};
use crate::kb::{Binding, KnowledgeBase, RdfTerm, TermKind};

/// A question template, its query template and the assistant query that
/// supplies entities. The assistant projects `(entity, label)` variable
/// pairs, one pair per placeholder in placeholder order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePair {
    pub nl_template: String,
    pub sparql_template: String,
    pub placeholders: Vec<String>,
    pub assistant_query: String,
    slots: Vec<(String, String)>,
}

/// Placeholder names (`A` for `<A>`) in order of first appearance.
fn placeholders(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find('<') {
        rest = &rest[i + 1..];
        let Some(end) = rest.find('>') else { break };
        let name = &rest[..end];
        let mut chars = name.chars();
        let ok = chars.next().is_some_and(|c| c.is_ascii_uppercase())
            && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_');
        if ok {
            if !out.iter().any(|n| n == name) {
                out.push(name.to_string());
            }
            rest = &rest[end + 1..];
        }
    }
    out
}

fn substitute(text: &str, values: &BTreeMap<&str, String>) -> String {
    let mut out = text.to_string();
    for (name, v) in values {
        out = out.replace(&format!("<{name}>"), v);
    }
    out
}

/// Strips a surrounding `"..."` and trailing `@lang` or `^^<dt>` if the label
/// arrived in serialized form.
fn clean_label(raw: &str) -> String {
    if let Some(body) = raw.strip_prefix('"') {
        if let Some(close) = body.rfind('"') {
            let tail = &body[close + 1..];
            if tail.is_empty() || tail.starts_with('@') || tail.starts_with("^^") {
                return body[..close].to_string();
            }
        }
    }
    raw.to_string()
}

impl TemplatePair {
    /// `line` is used only in error messages.
    pub fn new(
        nl_template: &str,
        sparql_template: &str,
        assistant_query: &str,
        codec: &Codec,
        line: usize,
    ) -> Result<Self, CorpusError> {
        let nl = placeholders(nl_template);
        let sp = placeholders(sparql_template);
        let (a, b): (BTreeSet<_>, BTreeSet<_>) = (nl.iter().collect(), sp.iter().collect());
        if a != b {
            return Err(CorpusError::PlaceholderMismatch { line, nl, sparql: sp });
        }
        if nl.is_empty() {
            return Err(CorpusError::Template { line, message: "template has no placeholders".into() });
        }
        let malformed = |message: String| CorpusError::MalformedAssistant { line, message };
        let lexemes = codec.lex(assistant_query).map_err(|e| malformed(e.to_string()))?;
        let mut it = lexemes.iter().peekable();
        if !matches!(it.next(), Some(Lexeme::Symbol(s)) if s == "SELECT") {
            return Err(malformed("must be a SELECT query".into()));
        }
        if matches!(it.peek(), Some(Lexeme::Symbol(s)) if s == "DISTINCT") {
            it.next();
        }
        let mut vars = Vec::new();
        while let Some(Lexeme::Var(v)) = it.peek() {
            vars.push(v.clone());
            it.next();
        }
        if vars.len() != 2 * nl.len() {
            return Err(malformed(format!(
                "projects {} variables, expected 2 per placeholder ({})",
                vars.len(),
                2 * nl.len()
            )));
        }
        let slots = vars.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
        Ok(Self {
            nl_template: nl_template.to_string(),
            sparql_template: sparql_template.to_string(),
            placeholders: nl,
            assistant_query: assistant_query.to_string(),
            slots,
        })
    }

    /// `(entity, label)` variable names per placeholder.
    pub fn slots(&self) -> &[(String, String)] {
        &self.slots
    }

    fn term<'b>(&self, binding: &'b Binding, var: &str) -> Result<&'b RdfTerm, CorpusError> {
        binding.get(var).ok_or_else(|| CorpusError::MissingBinding(var.to_string()))
    }
}

/// Parses a TSV template file: `question<TAB>query<TAB>assistant`, with `#`
/// comment lines and blank lines ignored.
pub fn parse_templates(text: &str, codec: &Codec) -> Result<Vec<TemplatePair>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 3 {
            return Err(CorpusError::Template { line, message: format!("expected 3 columns, found {}", cols.len()) });
        }
        out.push(TemplatePair::new(cols[0].trim(), cols[1].trim(), cols[2].trim(), codec, line)?);
    }
    Ok(out)
}

pub fn load_templates(path: &Path, codec: &Codec) -> Result<Vec<TemplatePair>, CorpusError> {
    parse_templates(&std::fs::read_to_string(path)?, codec)
}

/// Fills a template from one assistant binding. The stored query is the
/// codec's normalized form.
pub fn instantiate(template: &TemplatePair, binding: &Binding, codec: &Codec) -> Result<QQPair, CorpusError> {
    if template.placeholders.is_empty() {
        return Err(CorpusError::Template { line: 0, message: "template has no placeholders".into() });
    }
    let mut labels = BTreeMap::new();
    let mut entities = BTreeMap::new();
    for (name, (ev, lv)) in template.placeholders.iter().zip(&template.slots) {
        let entity = template.term(binding, ev)?;
        if entity.kind != TermKind::Iri {
            return Err(CorpusError::WrongTermKind { var: ev.clone(), expected: "an IRI" });
        }
        let label = template.term(binding, lv)?;
        if label.kind != TermKind::Literal {
            return Err(CorpusError::WrongTermKind { var: lv.clone(), expected: "a literal" });
        }
        entities.insert(name.as_str(), codec.render_iri(&entity.value)?);
        labels.insert(name.as_str(), clean_label(&label.value).split_whitespace().collect::<Vec<_>>().join(" "));
    }
    let question = substitute(&template.nl_template, &labels);
    let query_raw = codec.normalize(&substitute(&template.sparql_template, &entities))?;
    let query_encoded = codec.encode(&query_raw)?;
    Ok(QQPair { question, query_raw: Some(query_raw), query_encoded })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateOptions {
    pub cap_per_template: usize,
    pub seed: u64,
    /// Accepted label languages, most preferred first. Untagged labels are
    /// accepted after all of these.
    pub languages: Vec<String>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { cap_per_template: 600, seed: 0, languages: vec!["en".into()] }
    }
}

fn lang_rank(term: &RdfTerm, languages: &[String]) -> Option<usize> {
    match &term.lang {
        None => Some(languages.len()),
        Some(l) => languages.iter().position(|p| p.eq_ignore_ascii_case(l)),
    }
}

/// One binding per entity tuple, labelled in the most preferred language,
/// in a fixed order independent of the backend's row order.
fn select_bindings(t: &TemplatePair, rows: Vec<Binding>, languages: &[String]) -> Vec<Binding> {
    let mut best: BTreeMap<Vec<RdfTerm>, (Vec<usize>, Binding)> = BTreeMap::new();
    for b in rows {
        let mut key = Vec::new();
        let mut rank = Vec::new();
        let mut ok = true;
        for (ev, lv) in &t.slots {
            match (b.get(ev), b.get(lv).and_then(|l| lang_rank(l, languages).map(|r| (l, r)))) {
                (Some(e), Some((_, r))) => {
                    key.push(e.clone());
                    rank.push(r);
                }
                _ => ok = false,
            }
        }
        if !ok {
            continue;
        }
        match best.get(&key) {
            Some((r, prev)) if (r, prev) <= (&rank, &b) => {}
            _ => {
                best.insert(key, (rank, b));
            }
        }
    }
    best.into_values().map(|(_, b)| b).collect()
}

/// Runs each template's assistant query, keeps up to the cap of seeded
/// shuffled bindings and removes duplicate pairs (first occurrence wins).
pub fn generate<K: KnowledgeBase + ?Sized>(
    templates: &[TemplatePair],
    kb: &K,
    codec: &Codec,
    opts: &GenerateOptions,
) -> Result<ParallelCorpus, CorpusError> {
    let mut provenance = Provenance { seed: opts.seed, cap_per_template: opts.cap_per_template, ..Default::default() };
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (id, t) in templates.iter().enumerate() {
        let rows = kb.select(&codec.with_prologue(&t.assistant_query))?;
        let mut bindings = select_bindings(t, rows, &opts.languages);
        let available = bindings.len();
        if available == 0 {
            let w = format!("template {id} ({}) yielded no bindings", t.nl_template);
            log::warn!("{w}");
            provenance.warnings.push(w);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        bindings.shuffle(&mut rng);
        bindings.truncate(opts.cap_per_template);
        let mut kept = 0;
        for b in &bindings {
            let p = instantiate(t, b, codec)?;
            if seen.insert((p.question.clone(), p.query_raw.clone())) {
                pairs.push(p);
                kept += 1;
            }
        }
        provenance.templates.push(TemplateStat { id, nl_template: t.nl_template.clone(), bindings: available, kept });
    }
    Ok(ParallelCorpus { pairs, provenance })
}
