//! A small offline monument knowledge base with six template pairs, one of
//! them with two placeholders. Everything is generated locally.

use super::{generate, parse_templates, CorpusError, GenerateOptions, ParallelCorpus};
use crate::codec::Codec;
use crate::kb::{parse_ntriples, TripleStore};

/// N-Triples: 100 distinctly named monuments in 40 towns, with labels,
/// architects, heights and construction years.
pub const MINI_MONUMENT_TRIPLES: &str = include_str!("../../data/mini_monument/kb.nt");

pub const MINI_MONUMENT_TEMPLATES: &str = include_str!("../../data/mini_monument/templates.tsv");

pub fn mini_monument_store() -> Result<TripleStore, CorpusError> {
    Ok(TripleStore::from_triples(parse_ntriples(MINI_MONUMENT_TRIPLES)?)?)
}

/// The corpus generated from the bundled store and templates.
pub fn mini_monument(seed: u64) -> Result<ParallelCorpus, CorpusError> {
    let codec = Codec::dbpedia();
    let templates = parse_templates(MINI_MONUMENT_TEMPLATES, &codec)?;
    generate(&templates, &mini_monument_store()?, &codec, &GenerateOptions { seed, ..Default::default() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generates_enough_pairs_from_every_template() {
        let c = mini_monument(0).unwrap();
        assert!(c.len() >= 500, "{}", c.len());
        assert_eq!(c.provenance.templates.len(), 6);
        assert!(c.provenance.templates.iter().all(|t| t.kept > 0));
        assert!(c.provenance.warnings.is_empty());
        let two = c.pairs.iter().find(|p| p.question.starts_with("Is ")).unwrap();
        assert_eq!(two.query_raw.as_deref().map(|q| q.matches("dbr:").count()), Some(2));
        assert_eq!(mini_monument(0).unwrap(), c);
    }
}
