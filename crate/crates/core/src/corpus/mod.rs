//! Template-driven generation of aligned question/query corpora, plus the
//! tokenizer, vocabulary, split and on-disk format used by training.

pub mod bundled;
mod io;
mod split;
mod template;
mod tokenize;
mod vocab;

use thiserror::Error;

use crate::codec::{CodecError, EncodedQuery};
use crate::kb::KbError;

pub use io::{read_corpus, read_pairs, write_corpus, write_pairs};
pub use split::{split, DatasetSplits, SplitMode, SplitSpec};
pub use template::{generate, instantiate, load_templates, parse_templates, GenerateOptions, TemplatePair};
pub use tokenize::{tokenize_nl, tokenize_nl_with};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("template line {line}: {message}")]
    Template { line: usize, message: String },
    #[error("template line {line}: placeholders differ (question {nl:?}, query {sparql:?})")]
    PlaceholderMismatch { line: usize, nl: Vec<String>, sparql: Vec<String> },
    #[error("template line {line}: malformed assistant query: {message}")]
    MalformedAssistant { line: usize, message: String },
    #[error("binding lacks variable ?{0}")]
    MissingBinding(String),
    #[error("binding for ?{var} is not {expected}")]
    WrongTermKind { var: String, expected: &'static str },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("corpus of {available} pairs is too small: {needed} needed")]
    TooSmall { needed: usize, available: usize },
    #[error("{split}: {questions} question lines but {queries} query lines")]
    Alignment { split: String, questions: usize, queries: usize },
    #[error("text contains a line break: {0:?}")]
    LineBreak(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
}

/// One question with its query. `query_raw` is absent for pairs read back
/// from disk, where only the encoded side is stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QQPair {
    pub question: String,
    pub query_raw: Option<String>,
    pub query_encoded: EncodedQuery,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateStat {
    pub id: usize,
    pub nl_template: String,
    pub bindings: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub cap_per_template: usize,
    pub templates: Vec<TemplateStat>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<QQPair>,
    pub provenance: Provenance,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<QQPair>) -> Self {
        Self { pairs, provenance: Provenance::default() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn questions(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.question.as_str())
    }

    pub fn queries(&self) -> impl Iterator<Item = &EncodedQuery> {
        self.pairs.iter().map(|p| &p.query_encoded)
    }
}
