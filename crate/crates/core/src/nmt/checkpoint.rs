//! Self-contained model files and the inference entry points built on them.

use std::path::Path;

use serde_json::{json, Value};

use super::{beam_search, train::Example, Model, ModelConfig, NmtError};
use crate::autodiff::{read_params, write_params};
use crate::codec::{Codec, EncodedQuery, PrefixTable, ReplacementTable};
use crate::corpus::{tokenize_nl, ParallelCorpus, Vocabulary};
use crate::metrics::{bleu, exact_match, BleuParams, BleuReport, MatchReport, PerplexityReport};
use crate::Scalar;

/// A trained model with everything needed to translate: both vocabularies
/// and the codec tables that decode its output.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub model: Model<T>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub codec: Codec,
    /// Validation BLEU (percent) of the stored parameters.
    pub best_bleu: f64,
    pub epoch: usize,
}

fn missing(what: &str) -> NmtError {
    NmtError::Checkpoint(format!("missing or malformed `{what}`"))
}

fn str_list(v: &Value, key: &str) -> Result<Vec<String>, NmtError> {
    v.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| missing(key))?
        .iter()
        .map(|t| t.as_str().map(str::to_string).ok_or_else(|| missing(key)))
        .collect()
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: Model<T>, src_vocab: Vocabulary, tgt_vocab: Vocabulary, codec: Codec) -> Result<Self, NmtError> {
        if model.src_vocab != src_vocab.len() || model.tgt_vocab != tgt_vocab.len() {
            return Err(NmtError::Checkpoint(format!(
                "model expects vocabularies of {}/{} but got {}/{}",
                model.src_vocab,
                model.tgt_vocab,
                src_vocab.len(),
                tgt_vocab.len()
            )));
        }
        Ok(Self { model, src_vocab, tgt_vocab, codec, best_bleu: 0.0, epoch: 0 })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config: serde_json::Map<String, Value> =
            self.model.config.entries().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect();
        let meta = json!({
            "config": config,
            "src_vocab": self.src_vocab.tokens(),
            "tgt_vocab": self.tgt_vocab.tokens(),
            "prefixes": self.codec.prefixes().to_tsv(),
            "replacements": self.codec.table().to_tsv(),
            "best_bleu": self.best_bleu,
            "epoch": self.epoch,
        });
        write_params(&self.model.params, &meta)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NmtError> {
        let (params, meta) = read_params::<T>(bytes)?;
        let config = meta.get("config").and_then(Value::as_object).ok_or_else(|| missing("config"))?;
        let mut entries = Vec::with_capacity(config.len());
        for (k, v) in config {
            entries.push((k.as_str(), v.as_str().ok_or_else(|| missing(k))?));
        }
        let config = ModelConfig::from_entries(entries)?;
        let src_vocab = Vocabulary::from_tokens(str_list(&meta, "src_vocab")?)?;
        let tgt_vocab = Vocabulary::from_tokens(str_list(&meta, "tgt_vocab")?)?;
        let text = |k: &str| meta.get(k).and_then(Value::as_str).ok_or_else(|| missing(k));
        let codec = Codec::new(
            PrefixTable::parse_tsv(text("prefixes")?)?,
            ReplacementTable::with_override_tsv(text("replacements")?)?,
        )?;
        let fresh = Model::<T>::new(config.clone(), src_vocab.len(), tgt_vocab.len())?;
        if !fresh.params.same_layout(&params) {
            return Err(NmtError::Checkpoint("parameter shapes do not match the stored config".into()));
        }
        let model = Model { config, params, src_vocab: src_vocab.len(), tgt_vocab: tgt_vocab.len() };
        let mut ck = Self::new(model, src_vocab, tgt_vocab, codec)?;
        ck.best_bleu = meta.get("best_bleu").and_then(Value::as_f64).ok_or_else(|| missing("best_bleu"))?;
        ck.epoch = meta.get("epoch").and_then(Value::as_u64).ok_or_else(|| missing("epoch"))? as usize;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NmtError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, NmtError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn source_ids(&self, question: &str) -> Vec<usize> {
        self.src_vocab.encode(&tokenize_nl(question))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub encoded: EncodedQuery,
    /// Decoded query, absent when the token sequence does not decode.
    pub sparql: Option<String>,
    pub error: Option<String>,
    /// False when beam search hit `max_len` before `</s>`.
    pub finished: bool,
}

impl Translation {
    /// The decoded query, or the raw token sequence when decoding failed.
    pub fn text(&self) -> String {
        self.sparql.clone().unwrap_or_else(|| self.encoded.to_string())
    }
}

/// Tokenizes, beam-decodes with the configured width and decodes through
/// the codec. Decoding errors are reported in the result, not raised.
pub fn translate<T: Scalar>(ck: &Checkpoint<T>, question: &str) -> Result<Translation, NmtError> {
    let mut src = ck.source_ids(question);
    if src.is_empty() {
        src.push(crate::corpus::UNK);
    }
    let c = &ck.model.config;
    let hyp = beam_search(&ck.model, &src, c.beam_width, c.max_len)?;
    let encoded = EncodedQuery::new(ck.tgt_vocab.decode(&hyp.tokens).into_iter().map(str::to_string).collect());
    let (sparql, error) = match ck.codec.decode(&encoded) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(Translation { encoded, sparql, error, finished: hyp.finished })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: BleuReport,
    pub matches: MatchReport,
    pub perplexity: PerplexityReport,
    pub translations: Vec<Translation>,
}

impl EvalReport {
    /// `key<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let undecodable = self.translations.iter().filter(|t| t.sparql.is_none()).count();
        let rows = [
            ("bleu", format!("{:.4}", self.bleu.percent())),
            ("brevity_penalty", format!("{:.6}", self.bleu.bp)),
            ("accuracy", format!("{:.6}", self.matches.accuracy)),
            ("f1", format!("{:.6}", self.matches.f1_mean)),
            ("cross_entropy_bits", format!("{:.6}", self.perplexity.h)),
            ("perplexity", format!("{:.6}", self.perplexity.ppl)),
            ("examples", self.translations.len().to_string()),
            ("undecodable", undecodable.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
    }
}

/// Beam-decodes every question and scores the encoded outputs against the
/// encoded references. Perplexity is teacher-forced on the same pairs.
pub fn evaluate<T: Scalar>(ck: &Checkpoint<T>, test: &ParallelCorpus) -> Result<EvalReport, NmtError> {
    if test.is_empty() {
        return Err(NmtError::EmptyDataset("test"));
    }
    let mut translations = Vec::with_capacity(test.len());
    let (mut nll, mut count) = (0.0, 0usize);
    for p in &test.pairs {
        translations.push(translate(ck, &p.question)?);
        let ex = Example { src: ck.source_ids(&p.question), tgt: ck.tgt_vocab.encode(&p.query_encoded.tokens) };
        if !ex.src.is_empty() {
            let (l, n) = ck.model.nll(&ex.src, &ex.tgt)?;
            nll += l;
            count += n;
        }
    }
    let hyps: Vec<Vec<String>> = translations.iter().map(|t| t.encoded.tokens.clone()).collect();
    let refs: Vec<Vec<String>> = test.pairs.iter().map(|p| p.query_encoded.tokens.clone()).collect();
    let bleu = bleu(&hyps, &refs, &BleuParams::default())?;
    let matches = exact_match(&hyps, &refs)?;
    let perplexity = PerplexityReport::from_nats(if count == 0 { f64::NAN } else { nll / count as f64 });
    Ok(EvalReport { bleu, matches, perplexity, translations })
}
