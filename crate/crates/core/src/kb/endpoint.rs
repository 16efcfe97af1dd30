use std::path::PathBuf;
use std::time::Duration;

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Binding, KbError, KnowledgeBase, RdfTerm};
use crate::codec::{Codec, Lexeme, PrefixTable, ReplacementTable};

/// Connection settings for a SPARQL 1.1 Protocol endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub page_size: usize,
    /// First retry delay; doubles on each further attempt.
    pub backoff: Duration,
    /// Responses are cached here, keyed by URL and query text.
    pub cache_dir: Option<PathBuf>,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Result<Self, KbError> {
        let cfg = Self {
            url: url.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            page_size: 1000,
            backoff: Duration::from_secs(1),
            cache_dir: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), KbError> {
        let lower = self.url.to_ascii_lowercase();
        let rest = lower.strip_prefix("http://").or_else(|| lower.strip_prefix("https://"));
        if !rest.is_some_and(|r| !r.is_empty()) {
            return Err(KbError::Config(format!("`{}` is not an absolute HTTP(S) URL", self.url)));
        }
        if self.timeout.is_zero() {
            return Err(KbError::Config("timeout must be positive".into()));
        }
        if self.page_size == 0 {
            return Err(KbError::Config("page size must be positive".into()));
        }
        Ok(())
    }
}

/// Blocking endpoint client. One request is in flight per handle.
#[derive(Debug)]
pub struct Endpoint {
    cfg: EndpointConfig,
    client: reqwest::blocking::Client,
    codec: Codec,
}

fn term_from_json(v: &Value) -> Result<RdfTerm, KbError> {
    let bad = || KbError::MalformedResponse(format!("bad RDF term {v}"));
    let kind = v.get("type").and_then(Value::as_str).ok_or_else(bad)?;
    let value = v.get("value").and_then(Value::as_str).ok_or_else(bad)?;
    Ok(match kind {
        "uri" => RdfTerm::iri(value),
        "bnode" => RdfTerm::blank(value),
        "literal" | "typed-literal" => {
            if let Some(lang) = v.get("xml:lang").and_then(Value::as_str) {
                RdfTerm::lang_literal(value, lang)
            } else if let Some(dt) = v.get("datatype").and_then(Value::as_str) {
                RdfTerm::typed_literal(value, dt)
            } else {
                RdfTerm::literal(value)
            }
        }
        _ => return Err(bad()),
    })
}

/// Parses the `application/sparql-results+json` serialization of a SELECT
/// result.
pub fn parse_results_json(body: &str) -> Result<Vec<Binding>, KbError> {
    let doc: Value = serde_json::from_str(body).map_err(|e| KbError::MalformedResponse(e.to_string()))?;
    let rows = doc
        .get("results")
        .and_then(|r| r.get("bindings"))
        .and_then(Value::as_array)
        .ok_or_else(|| KbError::MalformedResponse("missing results.bindings".into()))?;
    rows.iter()
        .map(|row| {
            let obj = row.as_object().ok_or_else(|| KbError::MalformedResponse("binding is not an object".into()))?;
            obj.iter().map(|(k, v)| Ok((k.clone(), term_from_json(v)?))).collect()
        })
        .collect()
}

impl Endpoint {
    pub fn new(cfg: EndpointConfig) -> Result<Self, KbError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| KbError::Network(e.to_string()))?;
        Ok(Self { cfg, client, codec: Codec::dbpedia() })
    }

    /// Prefixes declared in front of queries that use them without a
    /// `PREFIX` line.
    pub fn with_prefixes(mut self, prefixes: PrefixTable) -> Result<Self, KbError> {
        self.codec = Codec::new(prefixes, ReplacementTable::default())?;
        Ok(self)
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn cache_path(&self, query: &str) -> Option<PathBuf> {
        let dir = self.cfg.cache_dir.as_ref()?;
        let mut h = Sha256::new();
        h.update(self.cfg.url.as_bytes());
        h.update([0u8]);
        h.update(query.as_bytes());
        Some(dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    fn fetch(&self, query: &str) -> Result<String, KbError> {
        let cached = self.cache_path(query);
        if let Some(body) = cached.as_ref().and_then(|p| std::fs::read_to_string(p).ok()) {
            return Ok(body);
        }
        let mut last = KbError::Network("no attempt made".into());
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * 2u32.pow(attempt - 1));
            }
            let resp = self
                .client
                .get(&self.cfg.url)
                .query(&[("query", query)])
                .header("Accept", "application/sparql-results+json")
                .send();
            match resp {
                Ok(r) if r.status().is_success() => {
                    let body = r.text().map_err(|e| KbError::Network(e.to_string()))?;
                    parse_results_json(&body)?;
                    if let Some(path) = &cached {
                        if let Some(dir) = path.parent() {
                            std::fs::create_dir_all(dir)?;
                        }
                        std::fs::write(path, &body)?;
                    }
                    return Ok(body);
                }
                Ok(r) if r.status().is_server_error() || r.status().as_u16() == 429 => {
                    log::warn!("endpoint returned {} (attempt {})", r.status(), attempt + 1);
                    last = KbError::Http(r.status().as_u16());
                }
                Ok(r) => return Err(KbError::Http(r.status().as_u16())),
                Err(e) => {
                    log::warn!("endpoint request failed (attempt {}): {e}", attempt + 1);
                    last = KbError::Network(e.to_string());
                }
            }
        }
        Err(last)
    }

    /// Runs a SELECT query, paging with LIMIT/OFFSET unless the query has its
    /// own LIMIT or OFFSET.
    pub fn query(&self, query: &str) -> Result<Vec<Binding>, KbError> {
        let query = self.codec.with_prologue(query.trim());
        let has_limit = self.codec.lex(&query).is_ok_and(|ls| {
            ls.iter().any(|l| matches!(l, Lexeme::Symbol(s) if s == "LIMIT" || s == "OFFSET"))
        });
        if has_limit {
            return parse_results_json(&self.fetch(&query)?);
        }
        let mut out = Vec::new();
        let mut offset = 0;
        loop {
            let paged = format!("{query} LIMIT {} OFFSET {offset}", self.cfg.page_size);
            let rows = parse_results_json(&self.fetch(&paged)?)?;
            let n = rows.len();
            out.extend(rows);
            if n < self.cfg.page_size {
                break;
            }
            offset += n;
        }
        Ok(out)
    }
}

impl KnowledgeBase for Endpoint {
    fn select(&self, query: &str) -> Result<Vec<Binding>, KbError> {
        self.query(query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_two_result_parses() {
        let body = r#"{"head":{"vars":["uri","label"]},"results":{"bindings":[
            {"uri":{"type":"uri","value":"http://dbpedia.org/resource/Carew_Cross"},
             "label":{"type":"literal","xml:lang":"en","value":"Carew Cross"}}]}}"#;
        let rows = parse_results_json(body).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].get("uri").unwrap(), &RdfTerm::iri("http://dbpedia.org/resource/Carew_Cross"));
        assert_eq!(rows[0].get("label").unwrap(), &RdfTerm::lang_literal("Carew Cross", "en"));
    }

    #[test]
    fn empty_and_malformed() {
        assert!(parse_results_json(r#"{"head":{"vars":[]},"results":{"bindings":[]}}"#).unwrap().is_empty());
        assert!(matches!(parse_results_json("<html>"), Err(KbError::MalformedResponse(_))));
        assert!(matches!(parse_results_json(r#"{"boolean":true}"#), Err(KbError::MalformedResponse(_))));
    }

    #[test]
    fn config_validation() {
        assert!(EndpointConfig::new("https://dbpedia.org/sparql").is_ok());
        assert!(EndpointConfig::new("ftp://x").is_err());
        assert!(EndpointConfig::new("http://").is_err());
    }
}
