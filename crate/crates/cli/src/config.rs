//! The flat run configuration: every model and split hyperparameter plus
//! generation, vocabulary and training settings, merged from built-in
//! defaults, an optional `key = value` file and command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use nl2sparql::corpus::{GenerateOptions, SplitSpec};
use nl2sparql::kb::EndpointConfig;
use nl2sparql::nmt::{ModelConfig, TrainOptions};

use crate::error::CliError;

/// Name of the resolved-config echo written into every output directory.
pub const RUN_CFG: &str = "run.cfg";

/// Environment variable that overrides `cache_dir`.
pub const CACHE_ENV: &str = "NL2SPARQL_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitModeKey {
    Ratio,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Preset the model section started from, if any.
    pub preset: Option<String>,
    pub model: ModelConfig,
    pub split_mode: SplitModeKey,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub split_val_count: usize,
    pub split_test_count: usize,
    pub split_seed: u64,
    pub cap: usize,
    pub gen_seed: u64,
    pub languages: Vec<String>,
    pub endpoint_timeout: f64,
    pub endpoint_retries: u32,
    pub page_size: usize,
    pub cache_dir: Option<PathBuf>,
    pub prefixes: Option<PathBuf>,
    pub replacements: Option<PathBuf>,
    pub vocab_min_count: usize,
    pub vocab_max_size: Option<usize>,
    /// Seconds; zero means unlimited.
    pub time_limit: f64,
    pub max_validation: Option<usize>,
    /// Validation BLEU (percent) that ends training early.
    pub target_bleu: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            model: ModelConfig::default(),
            split_mode: SplitModeKey::Ratio,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            split_val_count: 100,
            split_test_count: 100,
            split_seed: 0,
            cap: 600,
            gen_seed: 0,
            languages: vec!["en".into()],
            endpoint_timeout: 60.0,
            endpoint_retries: 3,
            page_size: 1000,
            cache_dir: None,
            prefixes: None,
            replacements: None,
            vocab_min_count: 1,
            vocab_max_size: None,
            time_limit: 0.0,
            max_validation: None,
            target_bleu: None,
        }
    }
}

/// `(key, value)` pairs from one configuration layer, in source order.
pub type Layer = Vec<(String, String)>;

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_layer(text: &str) -> Result<Layer, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("config line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::input(format!("config line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_layer(path: &Path) -> Result<Layer, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    parse_layer(&text).map_err(|e| e.context(path.display()))
}

/// `key=value` from a command-line `--set`.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn opt_text(v: &Option<impl ToString>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

fn opt_value(v: &str) -> Option<&str> {
    (!v.is_empty() && v != "none").then_some(v)
}

fn num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N, CliError> {
    v.parse().map_err(|_| CliError::input(format!("{key}: cannot parse `{v}`")))
}

impl RunConfig {
    /// Merges layers in increasing precedence. The last `preset` seen in any
    /// layer selects the starting model config; every other key is then
    /// applied in order, so later layers win.
    pub fn resolve(layers: &[Layer]) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let preset = layers.iter().flatten().filter(|(k, _)| k == "preset").filter_map(|(_, v)| opt_value(v)).last();
        if let Some(p) = preset {
            cfg.model = ModelConfig::preset(p)?;
            cfg.preset = Some(p.to_string());
        }
        for (k, v) in layers.iter().flatten() {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        match key {
            "split_mode" => {
                self.split_mode = match value {
                    "ratio" => SplitModeKey::Ratio,
                    "fixed" => SplitModeKey::Fixed,
                    _ => return Err(CliError::input(format!("split_mode: expected ratio or fixed, got `{value}`"))),
                }
            }
            "split_train" => self.split_train = num(key, value)?,
            "split_val" => self.split_val = num(key, value)?,
            "split_test" => self.split_test = num(key, value)?,
            "split_val_count" => self.split_val_count = num(key, value)?,
            "split_test_count" => self.split_test_count = num(key, value)?,
            "split_seed" => self.split_seed = num(key, value)?,
            "cap" => self.cap = num(key, value)?,
            "gen_seed" => self.gen_seed = num(key, value)?,
            "languages" => {
                self.languages = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
            }
            "endpoint_timeout" => self.endpoint_timeout = num(key, value)?,
            "endpoint_retries" => self.endpoint_retries = num(key, value)?,
            "page_size" => self.page_size = num(key, value)?,
            "cache_dir" => self.cache_dir = opt_value(value).map(PathBuf::from),
            "prefixes" => self.prefixes = opt_value(value).map(PathBuf::from),
            "replacements" => self.replacements = opt_value(value).map(PathBuf::from),
            "vocab_min_count" => self.vocab_min_count = num(key, value)?,
            "vocab_max_size" => self.vocab_max_size = opt_value(value).map(|v| num(key, v)).transpose()?,
            "time_limit" => self.time_limit = num(key, value)?,
            "max_validation" => self.max_validation = opt_value(value).map(|v| num(key, v)).transpose()?,
            "target_bleu" => self.target_bleu = opt_value(value).map(|v| num(key, v)).transpose()?,
            _ => return Err(CliError::input(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.split_spec()?;
        if !(self.endpoint_timeout > 0.0 && self.endpoint_timeout.is_finite()) {
            return Err(CliError::input("endpoint_timeout must be positive"));
        }
        if !(self.time_limit >= 0.0 && self.time_limit.is_finite()) {
            return Err(CliError::input("time_limit must be a non-negative number of seconds"));
        }
        if self.vocab_min_count == 0 || self.page_size == 0 || self.cap == 0 {
            return Err(CliError::input("vocab_min_count, page_size and cap must be positive"));
        }
        Ok(())
    }

    /// Every key in a fixed order; `resolve` of this list reproduces `self`.
    pub fn entries(&self) -> Vec<(String, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".into(), |p| p.display().to_string());
        let mut out: Vec<(String, String)> = vec![("preset".into(), opt_text(&self.preset))];
        out.extend(self.model.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
        let own = [
            ("split_mode", if self.split_mode == SplitModeKey::Ratio { "ratio" } else { "fixed" }.to_string()),
            ("split_train", self.split_train.to_string()),
            ("split_val", self.split_val.to_string()),
            ("split_test", self.split_test.to_string()),
            ("split_val_count", self.split_val_count.to_string()),
            ("split_test_count", self.split_test_count.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("cap", self.cap.to_string()),
            ("gen_seed", self.gen_seed.to_string()),
            ("languages", self.languages.join(",")),
            ("endpoint_timeout", self.endpoint_timeout.to_string()),
            ("endpoint_retries", self.endpoint_retries.to_string()),
            ("page_size", self.page_size.to_string()),
            ("cache_dir", path(&self.cache_dir)),
            ("prefixes", path(&self.prefixes)),
            ("replacements", path(&self.replacements)),
            ("vocab_min_count", self.vocab_min_count.to_string()),
            ("vocab_max_size", opt_text(&self.vocab_max_size)),
            ("time_limit", self.time_limit.to_string()),
            ("max_validation", opt_text(&self.max_validation)),
            ("target_bleu", opt_text(&self.target_bleu)),
        ];
        out.extend(own.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    pub fn keys() -> Vec<String> {
        Self::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Writes `run.cfg` into `dir`, creating it.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RUN_CFG), self.to_text())?;
        Ok(())
    }

    pub fn split_spec(&self) -> Result<SplitSpec, CliError> {
        Ok(match self.split_mode {
            SplitModeKey::Ratio => SplitSpec::ratio(self.split_train, self.split_val, self.split_test, self.split_seed)?,
            SplitModeKey::Fixed => SplitSpec::fixed(self.split_val_count, self.split_test_count, self.split_seed),
        })
    }

    pub fn generate_options(&self) -> GenerateOptions {
        GenerateOptions { cap_per_template: self.cap, seed: self.gen_seed, languages: self.languages.clone() }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            time_limit: (self.time_limit > 0.0).then(|| Duration::from_secs_f64(self.time_limit)),
            max_validation: self.max_validation,
            target_bleu: self.target_bleu,
        }
    }

    /// `NL2SPARQL_CACHE` wins over `cache_dir`.
    pub fn effective_cache_dir(&self) -> Option<PathBuf> {
        match std::env::var_os(CACHE_ENV) {
            Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
            _ => self.cache_dir.clone(),
        }
    }

    pub fn endpoint_config(&self, url: &str) -> Result<EndpointConfig, CliError> {
        let cfg = EndpointConfig {
            timeout: Duration::from_secs_f64(self.endpoint_timeout),
            max_retries: self.endpoint_retries,
            page_size: self.page_size,
            cache_dir: self.effective_cache_dir(),
            ..EndpointConfig::new(url)?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
