use std::fmt;

use nl2sparql::autodiff::AutodiffError;
use nl2sparql::codec::CodecError;
use nl2sparql::corpus::CorpusError;
use nl2sparql::kb::KbError;
use nl2sparql::nmt::NmtError;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_EXTERNAL: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }

    pub fn external(message: impl Into<String>) -> Self {
        Self { code: EXIT_EXTERNAL, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERIC, message: message.into() }
    }

    /// Prepends `what: ` to the message.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        match e {
            KbError::Network(_) | KbError::Http(_) | KbError::MalformedResponse(_) => Self::external(e.to_string()),
            _ => Self::input(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Kb(k) => k.into(),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<NmtError> for CliError {
    fn from(e: NmtError) -> Self {
        match e {
            NmtError::Diverged { .. } => Self::numeric(e.to_string()),
            NmtError::Corpus(c) => c.into(),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}
