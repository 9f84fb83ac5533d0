use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] lightmamba_core::Error),

    #[error(transparent)]
    Sim(#[from] lightmamba_sim::SimError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("corpus {path} line {line}: {reason}")]
    Corpus {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("corpus {0} contains no tokens")]
    EmptyCorpus(PathBuf),

    #[error("invalid input `{what}`: {reason}")]
    Input { what: String, reason: String },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Model(_) => "model",
            CliError::Sim(_) => "sim",
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json",
            CliError::Corpus { .. } | CliError::EmptyCorpus(_) => "corpus",
            CliError::Input { .. } => "input",
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: String,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper {
            error: Body {
                kind: self.kind(),
                message: self.to_string(),
            },
        })
        .expect("error serializes")
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub(crate) fn input_err(what: &str, reason: impl Into<String>) -> CliError {
    CliError::Input {
        what: what.to_string(),
        reason: reason.into(),
    }
}
