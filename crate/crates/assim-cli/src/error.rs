use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    /// `key` is the dotted path into the config, e.g. `params.N`.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {message}")]
    Data { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Library {
        context: String,
        #[source]
        source: assim::Error,
    },
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// 2 for numerical failures inside the estimators, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Library { source, .. } if source.is_numerical() => 2,
            _ => 1,
        }
    }
}

/// Attaches method context to library errors.
pub trait Context<T> {
    fn context(self, what: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for assim::Result<T> {
    fn context(self, what: &str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Library {
            context: what.to_string(),
            source,
        })
    }
}
