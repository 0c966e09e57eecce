use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("validation failed for {entity}: {message}")]
    Validation { entity: String, message: String },

    #[error("no route from {origin} to {destination}")]
    NoPath { origin: String, destination: String },

    #[error("distance must be positive, got {0} ft")]
    Domain(f64),

    #[error("NPD fit needs at least 3 distinct distances, got {0}")]
    RankDeficient(usize),

    #[error("unknown noise zone `{0}`")]
    UnknownZone(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite loss during update: {0}")]
    NonFinite(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(entity: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            entity: entity.into(),
            message: message.into(),
        }
    }

    pub fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than a failure at runtime.
    ///
    /// A missing file counts as bad input.
    pub fn is_validation(&self) -> bool {
        if let Error::Io { source, .. } = self {
            return source.kind() == std::io::ErrorKind::NotFound;
        }
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::NoPath { .. }
                | Error::Domain(_)
                | Error::RankDeficient(_)
                | Error::UnknownZone(_)
                | Error::ConfigMismatch(_)
        )
    }
}
