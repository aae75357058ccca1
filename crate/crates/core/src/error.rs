use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("building {building}: invalid {field}: {message}")]
    Validation {
        building: String,
        field: String,
        message: String,
    },
    #[error("duplicate building id '{0}'")]
    DuplicateId(String),
    #[error("unknown technology '{0}'")]
    UnknownTech(String),
    #[error("unknown carrier '{0}'")]
    UnknownCarrier(String),
    #[error("year {year} outside scenario range {first}..={last}")]
    YearOutOfRange { year: i32, first: i32, last: i32 },
    #[error("variant {variant} is not admissible for building {building}")]
    InadmissibleVariant { building: String, variant: u8 },
    #[error("building {building} has no {vector} profile")]
    MissingProfile { building: String, vector: String },
    #[error("building {building}: {message}")]
    Infeasible { building: String, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] milp::SolveError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn validation(building: &str, field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            building: building.to_string(),
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// True for errors caused by unreadable files rather than bad content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
