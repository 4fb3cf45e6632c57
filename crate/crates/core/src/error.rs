use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user-facing input: arguments, files, configs.
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller broke an API precondition (masked action, terminal state, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("tour is not a permutation of 0..{n}: {detail}")]
    NotPermutation { n: usize, detail: String },

    #[error("route {route} exceeds capacity: load {load} > {capacity}")]
    CapacityExceeded { route: usize, load: u32, capacity: u32 },

    #[error("customer {0} is missing from the routes")]
    MissingCustomer(usize),

    #[error("customer {0} is visited more than once")]
    DuplicateCustomer(usize),

    #[error("malformed route delimiters: {0}")]
    MalformedRoutes(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence(_) => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}
