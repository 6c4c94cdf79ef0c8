use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice needs at least 2 sites, got {0}")]
    TooFewSites(usize),
    #[error("grid cell ({row}, {col}) is used by both site {first} and site {second}")]
    DuplicateCell {
        row: i64,
        col: i64,
        first: u32,
        second: u32,
    },
    #[error("site ids must be contiguous 1..{expected}, found {found}")]
    NonContiguousSites { expected: usize, found: u32 },
    #[error("site {0} has no queen neighbors")]
    IsolatedSite(u32),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("design matrix is rank deficient; collinear columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },
    #[error("reservoir for site {0} is empty")]
    EmptyReservoir(u32),
    #[error("problem size I*T = {size} exceeds the single-stage guard {limit}; pass force to override")]
    SizeGuard { size: usize, limit: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ingest: {0}")]
    Ingest(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable code, used by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::TooFewSites(_) => "E_TOO_FEW_SITES",
            Error::DuplicateCell { .. } => "E_DUPLICATE_CELL",
            Error::NonContiguousSites { .. } => "E_SITE_IDS",
            Error::IsolatedSite(_) => "E_ISOLATED_SITE",
            Error::InvalidArgument(_) => "E_INVALID_ARGUMENT",
            Error::RankDeficient { .. } => "E_RANK_DEFICIENT",
            Error::EmptyReservoir(_) => "E_EMPTY_RESERVOIR",
            Error::SizeGuard { .. } => "E_SIZE_GUARD",
            Error::DimensionMismatch(_) => "E_DIMENSION",
            Error::Ingest(_) => "E_INGEST",
            Error::Format(_) => "E_FORMAT",
            Error::NotPositiveDefinite(_) => "E_NOT_PD",
            Error::Io(_) => "E_IO",
            Error::Csv(_) => "E_CSV",
            Error::Json(_) => "E_JSON",
            Error::Config(_) => "E_CONFIG",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
