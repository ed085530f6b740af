use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column counts differ: {left} vs {right}")]
    ColumnMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid unfolding mode {0}, expected 1, 2 or 3")]
    InvalidMode(usize),
    #[error("CP factors have different column counts {0:?}")]
    RankMismatch([usize; 3]),
    #[error("matrix is identically zero")]
    ZeroMatrix,
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("SVD failed to converge")]
    SvdNoConvergence,
    #[error("invalid dimensions: {0}")]
    Dim(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("reference cascade has zero energy")]
    ZeroTruth,
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
