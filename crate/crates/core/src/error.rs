use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every admissible kernel weight in the row underflowed to zero.
    #[error("degenerate smoother row {row}: all admissible kernel weights are zero (bandwidth too small?)")]
    DegenerateRow { row: usize },

    #[error("no valid bandwidth: every grid point produced a degenerate smoother")]
    NoValidBandwidth,

    #[error("ill-conditioned problem: {0}")]
    Conditioning(String),

    #[error("no selectable model: every candidate score is infinite")]
    NoSelectableModel,

    #[error("every candidate fit failed; first failure: {0}")]
    AllFitsFailed(String),

    #[error("degenerate screen: every regularized fit kept only the anchor covariate")]
    DegenerateScreen,

    #[error("data error at line {line}, column {column}: {message}")]
    Data {
        line: u64,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
