use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("data error: non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("sampling error: position {position:?} is outside the grid")]
    Sampling { position: [f64; 3] },
    #[error("camera error: {0}")]
    Camera(String),
    #[error("selection error: best achievable agreement is {best_fraction}")]
    Selection { best_fraction: f64 },
    #[error("consistency error: maximum {maximum} of member {member} has no label")]
    Consistency { member: usize, maximum: usize },
    #[error("transfer function error: {0}")]
    TransferFunction(String),
}
