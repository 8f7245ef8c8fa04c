use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("image must be square, got {height}x{width}")]
    NotSquare { height: usize, width: usize },

    #[error("degree {degree} fit needs at least {} rows, got {rows}", .degree + 1)]
    Underdetermined { rows: usize, degree: usize },

    #[error("unsupported trajectory degree {0} (expected 2 or 3)")]
    Degree(usize),

    #[error("clean image is {found}x{found}, need at least {required}x{required}")]
    ImageTooSmall { required: usize, found: usize },

    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(String),

    #[error(
        "non-finite loss at epoch {epoch}, step {step}; parameters left at the last good step"
    )]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("backward pass called without a cached forward geometry")]
    MissingCache,

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            found,
        }
    }
}
