use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis {axis}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} describes {expected} elements but {actual} were supplied")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("{op}: kernel extent {kernel} must be odd")]
    EvenKernel { op: &'static str, kernel: usize },
    #[error("batch_norm: channel {channel} has no elements")]
    DegenerateBatch { channel: usize },
    #[error("batch_norm: eps must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("tensor is not part of a differentiable graph")]
    NoGraph,
    #[error("pixel index {index} out of range 1..={n}")]
    InvalidPixel { index: usize, n: usize },
    #[error("{what} = {value} outside [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("ssim window {window} exceeds image extent {height}x{width}")]
    WindowTooLarge {
        window: usize,
        height: usize,
        width: usize,
    },
    #[error("unknown fusion model `{0}`")]
    UnknownModel(String),
    #[error("model {0} has no trainable parameters")]
    NoTrainableParameters(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("weighted-average gradient undefined at pixel {index}: x1 + x2 = 0")]
    OracleUndefined { index: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("image: {0}")]
    Image(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("operation cancelled")]
    Cancelled,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_range(what: &'static str, value: f64, min: f64, max: f64) -> Result<()> {
    if value.is_finite() && value >= min && value <= max {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what,
            value,
            min,
            max,
        })
    }
}
