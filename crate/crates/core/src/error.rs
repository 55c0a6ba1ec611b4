use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {0:?}: every dimension must be at least 1")]
    ZeroDimension([usize; 4]),

    #[error("dimension product overflows: {0:?}")]
    DimensionOverflow([u64; 4]),

    #[error("data length {found} does not match dimensions (expected {expected})")]
    LengthMismatch { expected: usize, found: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid range: lo ({lo}) must be less than hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("{divisor_name}={divisor} does not divide {value} {value_name}{}", at_layer(.layer))]
    Divisibility {
        divisor_name: &'static str,
        divisor: usize,
        value_name: &'static str,
        value: usize,
        layer: Option<String>,
    },

    #[error("invalid architecture: {0}")]
    Arch(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn at_layer(layer: &Option<String>) -> String {
    match layer {
        Some(name) => format!(" at layer {name}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }

    /// Attaches a layer name to a divisibility error; other errors pass through.
    pub(crate) fn at(self, name: &str) -> Self {
        match self {
            Error::Divisibility {
                divisor_name,
                divisor,
                value_name,
                value,
                layer: None,
            } => Error::Divisibility {
                divisor_name,
                divisor,
                value_name,
                value,
                layer: Some(name.to_string()),
            },
            Error::Geometry(msg) => Error::Geometry(format!("{msg} at layer {name}")),
            other => other,
        }
    }
}
