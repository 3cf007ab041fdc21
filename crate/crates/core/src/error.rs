use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("layout error: expected {expected:?} operand, found {found:?}")]
    Layout {
        expected: crate::features::Layout,
        found: crate::features::Layout,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("dimension error in layer {layer}: {message}")]
    Dimension { layer: usize, message: String },
    #[error("lowering error: {0}")]
    Lowering(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("oracle instance too large: {items} items on {banks} banks (limit 12 items, 4 banks)")]
    OracleSize { items: usize, banks: usize },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
