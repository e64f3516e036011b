use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("prediction shape {pred:?} does not match ground truth shape {gt:?}")]
    ShapeMismatch {
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("cannot evaluate an empty map")]
    Empty,
    #[error("prediction value {0} lies outside [0, 1]")]
    OutOfRange(f64),
}
