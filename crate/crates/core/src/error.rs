use std::fmt;

use thiserror::Error;

/// Shape list rendered as `[2, 3] x [4, 5]` in error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shapes(pub Vec<Vec<usize>>);

impl fmt::Display for Shapes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, s) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(" x ")?;
            }
            write!(f, "{:?}", s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {shapes}")]
    Shape { op: &'static str, shapes: Shapes },

    #[error("numeric instability in {op} (node {node}): non-finite output")]
    Numeric { op: &'static str, node: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("vocabulary error: token id {id} outside vocabulary of size {size}")]
    Vocab { id: usize, size: usize },

    #[error("degenerate sentence: {0}")]
    Degenerate(String),

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(op: &'static str, shapes: &[&[usize]]) -> Self {
        Error::Shape {
            op,
            shapes: Shapes(shapes.iter().map(|s| s.to_vec()).collect()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
