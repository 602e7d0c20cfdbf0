use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value produced at node {node} ({op})")]
    Numeric { node: usize, op: &'static str },
    #[error("format error: {0}")]
    Format(String),
    #[error("representation collapsed: no latent dimension has std >= {0}")]
    Collapsed(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
