use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("node {0} is wired and cannot act as a federated client")]
    NotAClient(usize),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("attack schedule error: {0}")]
    Schedule(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse failure classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Precondition,
    Numeric,
    Other,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Format(_) => ErrorClass::Config,
            Error::Precondition(_)
            | Error::NotAClient(_)
            | Error::UnknownNode(_)
            | Error::Schedule(_)
            | Error::Aggregation(_) => ErrorClass::Precondition,
            Error::NonFinite(_) | Error::Domain(_) | Error::Shape(_) => ErrorClass::Numeric,
            Error::Io(_) => ErrorClass::Other,
        }
    }
}
