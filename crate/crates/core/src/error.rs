use thiserror::Error;

use crate::dso::DispatchError;
use crate::market::MarketError;
use crate::netmodel::{CaseError, ModelError};
use crate::prosumer::ResponseError;
use crate::scenarios::ScenarioError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Response(#[from] ResponseError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Name of the module that raised the error, used in CLI diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Case(_) => "netmodel",
            Error::Model(_) => "netmodel",
            Error::Dispatch(_) => "dso",
            Error::Response(_) => "prosumer",
            Error::Market(_) => "market",
            Error::Scenario(_) => "scenarios",
            Error::Io { .. } => "io",
        }
    }

    /// Short machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Case(e) => e.kind(),
            Error::Model(e) => e.kind(),
            Error::Dispatch(e) => e.kind(),
            Error::Response(e) => e.kind(),
            Error::Market(e) => e.kind(),
            Error::Scenario(e) => e.kind(),
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
