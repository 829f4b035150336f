//! Error classification behind the process exit codes.
//!
//! 1: bad configuration (flags, config file, invalid combinations).
//! 2: bad or missing data (datasets, checkpoints, impossible requests).
//! 3: numerical abort (a non-finite value stopped training).
//! 4: a verify property failed.

use anyhow::Error;
use gmi_core::diffmath::DiffError;
use gmi_core::eval::EvalError;
use gmi_core::graph::GraphError;
use gmi_core::objective::ObjectiveError;
use gmi_core::trainer::TrainError;

#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Data(Error),
    Numeric(Error),
    Property(Error),
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn config(err: impl Into<Error>) -> Failure {
        Failure::Config(err.into())
    }

    pub fn data(err: impl Into<Error>) -> Failure {
        Failure::Data(err.into())
    }

    pub fn numeric(err: impl Into<Error>) -> Failure {
        Failure::Numeric(err.into())
    }

    pub fn property(err: impl Into<Error>) -> Failure {
        Failure::Property(err.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Property(_) => 4,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Failure::Config(e) | Failure::Data(e) | Failure::Numeric(e) | Failure::Property(e) => {
                e
            }
        }
    }

    pub fn context(self, msg: &'static str) -> Failure {
        match self {
            Failure::Config(e) => Failure::Config(e.context(msg)),
            Failure::Data(e) => Failure::Data(e.context(msg)),
            Failure::Numeric(e) => Failure::Numeric(e.context(msg)),
            Failure::Property(e) => Failure::Property(e.context(msg)),
        }
    }
}

pub fn from_graph(err: GraphError) -> Failure {
    match err {
        GraphError::InvalidRatio { .. } => Failure::config(err),
        _ => Failure::data(err),
    }
}

pub fn from_diff(err: DiffError) -> Failure {
    match err {
        DiffError::NonFinite { .. } => Failure::numeric(err),
        _ => Failure::data(err),
    }
}

pub fn from_objective(err: ObjectiveError) -> Failure {
    match err {
        ObjectiveError::Config { .. } => Failure::config(err),
        ObjectiveError::Diff(inner) => from_diff(inner),
        _ => Failure::data(err),
    }
}

pub fn from_train(err: TrainError) -> Failure {
    match err {
        TrainError::Config { .. } => Failure::config(err),
        TrainError::NonFinite { .. } => Failure::numeric(err),
        TrainError::Objective(inner) => from_objective(inner),
        TrainError::Graph(inner) => from_graph(inner),
        TrainError::Diff(inner) => from_diff(inner),
        _ => Failure::data(err),
    }
}

pub fn from_eval(err: EvalError) -> Failure {
    match err {
        EvalError::NoRuns => Failure::config(err),
        _ => Failure::data(err),
    }
}
