//! Dense and sparse matrix math with reverse-mode differentiation.
//!
//! The model code builds a fresh [`Tape`] per loss evaluation, records forward
//! ops on it, and runs one backward sweep for gradients. Everything is f64 and
//! single-threaded with fixed accumulation order, so repeated runs produce
//! bitwise-identical numbers.

mod gradcheck;
mod matrix;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, WorstCoordinate};
pub use matrix::Matrix;
pub use sparse::CsrMatrix;
pub use tape::{Gradients, Tape, VarId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("dimension mismatch in {op}: left is {lhs:?}, right is {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("invalid shape in {op}: {detail}")]
    BadShape { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("log of non-positive value {value}")]
    LogDomain { value: f64 },
    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("pair {pair:?} out of bounds: left has {lhs_rows} rows, right has {rhs_rows}")]
    PairOutOfBounds {
        pair: (u32, u32),
        lhs_rows: usize,
        rhs_rows: usize,
    },
}

/// Logistic sigmoid, overflow-safe on the whole f64 range.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) computed as max(x, 0) + log(1 + e^{-|x|}) so large inputs
/// cannot overflow.
pub fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_overflow_safe() {
        assert!((stable_softplus(50.0) - 50.0).abs() < 1e-9);
        assert!((stable_softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(stable_softplus(-745.0) >= 0.0);
        assert!(stable_softplus(1e9).is_finite());
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        assert_eq!(stable_sigmoid(0.0), 0.5);
        assert!((stable_sigmoid(4.0) - 0.9820137900379085).abs() < 1e-12);
        assert!(stable_sigmoid(800.0) <= 1.0);
        assert!(stable_sigmoid(-800.0) >= 0.0);
        assert!(stable_sigmoid(f64::MIN).is_finite());
    }
}
