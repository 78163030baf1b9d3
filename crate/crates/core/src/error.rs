// Copyright 2026 The disorder-ensemble Authors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported disorder variant for {operation}: {variant}")]
    UnsupportedVariant {
        operation: &'static str,
        variant: &'static str,
    },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("eigendecomposition failed for {n}x{n} matrix (frobenius norm {norm:.3e}, max asymmetry {asymmetry:.3e})")]
    Eigendecomposition { n: usize, norm: f64, asymmetry: f64 },

    #[error("invariant violated at t = {time}: {what} = {magnitude:.3e} (tolerance {tolerance:.1e})")]
    InvariantViolation {
        time: f64,
        what: &'static str,
        magnitude: f64,
        tolerance: f64,
    },

    #[error("step-halving check failed: max element change {delta:.3e} exceeds {tolerance:.1e}")]
    Convergence { delta: f64, tolerance: f64 },

    #[error("grid resolution: {0}")]
    Resolution(String),

    #[error("undefined visibility: {0}")]
    UndefinedVisibility(String),

    #[error("degenerate comparison: every element is below the floor {floor:.3e}")]
    DegenerateComparison { floor: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from the configuration rather than the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParameter(_) | Error::Json(_) | Error::UnsupportedVariant { .. }
        )
    }
}
