//! Optimization procedures for the elastic-net CP objective
//!
//! `½‖(Z − X) ⊛ Δ‖_F² + λ Σ_r Σ_n [(1−α)/2 · aᵀ T_n a + α ‖a‖₁]`
//!
//! together with a plain CP-ALS baseline and the two initializers.

mod adamax;
mod als;
mod bcd;
mod column;
mod init;

pub use adamax::{adamax_solve, stochastic_column_target, StochasticConfig, TauDenominator};
pub use als::cp_als_solve;
pub use bcd::{bcd_solve, sparse_constrained_solve};
pub use column::{column_update, soft_threshold, ColumnUpdate};
pub use init::{init_nvecs, init_random};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-10;

/// Parameters of the regularized objective plus the stopping rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetConfig {
    pub lambda: f64,
    /// Fraction of the penalty carried by the ℓ1 term.
    pub alpha: f64,
    /// Per mode, the diagonal of the inverse prior covariance.
    pub inv_cov_diags: Vec<Vec<f64>>,
    pub max_iters: usize,
    /// Stop once the relative objective change over one sweep drops below this.
    pub tol: f64,
    /// Record the objective after every single column update.
    pub trace_columns: bool,
}

impl ElasticNetConfig {
    pub fn new(lambda: f64, alpha: f64, inv_cov_diags: Vec<Vec<f64>>) -> Result<Self> {
        let cfg = Self {
            lambda,
            alpha,
            inv_cov_diags,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            trace_columns: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Inverts covariance diagonals into the stored `T_n`.
    pub fn from_covariances(lambda: f64, alpha: f64, cov_diags: &[Vec<f64>]) -> Result<Self> {
        if cov_diags.iter().flatten().any(|&c| !(c > 0.0)) {
            return Err(Error::invalid("covariance diagonals must be positive"));
        }
        let inv = cov_diags.iter().map(|d| d.iter().map(|c| 1.0 / c).collect()).collect();
        Self::new(lambda, alpha, inv)
    }

    /// Identity covariance for every mode.
    pub fn identity(lambda: f64, alpha: f64, shape: &[usize]) -> Result<Self> {
        Self::new(lambda, alpha, shape.iter().map(|&i| vec![1.0; i]).collect())
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_column_trace(mut self, on: bool) -> Self {
        self.trace_columns = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid(format!("tol must be >= 0, got {}", self.tol)));
        }
        if self
            .inv_cov_diags
            .iter()
            .flatten()
            .any(|&t| !(t > 0.0) || !t.is_finite())
        {
            return Err(Error::invalid("inverse covariance entries must be positive and finite"));
        }
        Ok(())
    }

    pub(crate) fn check_against(&self, shape: &[usize]) -> Result<()> {
        let dims: Vec<usize> = self.inv_cov_diags.iter().map(Vec::len).collect();
        if dims != shape {
            return Err(Error::shape(format!(
                "inverse covariance lengths {dims:?} do not match tensor shape {shape:?}"
            )));
        }
        Ok(())
    }
}

/// Outcome of a solver run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    /// Completed outer sweeps.
    pub iterations: usize,
    pub final_objective: f64,
    /// Objective at the start followed by one value per completed sweep.
    pub objective_trace: Vec<f64>,
    /// Objective after each column update; only filled when requested.
    pub column_objectives: Vec<f64>,
    /// Observed-entry relative error per sweep (stochastic and ALS solvers).
    pub rel_err_trace: Vec<f64>,
    pub converged: bool,
}

pub(crate) fn relative_change(prev: f64, cur: f64) -> f64 {
    let scale = prev.abs().max(f64::MIN_POSITIVE);
    (prev - cur).abs() / scale
}
