//! Sparse low-rank CP decomposition of partially observed tensors.
//!
//! The model is `Z ≈ Σ_r a_r^(1) ∘ … ∘ a_r^(N)` fitted on the observed
//! entries under an elastic-net penalty per factor column:
//!
//! ```text
//! ½‖(Z − X) ⊛ Δ‖² + λ Σ_{n,r} [ α‖a_r^(n)‖₁ + ½(1 − α) a_r^(n)ᵀ T_n a_r^(n) ]
//! ```
//!
//! where `T_n` is a diagonal inverse covariance. [`solvers::bcd_solve`] runs
//! exact column-wise coordinate descent, [`path::solution_path`] sweeps λ
//! with warm starts to expose rank and sparsity, and [`priors`] generates
//! matching synthetic data.

// `!(x > 0.0)` is used on purpose so that NaN fails validation, and index
// loops over parallel arrays read better than zipped iterators here.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod io;
pub mod metrics;
pub mod path;
pub mod priors;
pub mod report;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use metrics::{evaluate, factor_score, observed_rel_err, rank_one_score, EvalReport};
pub use path::{
    count_true_zeros, extract_pattern, select_solution, solution_path, PathConfig, PathEntry, SparsityPattern,
};
pub use priors::{estimate_covariance_diags, generate_synthetic, PriorSpec, SyntheticInstance};
pub use solvers::{
    adamax_solve, bcd_solve, column_update, cp_als_solve, init_nvecs, init_random, sparse_constrained_solve,
    ElasticNetConfig, SolveReport, StochasticConfig,
};
pub use tensor::{
    cp_reconstruct, kron_columns, masked_residual, mode_fold, mode_unfold, normalize_factors, objective, DenseTensor,
    FactorSet, MaskedTensor,
};
