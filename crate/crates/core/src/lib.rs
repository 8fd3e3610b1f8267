//! Exact Shapley values for finite cooperative games, the sampling and
//! paired-sampling KernelSHAP and PermutationSHAP estimators, and their
//! asymptotic covariance matrices.

pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod game;
pub mod kernel;
pub mod linalg;
pub mod permutation;
pub mod presets;
pub mod seed;

pub use error::{Result, ShapError};
pub use exact::{
    kernel_weights, shapley_all_permutations, shapley_kernel_exact, shapley_subset, KernelWeights,
    ShapleyMethod, ShapleyVector, ValueTable,
};
pub use game::{
    Coalition, Game, GameEvaluator, Permutation, TableGame, Term, TermKind, ValueFunctionSpec,
};
