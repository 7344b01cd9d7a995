//! Multi-task dictionary learning toolkit core.
//!
//! Learns per-task dictionaries that share a common atom block (kept equal
//! across tasks) next to task-individual atoms, via per-sample cyclic
//! coordinate descent on sparse codes and Hessian-diagonal-scaled stochastic
//! gradient steps on the active atoms. Downstream stages encode held-out
//! patches against the frozen dictionaries, max-pool codes per subject,
//! regress targets with cross-validated lasso or ridge, and score
//! predictions with rMSE, nMSE and weighted correlation.

pub mod encode;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod regression;
pub mod trainer;

pub use encode::{encode, max_pool, EncodeResult, PatchGrouping, PoolMode, SubjectFeatureTable};
pub use error::{Error, Result};
pub use linalg::{soft_threshold, sparse_mul, FeatureMatrix, SparseCode};
pub use regression::{
    cross_validate, default_grid, lasso_fit, predict, ridge_fit, CvReport, RegressionMethod,
    RegressionModel,
};
pub use trainer::{
    init_dictionaries, objective, train, update_dictionary, update_sparse_code, Dictionary,
    TrainConfig, TrainOutput, TrainerState,
};
