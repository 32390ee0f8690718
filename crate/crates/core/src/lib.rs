//! Sparse, regularized low-rank adaptation as a standalone numerical
//! library.
//!
//! The crate has three parts:
//!
//! * adapter machinery — dense matrices, deterministic streams, low-rank
//!   factor pairs with one-shot magnitude masks, and retention masks with
//!   the conflict-mitigation regularizer ([`matrix`], [`rng`], [`adapter`],
//!   [`retention`], [`regularizer`]);
//! * a theory engine that evaluates the closed-form product-sparsity laws
//!   and validates them by Monte Carlo ([`theory`], [`pattern`]);
//! * a toy continual-learning benchmark: pretrain a small frozen stack on a
//!   mixture of source tasks, fine-tune adapters on a shifted target task
//!   under several schemes, and score forgetting ([`trainer`], [`report`]).
//!
//! Everything is deterministic given a seed: random state lives in
//! explicitly keyed [`rng::RandomStream`]s and reductions run in fixed
//! order.

pub mod adapter;
pub mod error;
pub mod matrix;
pub mod pattern;
pub mod regularizer;
pub mod report;
pub mod retention;
pub mod rng;
pub mod theory;
pub mod trainer;

pub use adapter::{build_mask, LoraAdapter};
pub use error::{Result, SculptError};
pub use matrix::Matrix;
pub use pattern::{product_pattern_sparsity, BinaryPattern};
pub use regularizer::{
    cmr_frobenius, cmr_frobenius_grad, cmr_l1, cmr_l1_grad, total_loss, LayerReg, RegGrad,
    RegularizerConfig,
};
pub use retention::{importance_scores, retention_mask, RetentionMask};
pub use rng::RandomStream;
pub use theory::{
    concentration_bound, expected_product_sparsity, monte_carlo_validate, sample_mask_pair,
    Sampling, SparsitySpec, TheoryReport,
};
pub use trainer::{
    dare_drop_rescale, dare_model, evaluate, posthoc_prune, pretrain_base, train,
    train_with_observer, Baseline, EvalReport, TaskSpec, ToyModel, TraceRow, TrainConfig,
};
