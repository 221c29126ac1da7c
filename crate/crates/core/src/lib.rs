//! Search-session outcome prediction and re-ranking toolkit.
//!
//! The crate implements an end-to-end batch pipeline over query-log session
//! data:
//!
//! 1. [`session`] — session records, the four-way outcome labeling rule
//!    (Once / Twice / Multiform / Futile search) and validation.
//! 2. [`corpus`] — a deterministic synthetic corpus generator whose
//!    per-engine label marginals are calibrated exactly to configured quotas.
//! 3. [`aggregate`] — a shard-invariant map/reduce pass producing per-link
//!    impression/click statistics and per-user engine-usage statistics.
//! 4. [`features`] — the labeled example table combining link-side and
//!    user-side predictors.
//! 5. [`preprocess`] — near-zero-variance and correlation filters,
//!    centering/scaling, a per-feature OLS/R² summary, and PCA.
//! 6. [`models`] — KNN, LDA, QDA, and multinomial logistic regression with a
//!    majority-vote ensemble.
//! 7. [`evalcv`] — repeated stratified cross-validation, re-ranking by
//!    predicted Once-Search probability, behavioral replay, and the
//!    Once/Twice/Multiform ratio reports.
//! 8. [`pipeline`] — orchestration of the whole flow behind one config.
//!
//! Numeric code is generic over the scalar type via [`Real`]; the concrete
//! pipeline runs on [`Scalar`] (`f64`), see the aliases at the crate root.

pub mod aggregate;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evalcv;
pub mod features;
pub mod linalg;
pub mod models;
pub mod num;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod session;
mod textio;

pub use error::Error;
pub use num::Real;

/// Scalar type the concrete pipeline runs on.
pub type Scalar = f64;

/// Dense matrix over [`Scalar`].
pub type Mat = linalg::Matrix<Scalar>;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
