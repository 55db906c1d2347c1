//! Mahalanobis metric learning from relative-distance triplets.
//!
//! A PSD matrix `X = Σ_j w_j v_j v_jᵀ` is grown one trace-one rank-one base
//! at a time by column generation, so no projection onto the PSD cone is
//! ever needed. Two trainers are provided: stage-wise (one weight per
//! step, found by bisection) and totally-corrective (all weights
//! re-optimized by a bound-constrained Newton-type solve).

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boost;
pub mod constraints;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod multipass;
pub mod seeding;

pub use boost::{Loss, MetricModel, TrainConfig, TrainMeta, TrainTrace, Variant};
pub use constraints::{generate_triplets, Dataset, Triplet, TripletSet};
pub use error::{Error, ErrorKind, Result};
pub use linalg::SymMatrix;
