//! Model-agnostic CTR training pipeline for sponsored products.
//!
//! Three techniques change only the data a CTR learner sees:
//!
//! * [`debias`]: position-dependent instance weights, plus bucket-level
//!   history features from [`bucketfeat`];
//! * [`multitask`]: click and conversion labels blended via stochastic label
//!   aggregation or instance weighting;
//! * [`auction`]: `pCTR^c * CPC` ranking with a tunable exponent.
//!
//! [`simgen`] generates position-biased logs with known ground truth,
//! [`learner`] is a weighted logistic regression, [`evalkit`] holds offline
//! metrics and [`pipeline`] wires everything into the four ablation methods.

pub mod auction;
pub mod bucketfeat;
pub mod data;
pub mod debias;
pub mod error;
pub mod evalkit;
pub mod learner;
pub mod multitask;
pub mod pipeline;
pub mod rng;
pub mod simgen;

pub use error::{Error, Result};
