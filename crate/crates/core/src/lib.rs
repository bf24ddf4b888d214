//! Unsupervised domain adaptation by bridging a labeled source domain and
//! an unlabeled target domain with two complementary classifiers.
//!
//! A source-dominant and a target-dominant model are each trained on
//! fixed-ratio mixtures of source and target samples, then teach each
//! other with confident pseudo-labels, penalize their own unconfident
//! predictions and are kept consistent on the half/half mixture.
//!
//! The crate is self-contained: a small reverse-mode differentiation
//! engine ([`autodiff`]), SGD ([`optim`]), synthetic shifted-domain data
//! ([`data`]), MLP classifiers ([`models`]), the baselines used for
//! pretraining ([`baseline`]), the algorithm itself ([`fixbi`]) and the
//! experiment harness ([`harness`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baseline;
pub mod config;
pub mod data;
mod error;
pub mod fixbi;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
