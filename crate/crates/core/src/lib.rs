//! Cluster-specific logistic regression by ordinary (profile) maximum likelihood
//! and by conditional maximum likelihood, including the conditional likelihood of
//! data whose individuals are replicated `R` times.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the data model, the per-cluster profile root and the
//!   ordinary-logistic profile likelihood.
//! * [`conditional`] holds the exact conditional normalizers and likelihoods.
//! * [`estimators`] maximizes either likelihood with a damped Newton solver and
//!   checks the closed-form MLE/CMLE relations.
//! * [`saddlepoint`] evaluates the contour-integral representation of the
//!   replicated normalizer and its exponential growth rate.
//! * [`simulation`] runs the seeded matched treatment-control Monte Carlo study.
//! * [`io`] and [`cli`] wire everything into the `clogit` binary.

pub mod cli;
pub mod conditional;
pub mod error;
pub mod estimators;
pub mod io;
pub mod math;
pub mod model;
pub mod saddlepoint;
pub mod simulation;

pub use error::{Error, Result};
pub use model::{Cluster, Dataset, FitResult, Method, Parameters};
