//! Replica-symmetric predictions of the asymptotic distortion of regularized
//! least-squares (RLS) recovery in multi-terminal compressive sensing, plus a
//! finite-size Monte Carlo recovery simulator to check them against.
//!
//! Module map:
//! - [`spectra`]: sensing ensembles, Stieltjes and R transforms.
//! - [`signal_model`]: joint sparsity prior, sampling, distortion.
//! - [`regularizers`]: separable penalties and their decoupled estimators.
//! - [`replica`]: the replica-symmetric fixed point and regularizer tuning.
//! - [`recovery`]: finite-N proximal-gradient RLS solver.
//! - [`harness`]: configs, experiment drivers and tabular output.

pub mod error;
pub mod harness;
pub mod recovery;
pub mod regularizers;
pub mod replica;
pub mod rng;
pub mod signal_model;
pub mod spectra;

pub use error::{Error, Result};
