//! Deep latent group factor analysis for longitudinal multi-view data.
//!
//! A recurrent variational latent-variable model in which every timestep has
//! its own latent-to-group loading matrices `W[t][g]`. Training maximizes a
//! collapsed evidence lower bound whose group-lasso term is handled by a
//! proximal step, so unused latent-to-group paths become exact zeros.
//!
//! Module map:
//! - [`kernel`]: tensors, reverse-mode tape, parameter store, gradient oracle
//! - [`model`]: networks, loadings, forward pass, checkpoints
//! - [`objective`]: Gaussian KL / log-density, group-lasso penalty, ELBO
//! - [`optim`]: Adam, proximal group shrinkage, training loop
//! - [`data`]: one-bar generator, wide CSV ingestion, splits, batches
//! - [`eval`]: MSE, test log-likelihood, sparsity reports, λ sweep
//! - [`cli`]: config parsing and the `dlgfa` command line

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod model;
pub mod objective;
pub mod optim;

pub use error::{DlgfaError, Result};
pub use kernel::{ParamStore, Tape, Tensor, Var};
