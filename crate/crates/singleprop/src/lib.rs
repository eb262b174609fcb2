//! Certified robust training via single-propagation bound-gap
//! regularization, plus the verifiers it approximates.
//!
//! The crate trains ReLU classifiers so that an ℓ∞ verifier can certify
//! their predictions, using a regularizer whose bound-width estimate `v`
//! costs one extra forward pass per step instead of a full interval or
//! linear-relaxation propagation. Reference verifiers (interval bounds,
//! Fast-Lin, and the zero-lower-slope CROWN variant) are included both for
//! certification sweeps and as oracles the approximation is tested against.

pub mod autograd;
pub mod cli;
pub mod counter;
pub mod data;
pub mod error;
pub mod eval;
pub mod ibp;
pub mod linear_bounds;
pub mod loss;
pub mod network;
pub mod tensor;
pub mod train;
pub mod vprop;

pub use error::{Error, Result};
