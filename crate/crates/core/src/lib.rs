//! Kernel self-supervised representation learning on a Nyström basis.
//!
//! Embeddings are `Z = K_nm A + 1 gamma^T`, where `K_nm` holds kernel
//! evaluations against `m` landmark samples and `A` is an `m x h`
//! coefficient matrix trained with a self-supervised objective.

pub mod data;
pub mod error;
pub mod evaluate;
pub mod interpret;
pub mod kernels;
pub mod landmarks;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod precondition;
pub mod trainer;

pub use error::{Error, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
