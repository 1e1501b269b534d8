//! Convex polytopic corpus modeling.
//!
//! Turns a line-per-utterance text corpus into interpretable geometric
//! features: bag-of-words vectors are reduced with PCA, enclosed in a
//! minimum-volume simplex, and decomposed into barycentric composition
//! coefficients. Vertices back-projected to vocabulary space yield top-word
//! tables and word-word cosine similarities. A self-contained gated
//! multi-head attention layer shows how those features feed an attention
//! computation, with finite-difference-verified gradients and
//! integrated-gradients attribution.

pub mod artifact;
pub mod corpus;
pub mod error;
pub mod features;
pub mod fusion;
pub mod matrix_serde;
pub mod simplex;
pub mod subspace;
pub(crate) mod vector_serde;

pub use error::CpmError;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CpmError>;
