//! Self-attention layers viewed as a flow of token measures.
//!
//! Tokens are particles driven by the attention velocity field of their own
//! empirical measure. Gaussian initial measures stay Gaussian for the
//! Softmax, linear, L2 and Sinkhorn normalizations, which reduces the flow
//! to an ODE on the mean and covariance.

pub mod attention;
pub mod dynamics;
pub mod energetics;
pub mod experiments;
pub mod error;
pub mod linalg;
pub mod measure;
pub mod params;
pub mod transport;

pub use error::{Error, Result};
pub use measure::{AffineField, EmpiricalMeasure, GaussianMeasure};
pub use params::{AttentionParams, Head, ParameterSchedule, Variant};
