//! Joint Bayesian modelling of a directed social network and item responses
//! measured on the same persons.
//!
//! The network part is a latent-space model `X_ab = δ + u_aᵀv_b + e_ab` with
//! reciprocally correlated dyadic errors; the item part is a factor model
//! `Y_pi = β_i + α_iᵀθ_p + ε_pi`. Person latents `(u_p, v_p, θ_p)` share a
//! joint normal distribution, so the cross-covariance captures how network
//! position relates to the measured traits. Binary data use probit links.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod identify;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod random;
pub mod sampler;
pub mod simulate;

pub use error::{JnirmError, Result};
pub use model::{
    covariance_blocks, expected_network, expected_responses, CovarianceBlocks, DataKind, ItemResponses, LatentLayout,
    LatentState, Mode, ModelConfig, NetworkData,
};
pub use sampler::{run_chain, ChainOutput};
