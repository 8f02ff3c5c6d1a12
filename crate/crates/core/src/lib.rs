//! Evidential classification toolkit.
//!
//! Logits are mapped to non-negative evidence, Dirichlet parameters and
//! vacuity ([`evidence`]); the evidential losses ([`losses`]) and evidence
//! regularizers ([`regularizers`]) come with closed-form logit gradients that
//! drive a small dense network ([`mlp`]). [`trainer`] runs seeded experiments
//! and [`metrics`] scores the resulting uncertainty estimates.
//!
//! The math modules are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the trainer and CLI use.

pub mod datasets;
pub mod error;
pub mod evidence;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod mlp;
pub mod regularizers;
pub mod scalar;
pub mod special;
pub mod trainer;

pub use error::{Error, Result};
pub use evidence::{ActivationKind, EXP_LOGIT_CLAMP};
pub use losses::{LabelVector, LossKind};
pub use regularizers::IncRegKind;
pub use scalar::Real;

pub type EvidenceState = evidence::EvidenceState<f64>;
pub type EvidenceState32 = evidence::EvidenceState<f32>;
pub type LogitVector = evidence::LogitVector<f64>;
pub type LogitVector32 = evidence::LogitVector<f32>;
pub type LossGradPair = losses::LossGradPair<f64>;
pub type LossGradPair32 = losses::LossGradPair<f32>;
pub type RegWeights = regularizers::RegWeights<f64>;
pub type Network = mlp::Network<f64>;
pub type Network32 = mlp::Network<f32>;
