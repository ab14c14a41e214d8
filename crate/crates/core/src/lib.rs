//! Score-based sampling through one template,
//! `x_{k+1} = x_k + τ_k ∇log f_{X_{σ_k}}(x_k) + √(2 τ_k T_k) n`,
//! with Gaussian-mixture oracles for every piece.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

// `!(x > 0)` rejects NaN as well; index loops follow the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod conditional;
pub mod error;
pub mod evaluation;
pub mod linalg;
mod scalar;
pub mod sampler;
pub mod schedules;
pub mod score_sources;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use conditional::{ForwardOperator, LinearObservation};
pub use linalg::Matrix;
pub use sampler::{SamplerConfig, SamplerState, TemplateForm};
pub use schedules::{AlphaBarSchedule, NoiseSchedule, SamplerPlan};
pub use score_sources::{GaussianMixture, ScoreSource, VpScoreAdapter};
pub use training::{Checkpoint, MlpDenoiser};

pub type GaussianMixture64 = GaussianMixture<f64>;
pub type GaussianMixture32 = GaussianMixture<f32>;
pub type SamplerPlan64 = SamplerPlan<f64>;
pub type SamplerPlan32 = SamplerPlan<f32>;
pub type NoiseSchedule64 = NoiseSchedule<f64>;
pub type NoiseSchedule32 = NoiseSchedule<f32>;
pub type AlphaBarSchedule64 = AlphaBarSchedule<f64>;
pub type AlphaBarSchedule32 = AlphaBarSchedule<f32>;
pub type LinearObservation64 = LinearObservation<f64>;
pub type LinearObservation32 = LinearObservation<f32>;
pub type MlpDenoiser64 = MlpDenoiser<f64>;
pub type MlpDenoiser32 = MlpDenoiser<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
