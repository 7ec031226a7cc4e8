//! Spectral Galerkin simulation of the stochastic Landau–Lifshitz–Baryakhtar
//! equation
//!
//! ```text
//! du = [β₁Δu − β₂Δ²u + β₃(1−|u|²)u − β₄ u×Δu + β₅Δ(|u|²u)] dt
//!      + Σ_j (−u×h_j + h_j − Δh_j) ∘ dW_j
//! ```
//!
//! on a rectangular box with homogeneous Neumann conditions
//! `∂u/∂n = ∂Δu/∂n = 0`.
//!
//! The numerical core is generic over the scalar type (see [`Scalar`]); the
//! aliases at the crate root fix it to `f64`, which is what the command line
//! tool and the on-disk formats use.

// `!(x > 0)` guards deliberately reject NaN; index loops mirror the maths.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod integrator;
pub mod io;
pub mod model;
pub mod noise;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Grid = spectral::Grid<f64>;
pub type Space = spectral::Space<f64>;
pub type SpaceRef = spectral::SpaceRef<f64>;
pub type SpectralField = spectral::SpectralField<f64>;
pub type PhysField = spectral::PhysField<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type TruncationConfig = model::TruncationConfig<f64>;
pub type NoiseModel = noise::NoiseModel<f64>;
pub type NoiseFamily = noise::NoiseFamily<f64>;
pub type SolverConfig = integrator::SolverConfig<f64>;
pub type SolverState = integrator::SolverState<f64>;
pub type TrajectoryRecord = integrator::TrajectoryRecord<f64>;
pub type EnsembleStats = ensemble::EnsembleStats<f64>;
