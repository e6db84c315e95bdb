//! Stochastic variational inference with gradient linearization.
//!
//! Fits a fully factorized Gaussian to a Gibbs posterior `p(x) ∝ exp(−E(x))`
//! using only a linearized gradient `∇E(x) ≈ A(x₀)x + b(x₀)` of the energy.
//! The crate ships the optimizer ([`svigl`]), first-order and MAP baselines
//! ([`baselines`]), three energy models ([`denoise`], [`flow`], [`lop`]) and
//! evaluation metrics ([`metrics`]).

pub mod baselines;
pub mod denoise;
pub mod energy;
pub mod error;
pub mod flow;
pub mod image;
pub mod linops;
pub mod lop;
pub mod metrics;
pub mod svigl;
pub mod trace;

pub use energy::{EnergyModel, GeneralizedCharbonnier, LinearizedGradient};
pub use error::{Result, SviglError};
pub use image::Image;
pub use linops::{BlockSystem, CsrMatrix, SparseSymMatrix};
pub use svigl::{SviglConfig, VariationalGaussian};
pub use trace::Trace;
