//! Spiking-neural-network state estimation beside classical filters.
//!
//! The crate builds recurrent spike-coding networks whose weight matrices are
//! derived from a dynamical-system model so that the decoded network activity
//! implements an extended Kalman filter (SNN-EKF) or a modified sliding
//! innovation filter (SNN-EMSIF, and its covariance-free variant
//! SNN-EMSIF*). The classical EKF and EMSIF run beside them as baselines, and
//! a Monte-Carlo harness produces RMSE, coverage, sparsity and runtime
//! metrics for the shipped Van der Pol and satellite-rendezvous scenarios.
//!
//! Core math is generic over the scalar type through [`Scalar`]; the harness
//! and CLI work with the `f64` aliases exported at the crate root.

pub mod config;
pub mod error;
pub mod filters;
pub mod harness;
pub mod linalg;
pub mod neuro;
pub mod report;
pub mod scn;
pub mod systems;

pub use error::{Error, Result};

use nalgebra::RealField;
use num_traits::{FromPrimitive, NumCast};

/// Scalar type for all filter and network math: `f32` or `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + NumCast {
    /// Lossy conversion to `f64` for reporting and diagnostics.
    fn to_f64(self) -> f64 {
        NumCast::from(self).expect("scalar representable as f64")
    }

    /// Conversion from an `f64` literal or configuration value.
    fn from_f64_lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal")
    }
}

impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + NumCast {}

/// Estimate norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

// Concrete f64 aliases used by the harness, the CLI and most tests.
pub type Vector64 = nalgebra::DVector<f64>;
pub type Matrix64 = nalgebra::DMatrix<f64>;
pub type FilterState64 = filters::FilterState<f64>;
pub type NoiseSpec64 = systems::NoiseSpec<f64>;
pub type Trajectory64 = systems::Trajectory<f64>;
pub type DecodingMatrix64 = scn::DecodingMatrix<f64>;
pub type NetworkState64 = scn::NetworkState<f64>;
pub type WeightSet64 = neuro::WeightSet<f64>;
