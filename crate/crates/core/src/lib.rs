//! Scenario synthesis and hybrid precoding for energy-efficient downlinks
//! through a stacked intelligent metasurface (SIM).
//!
//! The pipeline is: [`channel`] builds geometry, diffraction matrices and
//! correlated user channels; [`power`] and [`metrics`] evaluate a precoder and
//! phase configuration; [`sca_precoder`], [`sdp_sim`] and [`pga_sim`] solve
//! the three blocks; [`ao`] alternates them and runs the baseline schemes.
//!
//! Scalar formulas in [`scalar`] and [`power`] are generic over
//! [`num_traits::Float`]; matrix code works in [`Real`].

pub mod ao;
pub mod channel;
pub mod config;
pub mod metrics;
pub mod pga_sim;
pub mod power;
pub mod scalar;
pub mod sca_precoder;
pub mod sdp_sim;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Real = f64;
pub type Complex = num_complex::Complex<Real>;
pub type CMatrix = DMatrix<Complex>;
pub type CVector = DVector<Complex>;
pub type RMatrix = DMatrix<Real>;

pub use ao::{Scheme, SolveReport};
pub use channel::{ChannelRealization, PhaseState, Scenario, SimGeometry};
pub use config::SystemConfig;
pub use metrics::RateReport;
pub use power::{PowerBreakdown, PowerParams};
pub use sca_precoder::PrecodingMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("QoS infeasible: {0}")]
    Infeasible(String),
    #[error("solver failure: {0}")]
    Solver(String),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
