//! Convex-program IR and a log-barrier interior-point backend.
//!
//! Programs are built with [`ConvexProgram`] and solved through the
//! [`ConicBackend`] contract. The bundled [`BarrierSolver`] handles
//! nonnegative orthants, second-order cones, the hypograph of `ln` and complex
//! Hermitian PSD blocks natively, so no real embedding of Hermitian blocks is
//! needed.

mod barrier;
mod program;

pub use barrier::BarrierSolver;
pub use program::{
    AffineExpr, Block, ComplexVars, Constraint, ConvexProgram, HermitianCoef, RankOne, Sense, Var,
};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("variable index {0} is not declared")]
    UndeclaredVariable(usize),
    #[error("PSD block index {0} is not declared")]
    UndeclaredBlock(usize),
    #[error("bad coefficient on block {block}: {msg}")]
    BadCoefficient { block: usize, msg: String },
    #[error("second-order cone constraint {0} has no entries")]
    EmptyCone(usize),
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("cannot parse program: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    /// Stopped before the requested accuracy (stalled line search, singular
    /// Newton system, iteration cap or apparent unboundedness).
    NumericalLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative duality-gap target, measured against `1 + |objective|`.
    pub gap: f64,
    /// Scaled equality residual accepted for an optimal status.
    pub feasibility: f64,
    pub max_newton_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            gap: 1e-8,
            feasibility: 1e-7,
            max_newton_steps: 800,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Largest `|eᵢ(z)| / (1 + |constᵢ|)` over equality constraints.
    pub equality: f64,
    /// Upper bound on `optimum − objective` from the barrier parameter.
    pub gap: f64,
    /// Smallest cone slack at the returned point (≥ 0 means inside).
    pub cone_margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub objective: f64,
    pub scalars: Vec<f64>,
    pub blocks: Vec<DMatrix<Complex64>>,
    pub iterations: usize,
    pub residuals: Residuals,
}

impl Solution {
    pub fn value(&self, v: Var) -> f64 {
        self.scalars[v.0]
    }

    pub fn block(&self, b: Block) -> &DMatrix<Complex64> {
        &self.blocks[b.0]
    }

    pub fn eval(&self, e: &AffineExpr) -> f64 {
        e.eval(&self.scalars, &self.blocks)
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// Anything that can solve a [`ConvexProgram`].
///
/// Implementations must be deterministic for identical inputs and must report
/// infeasibility through [`Status::Infeasible`] instead of returning a
/// meaningless point.
pub trait ConicBackend {
    fn solve(&self, program: &ConvexProgram, tol: &Tolerances) -> Result<Solution, ProgramError>;
}

/// Solves with the default [`BarrierSolver`].
pub fn solve(program: &ConvexProgram, tol: &Tolerances) -> Result<Solution, ProgramError> {
    BarrierSolver::default().solve(program, tol)
}
