//! Position solvers.
//!
//! * [`linear`]: closed-form least squares in the unknowns `(M, O)`, with
//!   optional row weights and a variant that consumes filtered differences.
//! * [`nonlinear`]: Levenberg–Marquardt on the offset-free TDOA residuals, and
//!   the offset-fitting TOA baseline.

pub mod linear;
pub mod lm;
pub mod nonlinear;

use crate::geometry::Point;

pub use linear::{
    build_linear_system, solve_linear, solve_linear_filtered, solve_linear_with, Degeneracy,
    LinearSystem,
};
pub use lm::{LmConfig, Termination};
pub use nonlinear::{
    solve_nonlinear_toa, solve_nonlinear_tdoa, solve_tdoa_pairs, tdoa_jacobian, tdoa_residuals,
};

/// A solved (or explicitly unsolved) transponder position for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Fix {
    pub frame_index: usize,
    /// `None` for warm-up frames and rank-deficient systems.
    pub position: Option<Point>,
    /// Recovered offset; TDOA solvers never model it.
    pub offset: Option<f64>,
    /// Infinite when no position was produced.
    pub residual_norm: f64,
    /// Linear solvers only.
    pub condition_number: Option<f64>,
    /// Nonlinear solvers only.
    pub iterations: Option<usize>,
    pub converged: bool,
    pub degenerate: bool,
    pub warmup: bool,
}

impl Fix {
    /// Placeholder for a frame where the filters have not filled yet.
    pub fn warmup(frame_index: usize) -> Self {
        Self {
            frame_index,
            position: None,
            offset: None,
            residual_norm: f64::INFINITY,
            condition_number: None,
            iterations: None,
            converged: false,
            degenerate: false,
            warmup: true,
        }
    }

    /// Has a position that is neither warm-up nor flagged degenerate.
    pub fn is_solved(&self) -> bool {
        self.position.is_some() && !self.warmup && !self.degenerate
    }
}
