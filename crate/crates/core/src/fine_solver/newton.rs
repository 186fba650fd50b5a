use thiserror::Error;

use crate::linalg::{max_norm, LinearSolve, SingularMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Stop once `‖F(x)‖_∞` is at or below this value.
    pub residual_tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            residual_tol: 1e-10,
            max_iters: 50,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NewtonError {
    #[error("singular Jacobian at iteration {iteration} (pivot {pivot_index})")]
    SingularJacobian { iteration: usize, pivot_index: usize },
    #[error("no convergence after {iterations} iterations (residual {residual_norm:.3e})")]
    NoConvergence { iterations: usize, residual_norm: f64 },
    #[error("non-finite residual at iteration {iteration}")]
    NonFinite { iteration: usize },
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub solution: Vec<f64>,
    /// Number of Newton updates applied.
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Plain Newton iteration `x ← x − J(x)⁻¹ F(x)`.
///
/// `jacobian` assembles and factors the Jacobian at the current iterate.
pub fn newton_solve<R, J, L>(
    mut residual: R,
    mut jacobian: J,
    guess: Vec<f64>,
    cfg: &NewtonConfig,
) -> Result<NewtonOutcome, NewtonError>
where
    R: FnMut(&[f64]) -> Vec<f64>,
    J: FnMut(&[f64]) -> Result<L, SingularMatrix>,
    L: LinearSolve,
{
    let mut x = guess;
    let mut iterations = 0;
    loop {
        let mut r = residual(&x);
        let norm = max_norm(&r);
        if !norm.is_finite() {
            return Err(NewtonError::NonFinite { iteration: iterations });
        }
        if norm <= cfg.residual_tol {
            return Ok(NewtonOutcome {
                solution: x,
                iterations,
                residual_norm: norm,
            });
        }
        if iterations >= cfg.max_iters {
            return Err(NewtonError::NoConvergence {
                iterations,
                residual_norm: norm,
            });
        }
        let lu = jacobian(&x).map_err(|e| NewtonError::SingularJacobian {
            iteration: iterations,
            pivot_index: e.pivot_index,
        })?;
        lu.solve_in_place(&mut r);
        for (xi, di) in x.iter_mut().zip(&r) {
            *xi -= di;
        }
        iterations += 1;
    }
}
