//! Finite-horizon linear MPC with 1-/∞-norm cost, its multi-parametric LP
//! form, and the explicit piecewise-affine solution.
//!
//! The cost penalizes the predicted states `x(k+1) … x(k+N)` and the inputs
//! `u(k) … u(k+N−1)`; `x(k)` itself is a constant and only enters the
//! constraints. Inputs past the horizon are zero, which needs no rows once the
//! predictions are rolled out.

mod discretize;
mod mplp;
mod parametric;
mod solution;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lp::LpError;
use crate::polyhedron::{BoxSet, PolyError};

pub use discretize::{discretize, expm};
pub use mplp::{solve_mplp, MplpConfig};
pub use parametric::{
    build_parametric_lp, pointwise_oracle, pointwise_plan, ParametricLp, TIE_BREAK_STATE,
    TIE_BREAK_U,
};
pub use solution::{AffineLaw, CriticalRegion, ExplicitSolution, LOCATE_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid MPC problem: {0}")]
    Validation(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("no feasible parameter found in the domain")]
    SeedInfeasible,
    #[error("region count exceeded the limit of {0}")]
    ExplorationOverflow(usize),
    #[error("malformed explicit solution: {0}")]
    BadSolution(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormKind {
    One,
    #[default]
    Inf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub horizon: usize,
    pub ts: f64,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub norm: NormKind,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub param_domain: BoxSet,
}

impl MpcProblem {
    pub fn state_dim(&self) -> usize {
        self.a_d.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_d.ncols()
    }

    /// `[x_min, x_max]` as a box.
    pub fn state_box(&self) -> BoxSet {
        BoxSet::new(self.x_min.clone(), self.x_max.clone()).expect("validated bounds")
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let n = self.a_d.nrows();
        let m = self.b_d.ncols();
        let dm = |what: String| Err(MpcError::DimensionMismatch(what));
        if self.a_d.ncols() != n {
            return dm(format!("A_d is {}x{}", n, self.a_d.ncols()));
        }
        if self.b_d.nrows() != n {
            return dm(format!("B_d has {} rows, expected {n}", self.b_d.nrows()));
        }
        if self.q.ncols() != n {
            return dm(format!("Q has {} columns, expected {n}", self.q.ncols()));
        }
        if self.r.ncols() != m {
            return dm(format!("R has {} columns, expected {m}", self.r.ncols()));
        }
        if self.u_min.len() != m || self.u_max.len() != m {
            return dm("input bounds".into());
        }
        if self.x_min.len() != n || self.x_max.len() != n || self.param_domain.dim() != n {
            return dm("state bounds or parameter domain".into());
        }
        let all_finite = [&self.a_d, &self.b_d, &self.q, &self.r]
            .iter()
            .all(|mat| mat.iter().all(|v| v.is_finite()))
            && [&self.u_min, &self.u_max, &self.x_min, &self.x_max]
                .iter()
                .all(|v| v.iter().all(|e| e.is_finite()));
        if !all_finite || !self.ts.is_finite() {
            return Err(MpcError::NonFiniteInput("MPC problem data".into()));
        }
        let bad = |msg: String| Err(MpcError::Validation(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.ts <= 0.0 {
            return bad(format!("sampling period must be positive, got {}", self.ts));
        }
        if let Some(i) = (0..m).find(|&i| self.u_min[i] >= self.u_max[i]) {
            return bad(format!("u_min[{i}] = {} is not below u_max[{i}] = {}", self.u_min[i], self.u_max[i]));
        }
        if let Some(i) = (0..n).find(|&i| self.x_min[i] >= self.x_max[i]) {
            return bad(format!("x_min[{i}] = {} is not below x_max[{i}] = {}", self.x_min[i], self.x_max[i]));
        }
        if !self.state_box().contains_box(&self.param_domain, 1e-12) {
            return bad("param_domain must lie inside [x_min, x_max]".into());
        }
        Ok(())
    }

    /// Predicted states `x(k+1) … x(k+N)` under inputs `u` (stacked, `N·m`).
    pub fn rollout(&self, x0: &DVector<f64>, u: &DVector<f64>) -> Vec<DVector<f64>> {
        let m = self.input_dim();
        let mut x = x0.clone();
        (0..self.horizon)
            .map(|j| {
                x = &self.a_d * &x + &self.b_d * u.rows(j * m, m);
                x.clone()
            })
            .collect()
    }

    /// Cost of an input sequence, recomputed by rollout.
    pub fn cost(&self, x0: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let m = self.input_dim();
        let norm = |v: DVector<f64>| match self.norm {
            NormKind::Inf => v.amax(),
            NormKind::One => v.iter().map(|e| e.abs()).sum(),
        };
        let states: f64 = self.rollout(x0, u).into_iter().map(|x| norm(&self.q * x)).sum();
        let inputs: f64 = (0..self.horizon)
            .map(|j| norm(&self.r * u.rows(j * m, m)))
            .sum();
        states + inputs
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// `x⁺ = x + u`, `|u| ≤ 1`, `N = 1`, `Q = R = 1`, ∞-norm, domain `[-5, 5]`.
    pub fn scalar_integrator() -> MpcProblem {
        MpcProblem {
            a_d: DMatrix::from_element(1, 1, 1.0),
            b_d: DMatrix::from_element(1, 1, 1.0),
            horizon: 1,
            ts: 1.0,
            q: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
            norm: NormKind::Inf,
            u_min: DVector::from_element(1, -1.0),
            u_max: DVector::from_element(1, 1.0),
            x_min: DVector::from_element(1, -5.0),
            x_max: DVector::from_element(1, 5.0),
            param_domain: BoxSet::cube(1, 5.0),
        }
    }

    pub fn double_integrator() -> MpcProblem {
        MpcProblem {
            a_d: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            b_d: DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
            horizon: 2,
            ts: 1.0,
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
            norm: NormKind::Inf,
            u_min: DVector::from_element(1, -1.0),
            u_max: DVector::from_element(1, 1.0),
            x_min: DVector::from_element(2, -5.0),
            x_max: DVector::from_element(2, 5.0),
            param_domain: BoxSet::cube(2, 5.0),
        }
    }
}
