//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//! minimize    ½ xᵀ H x + cᵀ x
//! subject to  M x + m ≤ 0      (mu_m ≥ 0)
//!             N x + n = 0      (lambda_n)
//!             x_lo ≤ x ≤ x_hi  (mu_lo, mu_hi ≥ 0)
//! ```
//!
//! with a Mehrotra predictor-corrector interior-point method followed by an
//! optional active-set polish. Multipliers follow the Lagrangian
//! `L = f + mu_mᵀ(Mx + m) + lambda_nᵀ(Nx + n) + mu_hiᵀ(x - x_hi) - mu_loᵀ(x - x_lo)`.

mod io;
mod ipm;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use io::{read_problem, write_problem};
pub use ipm::{solve, solve_warm};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub m_mat: DMatrix<f64>,
    pub m_vec: DVector<f64>,
    pub n_mat: DMatrix<f64>,
    pub n_vec: DVector<f64>,
    pub x_lo: DVector<f64>,
    pub x_hi: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Bound on every KKT residual norm at termination.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Refine the interior-point iterate by solving the identified active set exactly.
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

/// Infinity norms of the KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KktResiduals {
    /// `‖Hx + c + Mᵀmu_m + Nᵀlambda_n + mu_hi - mu_lo‖∞`
    pub stationarity: f64,
    /// Largest violation among inequality, equality and box constraints.
    pub primal_feasibility: f64,
    /// Largest negative part of any inequality or bound multiplier.
    pub dual_feasibility: f64,
    /// Largest `|multiplier × slack|` product.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max_norm(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_norm() <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub mu_m: DVector<f64>,
    pub lambda_n: DVector<f64>,
    pub mu_lo: DVector<f64>,
    pub mu_hi: DVector<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub objective: f64,
    pub iterations: usize,
    /// Whether the returned point comes from the active-set polish.
    pub polished: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("H is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("H is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotConvex(f64),
    #[error("non-finite data in {0}")]
    NonFinite(&'static str),
}

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    /// Unconstrained problem over `n` free variables.
    pub fn unconstrained(h: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            h,
            c,
            m_mat: DMatrix::zeros(0, n),
            m_vec: DVector::zeros(0),
            n_mat: DMatrix::zeros(0, n),
            n_vec: DVector::zeros(0),
            x_lo: DVector::from_element(n, f64::NEG_INFINITY),
            x_hi: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }

    /// Checks dimensions, symmetry and convexity of `H`.
    ///
    /// Box bounds with `x_lo > x_hi` are not an error here: they make the
    /// problem infeasible and are reported through [`QpStatus::Infeasible`].
    pub fn validate(&self) -> Result<(), ProblemError> {
        let n = self.num_vars();
        let dim = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(ProblemError::Dimension(format!("{what} is {got:?}, expected {want:?}")))
            } else {
                Ok(())
            }
        };
        dim("H", self.h.shape(), (n, n))?;
        dim("M", self.m_mat.shape(), (self.m_vec.len(), n))?;
        dim("N", self.n_mat.shape(), (self.n_vec.len(), n))?;
        dim("x_lo", (self.x_lo.len(), 1), (n, 1))?;
        dim("x_hi", (self.x_hi.len(), 1), (n, 1))?;
        if self.h.iter().chain(self.c.iter()).any(|v| !v.is_finite()) {
            return Err(ProblemError::NonFinite("objective"));
        }
        if self
            .m_mat
            .iter()
            .chain(self.m_vec.iter())
            .chain(self.n_mat.iter())
            .chain(self.n_vec.iter())
            .any(|v| !v.is_finite())
        {
            return Err(ProblemError::NonFinite("constraints"));
        }
        if self.x_lo.iter().chain(self.x_hi.iter()).any(|v| v.is_nan()) {
            return Err(ProblemError::NonFinite("bounds"));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > SYMMETRY_TOL * (1.0 + self.h.amax()) {
            return Err(ProblemError::NotSymmetric(asym));
        }
        if n > 0 {
            let min_eig = self.h.clone().symmetric_eigenvalues().min();
            if min_eig < -PSD_TOL {
                return Err(ProblemError::NotConvex(min_eig));
            }
        }
        Ok(())
    }
}

/// KKT residual norms of a candidate primal-dual point.
pub fn kkt_residuals(problem: &QpProblem, solution: &QpSolution) -> KktResiduals {
    residuals_at(
        problem,
        &solution.x,
        &solution.mu_m,
        &solution.lambda_n,
        &solution.mu_lo,
        &solution.mu_hi,
    )
}

pub(crate) fn residuals_at(
    p: &QpProblem,
    x: &DVector<f64>,
    mu_m: &DVector<f64>,
    lambda_n: &DVector<f64>,
    mu_lo: &DVector<f64>,
    mu_hi: &DVector<f64>,
) -> KktResiduals {
    let grad = &p.h * x + &p.c + p.m_mat.tr_mul(mu_m) + p.n_mat.tr_mul(lambda_n) + mu_hi - mu_lo;
    let stationarity = grad.amax();

    let ineq = &p.m_mat * x + &p.m_vec;
    let eq = &p.n_mat * x + &p.n_vec;
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut dual: f64 = 0.0;
    for i in 0..ineq.len() {
        primal = primal.max(ineq[i]);
        comp = comp.max((mu_m[i] * ineq[i]).abs());
        dual = dual.max(-mu_m[i]);
    }
    primal = primal.max(eq.amax());
    for i in 0..x.len() {
        if p.x_lo[i].is_finite() {
            primal = primal.max(p.x_lo[i] - x[i]);
            comp = comp.max((mu_lo[i] * (x[i] - p.x_lo[i])).abs());
        } else {
            comp = comp.max(mu_lo[i].abs());
        }
        if p.x_hi[i].is_finite() {
            primal = primal.max(x[i] - p.x_hi[i]);
            comp = comp.max((mu_hi[i] * (p.x_hi[i] - x[i])).abs());
        } else {
            comp = comp.max(mu_hi[i].abs());
        }
        dual = dual.max(-mu_lo[i]).max(-mu_hi[i]);
    }
    KktResiduals {
        stationarity,
        primal_feasibility: primal.max(0.0),
        dual_feasibility: dual.max(0.0),
        complementarity: comp,
    }
}
