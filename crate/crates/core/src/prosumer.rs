//! Price-taking prosumers.
//!
//! An agent sees only its own specs and the broadcast prices and maximises
//!
//! ```text
//! U(p_d) − π·p_d + π·p_g + π_q·q_g − C(p_g)
//! ```
//!
//! over its box. The problem separates per variable, so the optimum is a
//! clamped stationary point in `p_d` and `p_g` and bang-bang in `q_g`.
//! Quantities here are in MW/MVar and prices in $/MWh, $/MVarh.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dso::{DgSpec, ProsumerSpec};
use crate::qpsolver::{self, ProblemError, QpProblem, QpSettings, QpStatus};

/// Reactive prices at or below this magnitude count as zero.
pub const ZERO_Q_PRICE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub p_d: f64,
    pub p_g: f64,
    pub q_g: f64,
    /// Realised surplus ($).
    pub surplus: f64,
    /// The reactive price was zero, so any feasible `q_g` is optimal.
    pub q_indifferent: bool,
}

#[derive(Debug, Error)]
pub enum ResponseError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("agent problem ended with status {0:?}")]
    Status(QpStatus),
}

impl ResponseError {
    pub fn kind(&self) -> &'static str {
        match self {
            ResponseError::Problem(_) => "invalid-problem",
            ResponseError::Status(_) => "not-optimal",
        }
    }
}

/// Surplus of a given choice.
pub fn surplus(prosumer: &ProsumerSpec, dg: Option<&DgSpec>, pi_p: f64, pi_q: f64, p_d: f64, p_g: f64, q_g: f64) -> f64 {
    let mut v = prosumer.utility(p_d) - pi_p * p_d;
    if let Some(g) = dg {
        v += pi_p * p_g + pi_q * q_g - g.cost(p_g);
    }
    v
}

/// Maximiser of `a·x² + b·x` on `[lo, hi]` with `a ≤ 0`.
fn concave_argmax(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    if a < 0.0 {
        (-b / (2.0 * a)).clamp(lo, hi)
    } else if b > 0.0 {
        hi
    } else {
        // Flat or decreasing: the smallest optimiser.
        lo
    }
}

/// Closed-form response. `q_ref` is the reactive output to hold when the
/// reactive price is zero (the operator's dispatch); without it the agent
/// picks the feasible point nearest zero.
pub fn respond(
    prosumer: &ProsumerSpec,
    dg: Option<&DgSpec>,
    pi_p: f64,
    pi_q: f64,
    q_ref: Option<f64>,
) -> Response {
    let p_d = concave_argmax(prosumer.c1, prosumer.c2 - pi_p, prosumer.p_d_min, prosumer.p_d_max);
    let (p_g, q_g, q_indifferent) = match dg {
        None => (0.0, 0.0, false),
        Some(g) => {
            let p_g = concave_argmax(-g.c4, pi_p - g.c5, g.p_g_min, g.p_g_max);
            if pi_q > ZERO_Q_PRICE {
                (p_g, g.q_g_max, false)
            } else if pi_q < -ZERO_Q_PRICE {
                (p_g, g.q_g_min, false)
            } else {
                let q = q_ref.unwrap_or(0.0).clamp(g.q_g_min, g.q_g_max);
                (p_g, q, true)
            }
        }
    };
    Response {
        p_d,
        p_g,
        q_g,
        surplus: surplus(prosumer, dg, pi_p, pi_q, p_d, p_g, q_g),
        q_indifferent,
    }
}

/// The same problem solved numerically as a box-constrained QP.
pub fn respond_qp(
    prosumer: &ProsumerSpec,
    dg: Option<&DgSpec>,
    pi_p: f64,
    pi_q: f64,
) -> Result<Response, ResponseError> {
    let n = if dg.is_some() { 3 } else { 1 };
    let mut h = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    let mut problem_lo = DVector::zeros(n);
    let mut problem_hi = DVector::zeros(n);
    h[(0, 0)] = -2.0 * prosumer.c1;
    c[0] = pi_p - prosumer.c2;
    problem_lo[0] = prosumer.p_d_min;
    problem_hi[0] = prosumer.p_d_max;
    if let Some(g) = dg {
        h[(1, 1)] = 2.0 * g.c4;
        c[1] = g.c5 - pi_p;
        c[2] = -pi_q;
        problem_lo[1] = g.p_g_min;
        problem_hi[1] = g.p_g_max;
        problem_lo[2] = g.q_g_min;
        problem_hi[2] = g.q_g_max;
    }
    let mut problem = QpProblem::unconstrained(h, c);
    problem.x_lo = problem_lo;
    problem.x_hi = problem_hi;
    let sol = qpsolver::solve(&problem, &QpSettings::default())?;
    if sol.status != QpStatus::Optimal {
        return Err(ResponseError::Status(sol.status));
    }
    let x = &sol.x;
    let (p_g, q_g) = if dg.is_some() { (x[1], x[2]) } else { (0.0, 0.0) };
    Ok(Response {
        p_d: x[0],
        p_g,
        q_g,
        surplus: surplus(prosumer, dg, pi_p, pi_q, x[0], p_g, q_g),
        q_indifferent: dg.is_some() && pi_q.abs() <= ZERO_Q_PRICE,
    })
}

/// Bound multipliers implied by a response, in minimisation form
/// (`∇f + μ_hi − μ_lo = 0`), and the worst violation of that system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktCertificate {
    pub mu_lo: [f64; 3],
    pub mu_hi: [f64; 3],
    /// Largest of: stationarity residual, negative multiplier, bound violation.
    pub violation: f64,
}

pub fn certificate(prosumer: &ProsumerSpec, dg: Option<&DgSpec>, pi_p: f64, pi_q: f64, r: &Response) -> KktCertificate {
    let mut mu_lo = [0.0; 3];
    let mut mu_hi = [0.0; 3];
    let mut violation: f64 = 0.0;
    let mut check = |k: usize, x: f64, grad: f64, lo: f64, hi: f64| {
        let tol = 1e-12 * (1.0 + x.abs());
        violation = violation.max(lo - x).max(x - hi);
        let at_lo = x <= lo + tol;
        let at_hi = x >= hi - tol;
        // Stationarity fixes the multiplier on the active side.
        let (l, u) = match (at_lo, at_hi) {
            (true, true) => (grad.max(0.0), (-grad).max(0.0)),
            (true, false) => (grad, 0.0),
            (false, true) => (0.0, -grad),
            (false, false) => (0.0, 0.0),
        };
        mu_lo[k] = l;
        mu_hi[k] = u;
        violation = violation.max(-l).max(-u).max((grad + u - l).abs());
    };
    check(0, r.p_d, -(2.0 * prosumer.c1 * r.p_d + prosumer.c2) + pi_p, prosumer.p_d_min, prosumer.p_d_max);
    if let Some(g) = dg {
        check(1, r.p_g, 2.0 * g.c4 * r.p_g + g.c5 - pi_p, g.p_g_min, g.p_g_max);
        check(2, r.q_g, -pi_q, g.q_g_min, g.q_g_max);
    }
    KktCertificate { mu_lo, mu_hi, violation }
}
