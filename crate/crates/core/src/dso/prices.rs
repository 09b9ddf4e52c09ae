use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{DispatchError, DispatchQp};
use crate::netmodel::{LinearFlowModel, Phase};
use crate::qpsolver::{self, QpSettings, QpSolution, QpStatus};

/// One-sided slopes further apart than this ($/MWh) mark a kink in the
/// optimal cost, i.e. non-unique multipliers.
pub const DEGENERACY_GAP: f64 = 1e-2;

/// Nodal prices over the model's node-phase index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSignal {
    /// `(bus id, phase)` of each entry.
    pub node_phases: Vec<(u32, Phase)>,
    /// Active-power price ($/MWh).
    pub pi_p: Vec<f64>,
    /// Reactive-power price ($/MVarh).
    pub pi_q: Vec<f64>,
}

impl PriceSignal {
    pub fn position(&self, bus: u32, phase: Phase) -> Option<usize> {
        self.node_phases.iter().position(|&(b, p)| b == bus && p == phase)
    }

    /// `(pi_p, pi_q)` at a node-phase.
    pub fn at(&self, bus: u32, phase: Phase) -> Option<(f64, f64)> {
        self.position(bus, phase).map(|j| (self.pi_p[j], self.pi_q[j]))
    }

    /// The same price everywhere (flat tariff), zero reactive price.
    pub fn flat(model: &LinearFlowModel, tariff: f64) -> Self {
        let node_phases = node_phases(model);
        let n = node_phases.len();
        PriceSignal {
            node_phases,
            pi_p: vec![tariff; n],
            pi_q: vec![0.0; n],
        }
    }
}

fn node_phases(model: &LinearFlowModel) -> Vec<(u32, Phase)> {
    model
        .node_phase_index()
        .iter()
        .map(|&(b, p)| (model.bus_id(b), p))
        .collect()
}

/// Which inelastic demand is perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    P,
    Q,
}

/// Marginal cost of inelastic demand at one node-phase: `∂(social cost)/∂d`
/// is `−(∂rowsᵀ/∂injection)·multipliers`, divided by the power base.
pub fn extract_dlmp(
    qp: &DispatchQp,
    model: &LinearFlowModel,
    solution: &QpSolution,
) -> Result<PriceSignal, DispatchError> {
    if solution.status != QpStatus::Optimal {
        return Err(DispatchError::NotOptimal(format!("{:?}", solution.status)));
    }
    let s = qp.s_base;
    let price = |m_inj: &nalgebra::DMatrix<f64>, n_inj: &nalgebra::DMatrix<f64>| -> Vec<f64> {
        let v = -(m_inj.tr_mul(&solution.mu_m) + n_inj.tr_mul(&solution.lambda_n)) / s;
        v.as_slice().to_vec()
    };
    Ok(PriceSignal {
        node_phases: node_phases(model),
        pi_p: price(&qp.m_inj_p, &qp.n_inj_p),
        pi_q: price(&qp.m_inj_q, &qp.n_inj_q),
    })
}

/// Finite-difference check of one price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    /// Price from the multipliers ($/MWh or $/MVarh).
    pub dual: f64,
    pub forward: f64,
    pub backward: f64,
    pub central: f64,
    pub degenerate: bool,
}

impl Sensitivity {
    pub fn error(&self) -> f64 {
        (self.dual - self.central).abs()
    }
}

/// Re-solves with inelastic demand at `node_phase` moved by ±`eps` (p.u.)
/// and differences the optimal social cost. The re-solves are warm-started
/// from `solution`'s active set.
pub fn price_sensitivity(
    qp: &DispatchQp,
    solution: &QpSolution,
    node_phase: usize,
    quantity: Quantity,
    eps: f64,
    settings: &QpSettings,
) -> Result<Sensitivity, DispatchError> {
    if solution.status != QpStatus::Optimal {
        return Err(DispatchError::NotOptimal(format!("{:?}", solution.status)));
    }
    let (m_inj, n_inj) = match quantity {
        Quantity::P => (&qp.m_inj_p, &qp.n_inj_p),
        Quantity::Q => (&qp.m_inj_q, &qp.n_inj_q),
    };
    let dm: DVector<f64> = m_inj.column(node_phase).into_owned();
    let dn: DVector<f64> = n_inj.column(node_phase).into_owned();
    let solve_at = |delta: f64| -> Result<f64, DispatchError> {
        // More demand is less injection.
        let mut p = qp.problem.clone();
        p.m_vec -= &dm * delta;
        p.n_vec -= &dn * delta;
        let sol = qpsolver::solve_warm(&p, settings, solution)?;
        if sol.status != QpStatus::Optimal {
            return Err(DispatchError::NotOptimal(format!("{:?} at perturbed demand", sol.status)));
        }
        Ok(sol.objective)
    };
    let f0 = solution.objective;
    let fp = solve_at(eps)?;
    let fm = solve_at(-eps)?;
    let s = qp.s_base;
    let forward = (fp - f0) / eps / s;
    let backward = (f0 - fm) / eps / s;
    let central = (fp - fm) / (2.0 * eps) / s;
    let m = -(dm.dot(&solution.mu_m) + dn.dot(&solution.lambda_n)) / s;
    Ok(Sensitivity {
        dual: m,
        forward,
        backward,
        central,
        degenerate: (forward - backward).abs() > DEGENERACY_GAP,
    })
}
