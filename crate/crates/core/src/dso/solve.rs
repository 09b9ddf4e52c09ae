use nalgebra::DVector;

use super::{
    assemble_dispatch_qp, ConstraintFamily, DispatchError, DispatchQp, DispatchResult, Participants,
    ScenarioLimits,
};
use crate::netmodel::{LinearFlowModel, NetworkCase, Phase};
use crate::qpsolver::{self, QpSettings, QpStatus};

/// Root supply above this fraction of its capacity counts as binding.
const ROOT_CAPACITY_MARGIN: f64 = 0.9;

/// Assembles and solves in one go.
pub fn dispatch(
    case: &NetworkCase,
    model: &LinearFlowModel,
    participants: &Participants,
    limits: &ScenarioLimits,
) -> Result<(DispatchQp, DispatchResult), DispatchError> {
    let qp = assemble_dispatch_qp(case, model, participants, limits)?;
    let result = solve_dispatch(&qp, model)?;
    Ok((qp, result))
}

pub fn solve_dispatch(qp: &DispatchQp, model: &LinearFlowModel) -> Result<DispatchResult, DispatchError> {
    solve_dispatch_with(qp, model, &QpSettings::default())
}

pub fn solve_dispatch_with(
    qp: &DispatchQp,
    model: &LinearFlowModel,
    settings: &QpSettings,
) -> Result<DispatchResult, DispatchError> {
    let sol = qpsolver::solve(&qp.problem, settings)?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Err(DispatchError::Infeasible {
                family: diagnose(qp, settings)?,
            })
        }
        QpStatus::Unbounded => return Err(DispatchError::Unbounded),
        QpStatus::MaxIterations => {
            return Err(DispatchError::NotConverged {
                residual: sol.kkt.max_norm(),
            })
        }
    }

    let x = &sol.x;
    let ix = &qp.index;
    let pick = |vars: &[usize]| vars.iter().map(|&v| x[v]).collect::<Vec<f64>>();
    let p_d = pick(&ix.p_d);
    let p_g = pick(&ix.p_g);
    let q_g = pick(&ix.q_g);
    let mut p_root = [0.0; 3];
    let mut q_root = [0.0; 3];
    for phase in Phase::ALL {
        let f = phase.index();
        for (vars, out) in [(&ix.p_root, &mut p_root), (&ix.q_root, &mut q_root)] {
            if let Some(v) = vars[f] {
                out[f] = x[v];
                if x[v].abs() > ROOT_CAPACITY_MARGIN * qp.root_capacity {
                    return Err(DispatchError::RootCapacity { phase, value: x[v] });
                }
            }
        }
    }

    let (p, q) = injections(qp, &p_d, &p_g, &q_g);
    let flow = model.evaluate_injection(&p, &q)?;

    let s = qp.s_base;
    let parts = &qp.participants;
    let utility: f64 = parts.prosumers.iter().zip(&p_d).map(|(pr, v)| pr.utility(v * s)).sum();
    let cost: f64 = parts.dgs.iter().zip(&p_g).map(|(g, v)| g.cost(v * s)).sum();
    let supply: f64 = p_root.iter().sum::<f64>() * s;
    let objective = utility - cost - qp.pi_lmp * supply;
    let from_qp = qp.welfare(x);
    if (objective - from_qp).abs() > 1e-8 * objective.abs().max(1.0) {
        return Err(DispatchError::WelfareMismatch {
            qp: from_qp,
            recomputed: objective,
        });
    }

    Ok(DispatchResult {
        p_d,
        p_g,
        q_g,
        p_root,
        q_root,
        objective,
        flow,
        qp_solution: sol,
    })
}

/// Nodal net injections (p.u.) for per-participant quantities (p.u.).
pub(crate) fn injections(qp: &DispatchQp, p_d: &[f64], p_g: &[f64], q_g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut p: Vec<f64> = qp.fixed_p.iter().map(|v| -v).collect();
    let mut q: Vec<f64> = qp.fixed_q.iter().map(|v| -v).collect();
    for (k, &j) in qp.index.prosumer_node.iter().enumerate() {
        p[j] -= p_d[k];
    }
    for (g, &j) in qp.index.dg_node.iter().enumerate() {
        p[j] += p_g[g];
        q[j] += q_g[g];
    }
    (p, q)
}

/// Adds constraint families one at a time and reports the first that makes
/// the problem infeasible.
fn diagnose(qp: &DispatchQp, settings: &QpSettings) -> Result<ConstraintFamily, DispatchError> {
    use ConstraintFamily::*;
    let p = &qp.problem;
    if (0..p.num_vars()).any(|i| p.x_lo[i] > p.x_hi[i]) {
        return Ok(Bounds);
    }
    let mut allowed = Vec::new();
    for family in [Balance, Branch, Voltage, Imbalance] {
        allowed.push(family);
        let rows: Vec<usize> = qp
            .m_rows
            .iter()
            .enumerate()
            .filter(|(_, l)| allowed.contains(&l.family()))
            .map(|(r, _)| r)
            .collect();
        let mut sub = p.clone();
        sub.m_mat = p.m_mat.select_rows(&rows);
        sub.m_vec = DVector::from_iterator(rows.len(), rows.iter().map(|&r| p.m_vec[r]));
        if qpsolver::solve(&sub, settings)?.status == QpStatus::Infeasible {
            return Ok(family);
        }
    }
    // The full problem failed but every prefix passed; blame the last family.
    Ok(Imbalance)
}
