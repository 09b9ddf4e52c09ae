use nalgebra::{DMatrix, DVector};

use super::{
    DispatchError, DispatchQp, IndexMap, Participants, RowLabel, ScenarioLimits,
};
use crate::netmodel::{LinearFlowModel, NetworkCase, Phase};
use crate::qpsolver::QpProblem;

/// Root supply capacity as a multiple of the case's total demand.
const ROOT_CAPACITY_FACTOR: f64 = 10.0;

/// Linearised imbalance limits, `w · u ≤ 0` per row over the node-phase index.
#[derive(Debug, Clone)]
pub struct ImbalanceRows {
    pub w: DMatrix<f64>,
    pub labels: Vec<RowLabel>,
}

impl ImbalanceRows {
    /// Row values `w · u`; a positive entry is a violated row.
    pub fn evaluate(&self, u: &[f64]) -> DVector<f64> {
        &self.w * DVector::from_column_slice(u)
    }
}

/// Six rows per non-root three-phase bus:
/// `(1−δ̄)²·Σu − 3u_φ ≤ 0` and `3u_φ − (1+δ̄)²·Σu ≤ 0`.
pub fn imbalance_rows(model: &LinearFlowModel, delta_max: f64) -> ImbalanceRows {
    let index = model.node_phase_index();
    let lo = (1.0 - delta_max).powi(2);
    let hi = (1.0 + delta_max).powi(2);
    let mut buses: Vec<usize> = index.iter().map(|&(b, _)| b).collect();
    buses.dedup();

    let mut rows: Vec<(RowLabel, [(usize, f64); 3])> = Vec::new();
    for bus in buses {
        if bus == model.root() {
            continue;
        }
        let pos: Vec<Option<usize>> = Phase::ALL.iter().map(|&p| model.position(bus, p)).collect();
        let [Some(a), Some(b), Some(c)] = [pos[0], pos[1], pos[2]] else {
            continue;
        };
        let all = [a, b, c];
        for (k, &phase) in Phase::ALL.iter().enumerate() {
            let mut lower = [(a, lo), (b, lo), (c, lo)];
            lower[k].1 -= 3.0;
            let mut upper = [(a, -hi), (b, -hi), (c, -hi)];
            upper[k].1 += 3.0;
            debug_assert_eq!(all[k], lower[k].0);
            rows.push((RowLabel::ImbalanceLo { bus, phase }, lower));
            rows.push((RowLabel::ImbalanceHi { bus, phase }, upper));
        }
    }

    let mut w = DMatrix::zeros(rows.len(), index.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (r, (label, coeffs)) in rows.into_iter().enumerate() {
        for (j, v) in coeffs {
            w[(r, j)] = v;
        }
        labels.push(label);
    }
    ImbalanceRows { w, labels }
}

/// Inelastic demand per node-phase (p.u.): nominal load where no prosumer
/// sits, plus every prosumer's fixed reactive demand.
pub fn fixed_demand(
    case: &NetworkCase,
    model: &LinearFlowModel,
    participants: &Participants,
) -> (Vec<f64>, Vec<f64>) {
    let n = model.num_node_phases();
    let s = case.s_base;
    let mut covered = vec![false; n];
    let mut q = vec![0.0; n];
    for pr in &participants.prosumers {
        if let Some(j) = case.bus_index(pr.bus).and_then(|b| model.position(b, pr.phase)) {
            covered[j] = true;
            q[j] += pr.q_d / s;
        }
    }
    let mut p = vec![0.0; n];
    for (j, &(bus, phase)) in model.node_phase_index().iter().enumerate() {
        if !covered[j] {
            let load = case.buses[bus].nominal_load[phase.index()];
            p[j] = load.re;
            q[j] = load.im;
        }
    }
    (p, q)
}

/// Accumulates constraint rows in injection space.
struct RowBuilder {
    n: usize,
    inj_p: Vec<DVector<f64>>,
    inj_q: Vec<DVector<f64>>,
    direct: Vec<Option<(usize, f64)>>,
    constant: Vec<f64>,
    labels: Vec<RowLabel>,
}

impl RowBuilder {
    fn new(n: usize) -> Self {
        RowBuilder {
            n,
            inj_p: Vec::new(),
            inj_q: Vec::new(),
            direct: Vec::new(),
            constant: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn push(&mut self, label: RowLabel, p: DVector<f64>, q: DVector<f64>, constant: f64) {
        self.push_with(label, p, q, constant, None);
    }

    /// Like `push`, with one extra coefficient directly on a decision variable.
    fn push_with(
        &mut self,
        label: RowLabel,
        p: DVector<f64>,
        q: DVector<f64>,
        constant: f64,
        direct: Option<(usize, f64)>,
    ) {
        self.direct.push(direct);
        self.inj_p.push(p);
        self.inj_q.push(q);
        self.constant.push(constant);
        self.labels.push(label);
    }

    fn stack(rows: &[DVector<f64>], n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows.len(), n);
        for (r, v) in rows.iter().enumerate() {
            m.set_row(r, &v.transpose());
        }
        m
    }

    /// `(A_p, A_q, X, x_const)` with `X = A_p J_p + A_q J_q + direct` and the
    /// constant evaluated at the inelastic injection.
    fn finish(
        self,
        jp: &DMatrix<f64>,
        jq: &DMatrix<f64>,
        p0: &DVector<f64>,
        q0: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>, Vec<RowLabel>) {
        let ap = Self::stack(&self.inj_p, self.n);
        let aq = Self::stack(&self.inj_q, self.n);
        let mut x = &ap * jp + &aq * jq;
        for (r, d) in self.direct.iter().enumerate() {
            if let Some((col, v)) = *d {
                x[(r, col)] += v;
            }
        }
        let c = &ap * p0 + &aq * q0 + DVector::from_vec(self.constant);
        (ap, aq, x, c, self.labels)
    }
}

pub fn assemble_dispatch_qp(
    case: &NetworkCase,
    model: &LinearFlowModel,
    participants: &Participants,
    limits: &ScenarioLimits,
) -> Result<DispatchQp, DispatchError> {
    participants.validate(case)?;
    limits.validate()?;
    let branch_bounds = limits.branch_bounds(case, model)?;

    let s = case.s_base;
    let n = model.num_node_phases();
    let np = participants.prosumers.len();
    let ng = participants.dgs.len();
    let root = model.root();
    let root_phases: Vec<Phase> = case.buses[root].phases.iter().collect();

    // Variable layout.
    let mut next = 0;
    let mut take = |count: usize| {
        let r: Vec<usize> = (next..next + count).collect();
        next += count;
        r
    };
    let p_d = take(np);
    let p_g = take(ng);
    let p_root_vars = take(root_phases.len());
    let q_g = take(ng);
    let q_root_vars = take(root_phases.len());
    let nx = next;
    let mut p_root = [None; 3];
    let mut q_root = [None; 3];
    for (k, ph) in root_phases.iter().enumerate() {
        p_root[ph.index()] = Some(p_root_vars[k]);
        q_root[ph.index()] = Some(q_root_vars[k]);
    }
    let locate = |bus: u32, phase: Phase| {
        let b = case.bus_index(bus).expect("validated participant bus");
        model.position(b, phase).expect("validated participant phase")
    };
    let prosumer_node: Vec<usize> = participants.prosumers.iter().map(|p| locate(p.bus, p.phase)).collect();
    let dg_node: Vec<usize> = participants.dgs.iter().map(|g| locate(g.bus, g.phase)).collect();

    // Net injection = J x + inj0.
    let (fixed_p, fixed_q) = fixed_demand(case, model, participants);
    let mut jp = DMatrix::zeros(n, nx);
    let mut jq = DMatrix::zeros(n, nx);
    for k in 0..np {
        jp[(prosumer_node[k], p_d[k])] = -1.0;
    }
    for g in 0..ng {
        jp[(dg_node[g], p_g[g])] = 1.0;
        jq[(dg_node[g], q_g[g])] = 1.0;
    }
    let p0 = -DVector::from_column_slice(&fixed_p);
    let q0 = -DVector::from_column_slice(&fixed_q);

    // Costs (minimisation of negative welfare), per-unit quantities.
    let mut h = DMatrix::zeros(nx, nx);
    let mut c = DVector::zeros(nx);
    let mut x_lo = DVector::zeros(nx);
    let mut x_hi = DVector::zeros(nx);
    let mut welfare_constant = 0.0;
    for (k, pr) in participants.prosumers.iter().enumerate() {
        h[(p_d[k], p_d[k])] = -2.0 * pr.c1 * s * s;
        c[p_d[k]] = -pr.c2 * s;
        x_lo[p_d[k]] = pr.p_d_min / s;
        x_hi[p_d[k]] = pr.p_d_max / s;
        welfare_constant += pr.c3;
    }
    for (g, dg) in participants.dgs.iter().enumerate() {
        h[(p_g[g], p_g[g])] = 2.0 * dg.c4 * s * s;
        c[p_g[g]] = dg.c5 * s;
        x_lo[p_g[g]] = dg.p_g_min / s;
        x_hi[p_g[g]] = dg.p_g_max / s;
        x_lo[q_g[g]] = dg.q_g_min / s;
        x_hi[q_g[g]] = dg.q_g_max / s;
        welfare_constant -= dg.c6;
    }
    let demand_scale = case.total_nominal_load()
        + participants
            .prosumers
            .iter()
            .map(|p| (p.p_d_max.abs() + p.q_d.abs()) / s)
            .sum::<f64>();
    let root_capacity = ROOT_CAPACITY_FACTOR * demand_scale.max(1.0);
    for &v in p_root_vars.iter().chain(&q_root_vars) {
        x_lo[v] = -root_capacity;
        x_hi[v] = root_capacity;
    }
    for &v in &p_root_vars {
        c[v] = limits.pi_lmp * s;
    }

    // Inequalities.
    let (pb_p, pb_q, pb_0) = model.branch_p_map();
    let (u_p, u_q, u_0) = model.voltage_map();
    let mut ineq = RowBuilder::new(n);
    for (r, &(lo, hi)) in branch_bounds.iter().enumerate() {
        let (lo, hi) = (lo / s, hi / s);
        let rp = pb_p.row(r).transpose();
        let rq = pb_q.row(r).transpose();
        if hi.is_finite() {
            ineq.push(RowLabel::BranchHi { branch_phase: r }, rp.clone(), rq.clone(), pb_0[r] - hi);
        }
        if lo.is_finite() {
            ineq.push(RowLabel::BranchLo { branch_phase: r }, -rp, -rq, lo - pb_0[r]);
        }
    }
    for (j, &(bus, _)) in model.node_phase_index().iter().enumerate() {
        if bus == root {
            continue;
        }
        let rp = u_p.row(j).transpose();
        let rq = u_q.row(j).transpose();
        if limits.u_hi.is_finite() {
            ineq.push(RowLabel::VoltageHi { node_phase: j }, rp.clone(), rq.clone(), u_0[j] - limits.u_hi);
        }
        if limits.u_lo.is_finite() {
            ineq.push(RowLabel::VoltageLo { node_phase: j }, -rp, -rq, limits.u_lo - u_0[j]);
        }
    }
    if let Some(delta) = limits.delta_max {
        let imb = imbalance_rows(model, delta);
        let wp = &imb.w * u_p;
        let wq = &imb.w * u_q;
        let w0 = &imb.w * u_0;
        for (r, label) in imb.labels.iter().enumerate() {
            ineq.push(*label, wp.row(r).transpose(), wq.row(r).transpose(), w0[r]);
        }
    }

    // Root balance: supply − Σ root-branch flow − root demand = 0.
    let mut eq = RowBuilder::new(n);
    let (qb_p, qb_q, qb_0) = model.branch_q_map();
    for (k, &phase) in root_phases.iter().enumerate() {
        let rows = model.root_rows(phase);
        let here = model.position(root, phase).expect("root phase indexed");
        for (reactive, var) in [(false, p_root_vars[k]), (true, q_root_vars[k])] {
            let (mp, mq, m0) = if reactive { (qb_p, qb_q, qb_0) } else { (pb_p, pb_q, pb_0) };
            let mut ap = DVector::zeros(n);
            let mut aq = DVector::zeros(n);
            let mut constant = 0.0;
            for &r in &rows {
                ap -= mp.row(r).transpose();
                aq -= mq.row(r).transpose();
                constant -= m0[r];
            }
            // Root demand = −injection at the root node-phase.
            if reactive {
                aq[here] += 1.0;
            } else {
                ap[here] += 1.0;
            }
            let label = if reactive {
                RowLabel::BalanceQ { phase }
            } else {
                RowLabel::BalanceP { phase }
            };
            eq.push_with(label, ap, aq, constant, Some((var, 1.0)));
        }
    }

    let (m_inj_p, m_inj_q, m_mat, m_vec, m_rows) = ineq.finish(&jp, &jq, &p0, &q0);
    let (n_inj_p, n_inj_q, n_mat, n_vec, n_rows) = eq.finish(&jp, &jq, &p0, &q0);

    Ok(DispatchQp {
        problem: QpProblem {
            h,
            c,
            m_mat,
            m_vec,
            n_mat,
            n_vec,
            x_lo,
            x_hi,
        },
        index: IndexMap {
            p_d,
            p_g,
            q_g,
            p_root,
            q_root,
            prosumer_node,
            dg_node,
        },
        m_rows,
        n_rows,
        m_inj_p,
        m_inj_q,
        n_inj_p,
        n_inj_q,
        fixed_p,
        fixed_q,
        root_capacity,
        s_base: s,
        pi_lmp: limits.pi_lmp,
        welfare_constant,
        participants: participants.clone(),
    })
}
