//! Affine three-phase power-flow model.
//!
//! Branch flows and squared voltage magnitudes are linear maps of the net
//! per-phase injections `p = p_g - p_d`, `q = q_g - q_d`:
//!
//! ```text
//! p_b = K1 [ p + K2 q + K3 ]
//! q_b = K4 [ q + K5 p + K6 ]
//! u   = K7 p_b + K8 q_b + K9
//! ```
//!
//! Construction walks the radial tree twice. The backward pass accumulates
//! receiving-end flows from the leaves and adds a secant approximation of
//! the series losses, `loss_φ ≈ ½[(Z I)_φ conj(I0_φ) + (Z I0)_φ conj(I_φ)]`,
//! where `I0` is the branch current at the case's nominal load. The secant
//! is exact at zero injection and at the nominal point, so the map keeps a
//! zero offset and reproduces nominal losses. Currents are taken at the flat
//! profile: `I_ψ = a_ψ conj(S_ψ)` with `a = (1, e^{-j2π/3}, e^{j2π/3})`.
//!
//! The forward pass propagates squared magnitudes from the root:
//!
//! ```text
//! u_j,φ = u_i,φ - 2 Re Σ_ψ conj(Z_φψ) (a_φ / a_ψ) S_send,ψ + Re[(Z I)_φ conj((Z I0)_φ)]
//! ```
//!
//! The last term is the secant of the dropped `|Z I|²` term. The `K`
//! matrices are recovered from the stacked flow map on demand.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{ModelError, NetworkCase, Phase};

/// Largest accepted condition estimate of the stacked branch-flow map.
pub const MAX_CONDITION: f64 = 1e12;

/// Complex-valued linear function of the real injection vector `[p; q]`.
#[derive(Clone)]
struct CLin {
    re: DVector<f64>,
    im: DVector<f64>,
}

impl CLin {
    fn zeros(dim: usize) -> Self {
        Self {
            re: DVector::zeros(dim),
            im: DVector::zeros(dim),
        }
    }

    fn add_assign(&mut self, other: &CLin) {
        self.re += &other.re;
        self.im += &other.im;
    }

    fn scale(&self, c: Complex64) -> CLin {
        CLin {
            re: &self.re * c.re - &self.im * c.im,
            im: &self.im * c.re + &self.re * c.im,
        }
    }

    fn conj(&self) -> CLin {
        CLin {
            re: self.re.clone(),
            im: -&self.im,
        }
    }
}

/// Branch flows, voltages and root injections for one injection profile (all p.u.).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FlowState {
    /// Sending-end active flow per (branch, phase).
    pub p_b: Vec<f64>,
    /// Sending-end reactive flow per (branch, phase).
    pub q_b: Vec<f64>,
    /// Squared voltage magnitude per (node, phase).
    pub u: Vec<f64>,
    /// Active power drawn from the root per phase (zero on absent phases).
    pub p_root: [f64; 3],
    pub q_root: [f64; 3],
}

impl FlowState {
    pub fn voltage_magnitudes(&self) -> Vec<f64> {
        self.u.iter().map(|u| u.max(0.0).sqrt()).collect()
    }
}

/// `K1..K9` in the factored form, over non-root node-phases.
#[derive(Debug, Clone)]
pub struct KMatrices {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub k3: DVector<f64>,
    pub k4: DMatrix<f64>,
    pub k5: DMatrix<f64>,
    pub k6: DVector<f64>,
    pub k7: DMatrix<f64>,
    pub k8: DMatrix<f64>,
    pub k9: DVector<f64>,
    /// Node-phase positions (into the model's node-phase index) of the injection columns.
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LinearFlowModel {
    node_phase_index: Vec<(usize, Phase)>,
    branch_phase_index: Vec<(usize, Phase)>,
    bus_ids: Vec<u32>,
    root: usize,
    root_branches: Vec<usize>,
    s_base: f64,
    pb_p: DMatrix<f64>,
    pb_q: DMatrix<f64>,
    pb_0: DVector<f64>,
    qb_p: DMatrix<f64>,
    qb_q: DMatrix<f64>,
    qb_0: DVector<f64>,
    u_p: DMatrix<f64>,
    u_q: DMatrix<f64>,
    u_0: DVector<f64>,
    condition: f64,
}

pub fn build_linear_model(case: &NetworkCase) -> Result<LinearFlowModel, ModelError> {
    let node_phase_index = case.node_phases();
    let branch_phase_index = case.branch_phases();
    let n = node_phase_index.len();
    let nb = branch_phase_index.len();
    let dim = 2 * n;

    let np_pos = |bus: usize, phase: Phase| {
        node_phase_index
            .iter()
            .position(|&(b, p)| b == bus && p == phase)
    };

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); case.buses.len()];
    for (k, br) in case.branches.iter().enumerate() {
        children[br.from].push(k);
    }

    let zero = Complex64::new(0.0, 0.0);
    let mut s_send: Vec<[Option<CLin>; 3]> = vec![[None, None, None]; case.branches.len()];
    let mut s0_recv: Vec<[Complex64; 3]> = vec![[zero; 3]; case.branches.len()];
    let mut zi: Vec<[Option<CLin>; 3]> = vec![[None, None, None]; case.branches.len()];
    let mut zi0: Vec<[Complex64; 3]> = vec![[zero; 3]; case.branches.len()];

    // Backward sweep: branches are stored in BFS order, so reverse order visits children first.
    for k in (0..case.branches.len()).rev() {
        let br = &case.branches[k];
        let phases = case.buses[br.to].phases;
        let mut recv: [Option<CLin>; 3] = [None, None, None];
        let mut recv0 = [zero; 3];
        for phi in phases.iter() {
            let f = phi.index();
            let pos = np_pos(br.to, phi).expect("downstream node-phase indexed");
            let mut s = CLin::zeros(dim);
            // Receiving-end flow equals local demand, i.e. minus the injection.
            s.re[pos] = -1.0;
            s.im[n + pos] = -1.0;
            let mut s0 = case.buses[br.to].nominal_load[f];
            for &c in &children[br.to] {
                if let Some(child) = &s_send[c][f] {
                    s.add_assign(child);
                    s0 += s0_recv[c][f];
                }
            }
            recv[f] = Some(s);
            recv0[f] = s0;
        }
        s0_recv[k] = recv0;

        let mut current: [Option<CLin>; 3] = [None, None, None];
        let mut current0 = [zero; 3];
        for psi in phases.iter() {
            let g = psi.index();
            let a = psi.reference_phasor();
            current[g] = recv[g].as_ref().map(|s| s.conj().scale(a));
            current0[g] = recv0[g].conj() * a;
        }

        for phi in phases.iter() {
            let f = phi.index();
            let mut drop = CLin::zeros(dim);
            let mut drop0 = zero;
            for psi in phases.iter() {
                let g = psi.index();
                let z = br.z[f][g];
                drop.add_assign(&current[g].as_ref().unwrap().scale(z));
                drop0 += z * current0[g];
            }
            let i_f = current[f].as_ref().unwrap();
            let mut loss = drop.scale(0.5 * current0[f].conj());
            loss.add_assign(&i_f.conj().scale(0.5 * drop0));

            let mut send = recv[f].clone().unwrap();
            send.add_assign(&loss);
            s_send[k][f] = Some(send);
            zi[k][f] = Some(drop);
            zi0[k][f] = drop0;
        }
    }

    // Forward sweep for squared magnitudes.
    let mut u_rows: Vec<Option<DVector<f64>>> = vec![None; n];
    let mut u_const = DVector::zeros(n);
    for phi in case.buses[case.root].phases.iter() {
        let pos = np_pos(case.root, phi).unwrap();
        u_rows[pos] = Some(DVector::zeros(dim));
        u_const[pos] = case.u_ref[phi.index()];
    }
    for (k, br) in case.branches.iter().enumerate() {
        let phases = case.buses[br.to].phases;
        for phi in phases.iter() {
            let f = phi.index();
            let up = np_pos(br.from, phi).unwrap();
            let down = np_pos(br.to, phi).unwrap();
            let mut coupling = CLin::zeros(dim);
            for psi in phases.iter() {
                let g = psi.index();
                let gamma = phi.reference_phasor() / psi.reference_phasor();
                let w = br.z[f][g].conj() * gamma;
                coupling.add_assign(&s_send[k][g].as_ref().unwrap().scale(w));
            }
            let second = zi[k][f].as_ref().unwrap().scale(zi0[k][f].conj());
            let row = u_rows[up].clone().expect("upstream voltage computed first")
                - coupling.re * 2.0
                + second.re;
            u_rows[down] = Some(row);
            u_const[down] = u_const[up];
        }
    }

    let mut pb = DMatrix::zeros(nb, dim);
    let mut qb = DMatrix::zeros(nb, dim);
    for (row, &(k, phi)) in branch_phase_index.iter().enumerate() {
        let s = s_send[k][phi.index()].as_ref().unwrap();
        pb.set_row(row, &s.re.transpose());
        qb.set_row(row, &s.im.transpose());
    }
    let mut um = DMatrix::zeros(n, dim);
    for (row, r) in u_rows.iter().enumerate() {
        um.set_row(row, &r.as_ref().expect("every node reached").transpose());
    }

    let split = |m: &DMatrix<f64>| (m.columns(0, n).into_owned(), m.columns(n, n).into_owned());
    let (pb_p, pb_q) = split(&pb);
    let (qb_p, qb_q) = split(&qb);
    let (u_p, u_q) = split(&um);

    let mut model = LinearFlowModel {
        node_phase_index,
        branch_phase_index,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        root: case.root,
        root_branches: case.root_branches.clone(),
        s_base: case.s_base,
        pb_p,
        pb_q,
        pb_0: DVector::zeros(nb),
        qb_p,
        qb_q,
        qb_0: DVector::zeros(nb),
        u_p,
        u_q,
        u_0: u_const,
        condition: 0.0,
    };
    model.condition = model.flow_map_condition();
    if !(model.condition.is_finite() && model.condition <= MAX_CONDITION) {
        return Err(ModelError::IllConditioned(model.condition));
    }
    Ok(model)
}

impl LinearFlowModel {
    pub fn node_phase_index(&self) -> &[(usize, Phase)] {
        &self.node_phase_index
    }

    pub fn branch_phase_index(&self) -> &[(usize, Phase)] {
        &self.branch_phase_index
    }

    pub fn num_node_phases(&self) -> usize {
        self.node_phase_index.len()
    }

    pub fn num_branch_phases(&self) -> usize {
        self.branch_phase_index.len()
    }

    pub fn position(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.node_phase_index
            .iter()
            .position(|&(b, p)| b == bus && p == phase)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_branches(&self) -> &[usize] {
        &self.root_branches
    }

    pub fn bus_id(&self, bus: usize) -> u32 {
        self.bus_ids[bus]
    }

    pub fn s_base(&self) -> f64 {
        self.s_base
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    /// `(∂p_b/∂p, ∂p_b/∂q, offset)`.
    pub fn branch_p_map(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DVector<f64>) {
        (&self.pb_p, &self.pb_q, &self.pb_0)
    }

    pub fn branch_q_map(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DVector<f64>) {
        (&self.qb_p, &self.qb_q, &self.qb_0)
    }

    pub fn voltage_map(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DVector<f64>) {
        (&self.u_p, &self.u_q, &self.u_0)
    }

    /// Branch-phase rows whose sum is the root draw on `phase`.
    pub fn root_rows(&self, phase: Phase) -> Vec<usize> {
        self.branch_phase_index
            .iter()
            .enumerate()
            .filter(|(_, (k, p))| *p == phase && self.root_branches.contains(k))
            .map(|(row, _)| row)
            .collect()
    }

    fn check_len(&self, what: &'static str, v: &[f64]) -> Result<(), ModelError> {
        if v.len() != self.num_node_phases() {
            return Err(ModelError::DimensionMismatch {
                what,
                got: v.len(),
                expected: self.num_node_phases(),
            });
        }
        Ok(())
    }

    /// Evaluates the model for demand and generation vectors over the node-phase index (p.u.).
    pub fn evaluate_flow(
        &self,
        p_d: &[f64],
        q_d: &[f64],
        p_g: &[f64],
        q_g: &[f64],
    ) -> Result<FlowState, ModelError> {
        self.check_len("p_d", p_d)?;
        self.check_len("q_d", q_d)?;
        self.check_len("p_g", p_g)?;
        self.check_len("q_g", q_g)?;
        let p: Vec<f64> = p_g.iter().zip(p_d).map(|(g, d)| g - d).collect();
        let q: Vec<f64> = q_g.iter().zip(q_d).map(|(g, d)| g - d).collect();
        self.evaluate_injection(&p, &q)
    }

    /// Same as [`evaluate_flow`](Self::evaluate_flow) with net injections.
    pub fn evaluate_injection(&self, p: &[f64], q: &[f64]) -> Result<FlowState, ModelError> {
        self.check_len("p", p)?;
        self.check_len("q", q)?;
        let p = DVector::from_column_slice(p);
        let q = DVector::from_column_slice(q);
        let p_b = &self.pb_p * &p + &self.pb_q * &q + &self.pb_0;
        let q_b = &self.qb_p * &p + &self.qb_q * &q + &self.qb_0;
        let u = &self.u_p * &p + &self.u_q * &q + &self.u_0;

        let mut p_root = [0.0; 3];
        let mut q_root = [0.0; 3];
        for (row, &(k, phi)) in self.branch_phase_index.iter().enumerate() {
            if self.root_branches.contains(&k) {
                p_root[phi.index()] += p_b[row];
                q_root[phi.index()] += q_b[row];
            }
        }
        // Demand located at the root itself is served directly by the slack.
        for (pos, &(bus, phi)) in self.node_phase_index.iter().enumerate() {
            if bus == self.root {
                p_root[phi.index()] -= p[pos];
                q_root[phi.index()] -= q[pos];
            }
        }
        Ok(FlowState {
            p_b: p_b.as_slice().to_vec(),
            q_b: q_b.as_slice().to_vec(),
            u: u.as_slice().to_vec(),
            p_root,
            q_root,
        })
    }

    fn non_root_columns(&self) -> Vec<usize> {
        self.node_phase_index
            .iter()
            .enumerate()
            .filter(|(_, (b, _))| *b != self.root)
            .map(|(i, _)| i)
            .collect()
    }

    fn stacked_flow_map(&self) -> DMatrix<f64> {
        let cols = self.non_root_columns();
        let nb = self.num_branch_phases();
        let m = cols.len();
        let mut f = DMatrix::zeros(2 * nb, 2 * m);
        for (j, &c) in cols.iter().enumerate() {
            for r in 0..nb {
                f[(r, j)] = self.pb_p[(r, c)];
                f[(r, m + j)] = self.pb_q[(r, c)];
                f[(nb + r, j)] = self.qb_p[(r, c)];
                f[(nb + r, m + j)] = self.qb_q[(r, c)];
            }
        }
        f
    }

    fn flow_map_condition(&self) -> f64 {
        let f = self.stacked_flow_map();
        if f.is_empty() {
            return 1.0;
        }
        let sv = f.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Recovers `K1..K9`. Rows are branch-phases (flows) and node-phases (voltages).
    pub fn k_matrices(&self) -> Result<KMatrices, ModelError> {
        let cols = self.non_root_columns();
        let pick = |m: &DMatrix<f64>| m.select_columns(cols.iter());
        let (k1, pq) = (pick(&self.pb_p), pick(&self.pb_q));
        let (qp, k4) = (pick(&self.qb_p), pick(&self.qb_q));
        let k1_lu = k1.clone().lu();
        let k4_lu = k4.clone().lu();
        let ill = || ModelError::IllConditioned(f64::INFINITY);
        let k2 = k1_lu.solve(&pq).ok_or_else(ill)?;
        let k3 = k1_lu.solve(&self.pb_0).ok_or_else(ill)?;
        let k5 = k4_lu.solve(&qp).ok_or_else(ill)?;
        let k6 = k4_lu.solve(&self.qb_0).ok_or_else(ill)?;

        // [K7 K8] F = [U_p U_q]  =>  Fᵀ [K7 K8]ᵀ = [U_p U_q]ᵀ
        let f = self.stacked_flow_map();
        let m = cols.len();
        let mut uu = DMatrix::zeros(self.num_node_phases(), 2 * m);
        uu.columns_mut(0, m).copy_from(&pick(&self.u_p));
        uu.columns_mut(m, m).copy_from(&pick(&self.u_q));
        let k78 = f
            .transpose()
            .lu()
            .solve(&uu.transpose())
            .ok_or_else(ill)?
            .transpose();
        let nb = self.num_branch_phases();
        let k7 = k78.columns(0, nb).into_owned();
        let k8 = k78.columns(nb, nb).into_owned();
        let k9 = &self.u_0 - &k7 * &self.pb_0 - &k8 * &self.qb_0;
        Ok(KMatrices {
            k1,
            k2,
            k3,
            k4,
            k5,
            k6,
            k7,
            k8,
            k9,
            columns: cols,
        })
    }

    /// Plain-text dump of every model matrix.
    ///
    /// Each block starts with `# <name> <rows> <cols>` followed by one
    /// whitespace-separated row per line.
    pub fn dump_matrices<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# node_phase_index {}", self.node_phase_index.len())?;
        for (i, (bus, phi)) in self.node_phase_index.iter().enumerate() {
            writeln!(out, "{i} {} {phi}", self.bus_ids[*bus])?;
        }
        writeln!(out, "# branch_phase_index {}", self.branch_phase_index.len())?;
        for (i, (k, phi)) in self.branch_phase_index.iter().enumerate() {
            writeln!(out, "{i} {k} {phi}")?;
        }
        let blocks: [(&str, &DMatrix<f64>); 6] = [
            ("pb_p", &self.pb_p),
            ("pb_q", &self.pb_q),
            ("qb_p", &self.qb_p),
            ("qb_q", &self.qb_q),
            ("u_p", &self.u_p),
            ("u_q", &self.u_q),
        ];
        for (name, m) in blocks {
            write_matrix(&mut out, name, m)?;
        }
        for (name, v) in [("pb_0", &self.pb_0), ("qb_0", &self.qb_0), ("u_0", &self.u_0)] {
            write_matrix(&mut out, name, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))?;
        }
        Ok(())
    }
}

pub(crate) fn write_matrix<W: Write>(out: &mut W, name: &str, m: &DMatrix<f64>) -> io::Result<()> {
    writeln!(out, "# {name} {} {}", m.nrows(), m.ncols())?;
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.17e}", m[(r, c)])).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}
