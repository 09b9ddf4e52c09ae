//! The operator's welfare-maximising dispatch and its nodal prices.
//!
//! The dispatch problem is assembled over `x = [p_d, p_g, p_root, q_g, q_root]`
//! (all per-unit). Branch flows and squared voltages are not variables: they
//! are substituted through the affine maps of the [`LinearFlowModel`], so the
//! constraints on them become rows of `M x + m ≤ 0`. The only equalities are
//! the per-phase root balances.
//!
//! Prices are the sensitivities of the optimal social cost to an extra unit
//! of inelastic demand at each node and phase, read off the multipliers.

mod assemble;
mod prices;
mod solve;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{FlowState, LinearFlowModel, ModelError, NetworkCase, Phase};
use crate::qpsolver::{ProblemError, QpProblem, QpSolution};

pub use assemble::{assemble_dispatch_qp, fixed_demand, imbalance_rows, ImbalanceRows};
pub use prices::{extract_dlmp, price_sensitivity, PriceSignal, Quantity, Sensitivity, DEGENERACY_GAP};
pub use solve::{dispatch, solve_dispatch, solve_dispatch_with};

/// A price-responsive consumer at one node and phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerSpec {
    pub bus: u32,
    pub phase: Phase,
    /// Utility `c1·p² + c2·p + c3` in $/MW², $/MW, $.
    pub c1: f64,
    pub c2: f64,
    #[serde(default)]
    pub c3: f64,
    #[serde(rename = "p_d_min_mw")]
    pub p_d_min: f64,
    #[serde(rename = "p_d_max_mw")]
    pub p_d_max: f64,
    /// Fixed reactive demand.
    #[serde(rename = "q_d_mvar", default)]
    pub q_d: f64,
}

/// A distributed generator, owned by the prosumer at the same node and phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgSpec {
    #[serde(default)]
    pub name: String,
    pub bus: u32,
    pub phase: Phase,
    /// Cost `c4·p² + c5·p + c6` in $/MW², $/MW, $.
    pub c4: f64,
    pub c5: f64,
    #[serde(default)]
    pub c6: f64,
    #[serde(rename = "p_g_min_mw")]
    pub p_g_min: f64,
    #[serde(rename = "p_g_max_mw")]
    pub p_g_max: f64,
    #[serde(rename = "q_g_min_mvar", default)]
    pub q_g_min: f64,
    #[serde(rename = "q_g_max_mvar", default)]
    pub q_g_max: f64,
}

impl ProsumerSpec {
    pub fn utility(&self, p_mw: f64) -> f64 {
        self.c1 * p_mw * p_mw + self.c2 * p_mw + self.c3
    }

    pub fn validate(&self) -> Result<(), String> {
        let vals = [self.c1, self.c2, self.c3, self.p_d_min, self.p_d_max, self.q_d];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err("non-finite coefficient or bound".into());
        }
        if self.c1 > 0.0 {
            return Err(format!("c1 = {} > 0 (utility must be concave)", self.c1));
        }
        if self.p_d_min > self.p_d_max {
            return Err(format!("p_d bounds [{}, {}] reversed", self.p_d_min, self.p_d_max));
        }
        Ok(())
    }
}

impl DgSpec {
    pub fn cost(&self, p_mw: f64) -> f64 {
        self.c4 * p_mw * p_mw + self.c5 * p_mw + self.c6
    }

    pub fn validate(&self) -> Result<(), String> {
        let vals = [
            self.c4, self.c5, self.c6, self.p_g_min, self.p_g_max, self.q_g_min, self.q_g_max,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err("non-finite coefficient or bound".into());
        }
        if self.c4 < 0.0 {
            return Err(format!("c4 = {} < 0 (cost must be convex)", self.c4));
        }
        if self.p_g_min > self.p_g_max {
            return Err(format!("p_g bounds [{}, {}] reversed", self.p_g_min, self.p_g_max));
        }
        if self.q_g_min > self.q_g_max {
            return Err(format!("q_g bounds [{}, {}] reversed", self.q_g_min, self.q_g_max));
        }
        Ok(())
    }
}

/// All market participants. Reads the `prosumers`/`dgs` sections of a case
/// file, or a standalone file with just those two keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Participants {
    #[serde(default)]
    pub prosumers: Vec<ProsumerSpec>,
    #[serde(default)]
    pub dgs: Vec<DgSpec>,
}

pub fn load_participants(path: impl AsRef<Path>) -> Result<Participants, DispatchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DispatchError::Participants {
        what: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_participants(&text)
}

pub fn parse_participants(text: &str) -> Result<Participants, DispatchError> {
    serde_json::from_str(text).map_err(|e| DispatchError::Participants {
        what: "participant file".into(),
        reason: e.to_string(),
    })
}

impl Participants {
    /// Index of the prosumer that owns each DG.
    pub fn dg_owners(&self) -> Vec<Option<usize>> {
        self.dgs
            .iter()
            .map(|g| {
                self.prosumers
                    .iter()
                    .position(|p| p.bus == g.bus && p.phase == g.phase)
            })
            .collect()
    }

    /// DG owned by each prosumer.
    pub fn owned_dg(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.prosumers.len()];
        for (g, owner) in self.dg_owners().into_iter().enumerate() {
            if let Some(k) = owner {
                out[k] = Some(g);
            }
        }
        out
    }

    /// Checks every spec and its placement in the network.
    pub fn validate(&self, case: &NetworkCase) -> Result<(), DispatchError> {
        let place = |what: String, bus: u32, phase: Phase| -> Result<(), DispatchError> {
            let idx = case.bus_index(bus).ok_or_else(|| DispatchError::Participant {
                what: what.clone(),
                reason: format!("bus {bus} does not exist"),
            })?;
            if !case.buses[idx].phases.contains(phase) {
                return Err(DispatchError::Participant {
                    what,
                    reason: format!("bus {bus} has no phase {phase}"),
                });
            }
            if idx == case.root {
                return Err(DispatchError::Participant {
                    what,
                    reason: "participants cannot sit at the root bus".into(),
                });
            }
            Ok(())
        };
        for (k, p) in self.prosumers.iter().enumerate() {
            let what = format!("prosumer {k} ({}{})", p.bus, p.phase);
            p.validate().map_err(|reason| DispatchError::Participant {
                what: what.clone(),
                reason,
            })?;
            place(what, p.bus, p.phase)?;
        }
        let mut owners = HashSet::new();
        for (g, (dg, owner)) in self.dgs.iter().zip(self.dg_owners()).enumerate() {
            let what = format!("dg {g} {} ({}{})", dg.name, dg.bus, dg.phase);
            dg.validate().map_err(|reason| DispatchError::Participant {
                what: what.clone(),
                reason,
            })?;
            place(what.clone(), dg.bus, dg.phase)?;
            let owner = owner.ok_or_else(|| DispatchError::Participant {
                what: what.clone(),
                reason: "no prosumer at this node and phase to own it".into(),
            })?;
            if !owners.insert(owner) {
                return Err(DispatchError::Participant {
                    what,
                    reason: "prosumer already owns a DG".into(),
                });
            }
        }
        Ok(())
    }
}

/// Active-power limit on one branch, identified by its end buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchLimit {
    pub from: u32,
    pub to: u32,
    /// `None` applies the limit to every phase of the branch.
    #[serde(default)]
    pub phase: Option<Phase>,
    pub lo_mw: f64,
    pub hi_mw: f64,
}

/// Operating limits for one dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLimits {
    /// Squared voltage magnitude band (p.u.²), applied at every non-root node-phase.
    pub u_lo: f64,
    pub u_hi: f64,
    /// Default per-phase branch active-power band (MW).
    pub branch_lo_mw: f64,
    pub branch_hi_mw: f64,
    #[serde(default)]
    pub branch_overrides: Vec<BranchLimit>,
    /// Imbalance limit δ̄; `None` drops the imbalance rows.
    pub delta_max: Option<f64>,
    /// Price at the root ($/MWh).
    pub pi_lmp: f64,
}

impl ScenarioLimits {
    /// Limits that never bind.
    pub fn unlimited(pi_lmp: f64) -> Self {
        ScenarioLimits {
            u_lo: f64::NEG_INFINITY,
            u_hi: f64::INFINITY,
            branch_lo_mw: f64::NEG_INFINITY,
            branch_hi_mw: f64::INFINITY,
            branch_overrides: Vec::new(),
            delta_max: None,
            pi_lmp,
        }
    }

    /// Voltage band from magnitudes in p.u.
    pub fn with_voltage_band(mut self, v_lo: f64, v_hi: f64) -> Self {
        self.u_lo = v_lo * v_lo;
        self.u_hi = v_hi * v_hi;
        self
    }

    pub fn validate(&self) -> Result<(), DispatchError> {
        let bad = |msg: String| Err(DispatchError::InvalidLimits(msg));
        if self.u_lo.is_nan() || self.u_hi.is_nan() || self.u_lo >= self.u_hi {
            return bad(format!("voltage band u_lo = {} ≥ u_hi = {}", self.u_lo, self.u_hi));
        }
        if self.branch_lo_mw.is_nan() || self.branch_hi_mw.is_nan() || self.branch_lo_mw > self.branch_hi_mw {
            return bad(format!(
                "branch band [{}, {}] MW reversed",
                self.branch_lo_mw, self.branch_hi_mw
            ));
        }
        for o in &self.branch_overrides {
            if o.lo_mw.is_nan() || o.hi_mw.is_nan() || o.lo_mw > o.hi_mw {
                return bad(format!("branch {}-{} band [{}, {}] MW reversed", o.from, o.to, o.lo_mw, o.hi_mw));
            }
        }
        if let Some(d) = self.delta_max {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("imbalance limit {d} outside (0, 1]"));
            }
        }
        if !self.pi_lmp.is_finite() {
            return bad(format!("root price {}", self.pi_lmp));
        }
        Ok(())
    }

    /// Band (MW) for every branch-phase of the model.
    pub fn branch_bounds(
        &self,
        case: &NetworkCase,
        model: &LinearFlowModel,
    ) -> Result<Vec<(f64, f64)>, DispatchError> {
        let mut out = vec![(self.branch_lo_mw, self.branch_hi_mw); model.num_branch_phases()];
        for o in &self.branch_overrides {
            let k = case
                .branch_between(o.from, o.to)
                .ok_or_else(|| DispatchError::InvalidLimits(format!("no branch {}-{}", o.from, o.to)))?;
            let mut hit = false;
            for (row, &(b, phase)) in model.branch_phase_index().iter().enumerate() {
                if b == k && o.phase.is_none_or(|p| p == phase) {
                    out[row] = (o.lo_mw, o.hi_mw);
                    hit = true;
                }
            }
            if !hit {
                return Err(DispatchError::InvalidLimits(format!(
                    "branch {}-{} has no phase {}",
                    o.from,
                    o.to,
                    o.phase.map(|p| p.to_string()).unwrap_or_default()
                )));
            }
        }
        Ok(out)
    }
}

/// Named groups of constraint rows, in the order used for infeasibility diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintFamily {
    Bounds,
    Balance,
    Branch,
    Voltage,
    Imbalance,
}

impl std::fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConstraintFamily::Bounds => "participant bounds",
            ConstraintFamily::Balance => "root power balance",
            ConstraintFamily::Branch => "branch power limits",
            ConstraintFamily::Voltage => "voltage limits",
            ConstraintFamily::Imbalance => "imbalance limits",
        };
        f.write_str(s)
    }
}

/// What a single constraint row constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "row")]
pub enum RowLabel {
    /// Branch-phase index, upper side.
    BranchHi { branch_phase: usize },
    BranchLo { branch_phase: usize },
    /// Node-phase index.
    VoltageHi { node_phase: usize },
    VoltageLo { node_phase: usize },
    /// `3 u_φ ≤ (1+δ̄)² Σu`
    ImbalanceHi { bus: usize, phase: Phase },
    /// `(1−δ̄)² Σu ≤ 3 u_φ`
    ImbalanceLo { bus: usize, phase: Phase },
    BalanceP { phase: Phase },
    BalanceQ { phase: Phase },
}

impl RowLabel {
    pub fn family(&self) -> ConstraintFamily {
        match self {
            RowLabel::BranchHi { .. } | RowLabel::BranchLo { .. } => ConstraintFamily::Branch,
            RowLabel::VoltageHi { .. } | RowLabel::VoltageLo { .. } => ConstraintFamily::Voltage,
            RowLabel::ImbalanceHi { .. } | RowLabel::ImbalanceLo { .. } => ConstraintFamily::Imbalance,
            RowLabel::BalanceP { .. } | RowLabel::BalanceQ { .. } => ConstraintFamily::Balance,
        }
    }
}

/// Positions of the decision variables in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMap {
    /// One entry per prosumer.
    pub p_d: Vec<usize>,
    /// One entry per DG.
    pub p_g: Vec<usize>,
    pub q_g: Vec<usize>,
    /// Root supply per phase (absent phases are `None`).
    pub p_root: [Option<usize>; 3],
    pub q_root: [Option<usize>; 3],
    /// Node-phase position of each prosumer / DG.
    pub prosumer_node: Vec<usize>,
    pub dg_node: Vec<usize>,
}

impl IndexMap {
    pub fn num_vars(&self) -> usize {
        self.p_d.len() + 2 * self.p_g.len() + 2 * self.p_root.iter().flatten().count()
    }
}

/// The assembled dispatch QP plus everything needed to interpret it.
#[derive(Debug, Clone)]
pub struct DispatchQp {
    pub problem: QpProblem,
    pub index: IndexMap,
    /// Label for each row of `M` and `N`.
    pub m_rows: Vec<RowLabel>,
    pub n_rows: Vec<RowLabel>,
    /// Derivatives of the `M`/`N` rows with respect to nodal net injection,
    /// active (`_p`) and reactive (`_q`), over the node-phase index.
    pub m_inj_p: nalgebra::DMatrix<f64>,
    pub m_inj_q: nalgebra::DMatrix<f64>,
    pub n_inj_p: nalgebra::DMatrix<f64>,
    pub n_inj_q: nalgebra::DMatrix<f64>,
    /// Inelastic demand per node-phase (p.u.).
    pub fixed_p: Vec<f64>,
    pub fixed_q: Vec<f64>,
    /// Root supply capacity, symmetric (p.u.).
    pub root_capacity: f64,
    pub s_base: f64,
    pub pi_lmp: f64,
    /// `Σ c3 − Σ c6`: welfare terms that do not enter the QP.
    pub welfare_constant: f64,
    pub participants: Participants,
}

impl DispatchQp {
    /// Rows (in `M`) belonging to one family.
    pub fn rows_of(&self, family: ConstraintFamily) -> Vec<usize> {
        self.m_rows
            .iter()
            .enumerate()
            .filter(|(_, l)| l.family() == family)
            .map(|(i, _)| i)
            .collect()
    }

    /// Social welfare ($) of a point `x`.
    pub fn welfare(&self, x: &nalgebra::DVector<f64>) -> f64 {
        self.welfare_constant - self.problem.objective(x)
    }
}

/// Optimal dispatch, in per-unit, one entry per participant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchResult {
    pub p_d: Vec<f64>,
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    pub p_root: [f64; 3],
    pub q_root: [f64; 3],
    /// Social welfare ($), recomputed from the utility and cost functions.
    pub objective: f64,
    pub flow: FlowState,
    #[serde(skip)]
    pub qp_solution: QpSolution,
}

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("cannot read participants from {what}: {reason}")]
    Participants { what: String, reason: String },
    #[error("invalid {what}: {reason}")]
    Participant { what: String, reason: String },
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("dispatch infeasible: {family} cannot be met")]
    Infeasible { family: ConstraintFamily },
    #[error("dispatch unbounded")]
    Unbounded,
    #[error("dispatch did not converge (KKT residual {residual:.3e})")]
    NotConverged { residual: f64 },
    #[error("root supply on phase {phase} reached its capacity bound ({value:.4} p.u.)")]
    RootCapacity { phase: Phase, value: f64 },
    #[error("welfare cross-check failed: {qp} vs {recomputed}")]
    WelfareMismatch { qp: f64, recomputed: f64 },
    #[error("prices need an optimal solution, got status {0}")]
    NotOptimal(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl DispatchError {
    pub fn kind(&self) -> &'static str {
        match self {
            DispatchError::Participants { .. } => "participants-parse",
            DispatchError::Participant { .. } => "invalid-participant",
            DispatchError::InvalidLimits(_) => "invalid-limits",
            DispatchError::Infeasible { .. } => "infeasible",
            DispatchError::Unbounded => "unbounded",
            DispatchError::NotConverged { .. } => "not-converged",
            DispatchError::RootCapacity { .. } => "root-capacity",
            DispatchError::WelfareMismatch { .. } => "welfare-mismatch",
            DispatchError::NotOptimal(_) => "not-optimal",
            DispatchError::Problem(_) => "invalid-problem",
            DispatchError::Model(e) => e.kind(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::parse_case;

    fn two_bus() -> NetworkCase {
        parse_case(
            r#"{"s_base_mva": 1, "v_base_kv": 1, "root_bus": 1,
                "buses": [{"id": 1, "phases": "abc"}, {"id": 2, "phases": "ab"}],
                "branches": [{"from": 1, "to": 2,
                  "r_ohm": [[0.01,0,0],[0,0.01,0],[0,0,0.01]],
                  "x_ohm": [[0.01,0,0],[0,0.01,0],[0,0,0.01]]}]}"#,
        )
        .unwrap()
    }

    fn prosumer(bus: u32, phase: Phase) -> ProsumerSpec {
        ProsumerSpec {
            bus,
            phase,
            c1: -1.0,
            c2: 40.0,
            c3: 0.0,
            p_d_min: 0.0,
            p_d_max: 1.0,
            q_d: 0.0,
        }
    }

    fn dg(bus: u32, phase: Phase) -> DgSpec {
        DgSpec {
            name: "g".into(),
            bus,
            phase,
            c4: 1.0,
            c5: 1.0,
            c6: 0.0,
            p_g_min: 0.0,
            p_g_max: 1.0,
            q_g_min: 0.0,
            q_g_max: 0.0,
        }
    }

    #[test]
    fn participant_placement_is_checked() {
        let case = two_bus();
        let ok = Participants {
            prosumers: vec![prosumer(2, Phase::A)],
            dgs: vec![dg(2, Phase::A)],
        };
        ok.validate(&case).unwrap();

        let missing_phase = Participants {
            prosumers: vec![prosumer(2, Phase::C)],
            dgs: vec![],
        };
        assert_eq!(missing_phase.validate(&case).unwrap_err().kind(), "invalid-participant");

        let at_root = Participants {
            prosumers: vec![prosumer(1, Phase::A)],
            dgs: vec![],
        };
        assert!(at_root.validate(&case).is_err());

        let orphan_dg = Participants {
            prosumers: vec![prosumer(2, Phase::A)],
            dgs: vec![dg(2, Phase::B)],
        };
        assert!(orphan_dg.validate(&case).unwrap_err().to_string().contains("own"));

        let mut convex = prosumer(2, Phase::A);
        convex.c1 = 0.5;
        let bad = Participants {
            prosumers: vec![convex],
            dgs: vec![],
        };
        assert!(bad.validate(&case).unwrap_err().to_string().contains("concave"));
    }

    #[test]
    fn limits_validation() {
        let mut l = ScenarioLimits::unlimited(30.0).with_voltage_band(1.0, 1.0);
        assert_eq!(l.validate().unwrap_err().kind(), "invalid-limits");
        l = ScenarioLimits::unlimited(30.0);
        l.delta_max = Some(0.0);
        assert!(l.validate().is_err());
        l.delta_max = Some(1.0);
        l.validate().unwrap();
    }

    #[test]
    fn participants_parse_from_case_sections() {
        let p = parse_participants(
            r#"{"buses": [], "prosumers": [{"bus": 2, "phase": "b", "c1": -1, "c2": 2,
                "p_d_min_mw": 0, "p_d_max_mw": 1}]}"#,
        )
        .unwrap();
        assert_eq!(p.prosumers[0].phase, Phase::B);
        assert_eq!(p.prosumers[0].q_d, 0.0);
        assert!(p.dgs.is_empty());
        assert_eq!(parse_participants("{").unwrap_err().kind(), "participants-parse");
    }
}
