//! Case file schema and validation.
//!
//! A case is a single JSON document:
//!
//! ```json
//! {
//!   "name": "ieee33-3ph",
//!   "s_base_mva": 1.0,
//!   "v_base_kv": 12.66,
//!   "root_bus": 1,
//!   "u_ref": [1.0, 1.0, 1.0],
//!   "buses": [{"id": 1, "phases": "abc", "load_mw": [0, 0, 0], "load_mvar": [0, 0, 0]}],
//!   "branches": [{"from": 1, "to": 2, "r_ohm": [[..3]; 3], "x_ohm": [[..3]; 3]}],
//!   "prosumers": [...],
//!   "dgs": [...]
//! }
//! ```
//!
//! Impedances are in ohms and converted to per-unit with
//! `z_base = v_base_kv² / s_base_mva`. Participant sections are read by
//! [`crate::dso::load_participants`] and ignored here.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Branch, Bus, CaseError, NetworkCase, PhaseSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    #[serde(default)]
    pub name: Option<String>,
    pub s_base_mva: f64,
    pub v_base_kv: f64,
    #[serde(default)]
    pub root_bus: Option<u32>,
    #[serde(default = "default_u_ref")]
    pub u_ref: [f64; 3],
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
}

fn default_u_ref() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: u32,
    pub phases: String,
    #[serde(default)]
    pub load_mw: [f64; 3],
    #[serde(default)]
    pub load_mvar: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchRecord {
    pub from: u32,
    pub to: u32,
    pub r_ohm: [[f64; 3]; 3],
    pub x_ohm: [[f64; 3]; 3],
}

const SYMMETRY_TOL: f64 = 1e-12;

pub fn load_case(path: impl AsRef<Path>) -> Result<NetworkCase, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case(&text)
}

pub fn parse_case(text: &str) -> Result<NetworkCase, CaseError> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| CaseError::Parse(e.to_string()))?;
    file.validate()
}

impl CaseFile {
    pub fn validate(&self) -> Result<NetworkCase, CaseError> {
        if !(self.s_base_mva.is_finite() && self.s_base_mva > 0.0) {
            return Err(CaseError::InvalidBase(format!("s_base_mva = {}", self.s_base_mva)));
        }
        if !(self.v_base_kv.is_finite() && self.v_base_kv > 0.0) {
            return Err(CaseError::InvalidBase(format!("v_base_kv = {}", self.v_base_kv)));
        }
        if let Some(u) = self.u_ref.iter().find(|u| !(0.81..=1.21).contains(*u)) {
            return Err(CaseError::InvalidBase(format!(
                "u_ref entry {u} outside [0.81, 1.21] p.u.²"
            )));
        }

        let mut index: HashMap<u32, usize> = HashMap::new();
        let mut buses = Vec::with_capacity(self.buses.len());
        for (i, rec) in self.buses.iter().enumerate() {
            if index.insert(rec.id, i).is_some() {
                return Err(CaseError::DuplicateBus(rec.id));
            }
            let phases = PhaseSet::parse(&rec.phases)
                .map_err(|reason| CaseError::InvalidBus { id: rec.id, reason })?;
            if phases.is_empty() {
                return Err(CaseError::InvalidBus {
                    id: rec.id,
                    reason: "no phases".into(),
                });
            }
            let mut nominal_load = [Complex64::new(0.0, 0.0); 3];
            for p in 0..3 {
                let s = Complex64::new(rec.load_mw[p], rec.load_mvar[p]) / self.s_base_mva;
                if !s.re.is_finite() || !s.im.is_finite() {
                    return Err(CaseError::InvalidBus {
                        id: rec.id,
                        reason: "non-finite load".into(),
                    });
                }
                if s.norm() > 0.0 && !phases.contains(super::Phase::from_index(p)) {
                    return Err(CaseError::InvalidBus {
                        id: rec.id,
                        reason: format!("load on absent phase {}", super::Phase::from_index(p)),
                    });
                }
                nominal_load[p] = s;
            }
            buses.push(Bus {
                id: rec.id,
                phases,
                nominal_load,
            });
        }

        let root_id = self
            .root_bus
            .ok_or_else(|| CaseError::MissingRoot("root_bus not given".into()))?;
        let root = *index
            .get(&root_id)
            .ok_or_else(|| CaseError::MissingRoot(format!("root bus {root_id} not among buses")))?;

        if self.branches.len() + 1 != buses.len() {
            return Err(CaseError::NonRadial(format!(
                "{} buses need {} branches, found {}",
                buses.len(),
                buses.len().saturating_sub(1),
                self.branches.len()
            )));
        }

        let z_base = self.v_base_kv * self.v_base_kv / self.s_base_mva;
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); buses.len()];
        let mut impedances = Vec::with_capacity(self.branches.len());
        for (k, rec) in self.branches.iter().enumerate() {
            let lookup = |bus: u32| {
                index.get(&bus).copied().ok_or(CaseError::UnknownBus {
                    from: rec.from,
                    to: rec.to,
                    bus,
                })
            };
            let (f, t) = (lookup(rec.from)?, lookup(rec.to)?);
            if f == t {
                return Err(CaseError::NonRadial(format!("self-loop at bus {}", rec.from)));
            }
            impedances.push(branch_impedance(rec, z_base)?);
            adjacency[f].push((t, k));
            adjacency[t].push((f, k));
        }

        // Breadth-first orientation away from the root.
        let mut visited = vec![false; buses.len()];
        let mut oriented: Vec<Option<Branch>> = vec![None; self.branches.len()];
        let mut order = Vec::with_capacity(self.branches.len());
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(i) = queue.pop_front() {
            for &(j, k) in &adjacency[i] {
                if oriented[k].is_some() {
                    continue;
                }
                if visited[j] {
                    return Err(CaseError::NonRadial(format!(
                        "cycle closed by branch {}-{}",
                        self.branches[k].from, self.branches[k].to
                    )));
                }
                visited[j] = true;
                oriented[k] = Some(Branch {
                    from: i,
                    to: j,
                    z: impedances[k],
                });
                order.push(k);
                queue.push_back(j);
            }
        }
        if let Some(i) = visited.iter().position(|v| !v) {
            return Err(CaseError::NonRadial(format!(
                "bus {} is not connected to the root",
                buses[i].id
            )));
        }

        let branches: Vec<Branch> = order
            .iter()
            .map(|&k| oriented[k].clone().expect("every branch oriented"))
            .collect();
        for br in &branches {
            let (up, down) = (buses[br.from].phases, buses[br.to].phases);
            if !down.is_subset(up) {
                return Err(CaseError::PhaseMismatch {
                    from: buses[br.from].id,
                    to: buses[br.to].id,
                    up: up.to_string(),
                    down: down.to_string(),
                });
            }
        }
        let root_branches = branches
            .iter()
            .enumerate()
            .filter(|(_, br)| br.from == root)
            .map(|(k, _)| k)
            .collect();

        Ok(NetworkCase {
            name: self.name.clone().unwrap_or_else(|| "unnamed".into()),
            buses,
            branches,
            root,
            u_ref: self.u_ref,
            root_branches,
            s_base: self.s_base_mva,
            v_base: self.v_base_kv,
        })
    }
}

fn branch_impedance(rec: &BranchRecord, z_base: f64) -> Result<[[Complex64; 3]; 3], CaseError> {
    let invalid = |reason: String| CaseError::InvalidImpedance {
        from: rec.from,
        to: rec.to,
        reason,
    };
    let mut z = [[Complex64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r, x) = (rec.r_ohm[i][j], rec.x_ohm[i][j]);
            if !r.is_finite() || !x.is_finite() {
                return Err(invalid("non-finite entry".into()));
            }
            if (r - rec.r_ohm[j][i]).abs() > SYMMETRY_TOL * (1.0 + r.abs())
                || (x - rec.x_ohm[j][i]).abs() > SYMMETRY_TOL * (1.0 + x.abs())
            {
                return Err(invalid(format!("not symmetric at ({i},{j})")));
            }
            z[i][j] = Complex64::new(r, x) / z_base;
        }
        if rec.r_ohm[i][i] < 0.0 {
            return Err(invalid(format!("negative self resistance on phase {i}")));
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Phase;

    fn diag(r: f64, x: f64) -> (String, String) {
        let m = |v: f64| format!("[[{v},0,0],[0,{v},0],[0,0,{v}]]");
        (m(r), m(x))
    }

    fn two_bus() -> String {
        let (r, x) = diag(0.5, 0.3);
        format!(
            r#"{{"s_base_mva": 1.0, "v_base_kv": 12.66, "root_bus": 1,
               "buses": [{{"id": 1, "phases": "abc"}}, {{"id": 2, "phases": "abc", "load_mw": [0.1,0.1,0.1]}}],
               "branches": [{{"from": 1, "to": 2, "r_ohm": {r}, "x_ohm": {x}}}]}}"#
        )
    }

    #[test]
    fn minimal_two_bus_case_is_valid() {
        let case = parse_case(&two_bus()).unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.root, 0);
        assert_eq!(case.root_branches, vec![0]);
        let zb = 12.66 * 12.66;
        assert!((case.branches[0].z[0][0].re - 0.5 / zb).abs() < 1e-15);
        assert!((case.buses[1].nominal_load[1].re - 0.1).abs() < 1e-15);
        assert_eq!(case.node_phases().len(), 6);
        assert_eq!(case.branch_phases().len(), 3);
    }

    #[test]
    fn cycle_is_rejected_as_non_radial() {
        let (r, x) = diag(0.5, 0.3);
        let text = format!(
            r#"{{"s_base_mva": 1.0, "v_base_kv": 12.66, "root_bus": 1,
               "buses": [{{"id": 1, "phases": "abc"}}, {{"id": 2, "phases": "abc"}}, {{"id": 3, "phases": "abc"}}],
               "branches": [{{"from": 1, "to": 2, "r_ohm": {r}, "x_ohm": {x}}},
                            {{"from": 2, "to": 3, "r_ohm": {r}, "x_ohm": {x}}},
                            {{"from": 3, "to": 1, "r_ohm": {r}, "x_ohm": {x}}}]}}"#
        );
        let err = parse_case(&text).unwrap_err();
        assert_eq!(err.kind(), "non-radial");
        assert!(err.to_string().contains("non-radial topology"));
    }

    #[test]
    fn cycle_with_tree_edge_count_is_rejected() {
        // 4 buses, 3 branches, but bus 4 is isolated and 1-2-3 forms a loop.
        let (r, x) = diag(0.5, 0.3);
        let text = format!(
            r#"{{"s_base_mva": 1.0, "v_base_kv": 12.66, "root_bus": 1,
               "buses": [{{"id": 1, "phases": "abc"}}, {{"id": 2, "phases": "abc"}}, {{"id": 3, "phases": "abc"}}, {{"id": 4, "phases": "abc"}}],
               "branches": [{{"from": 1, "to": 2, "r_ohm": {r}, "x_ohm": {x}}},
                            {{"from": 2, "to": 3, "r_ohm": {r}, "x_ohm": {x}}},
                            {{"from": 3, "to": 1, "r_ohm": {r}, "x_ohm": {x}}}]}}"#
        );
        assert_eq!(parse_case(&text).unwrap_err().kind(), "non-radial");
    }

    #[test]
    fn duplicate_bus_and_missing_root_are_distinct() {
        let dup = two_bus().replace(r#""id": 2"#, r#""id": 1"#);
        assert!(matches!(parse_case(&dup).unwrap_err(), CaseError::DuplicateBus(1)));

        let no_root = two_bus().replace(r#""root_bus": 1,"#, "");
        assert_eq!(parse_case(&no_root).unwrap_err().kind(), "missing-root");

        let bad_root = two_bus().replace(r#""root_bus": 1"#, r#""root_bus": 9"#);
        assert_eq!(parse_case(&bad_root).unwrap_err().kind(), "missing-root");

        assert_eq!(parse_case("{not json").unwrap_err().kind(), "parse");
    }

    #[test]
    fn asymmetric_impedance_and_phase_mismatch_are_rejected() {
        let asym = two_bus().replacen("[[0.5,0,0]", "[[0.5,0.1,0]", 1);
        assert_eq!(parse_case(&asym).unwrap_err().kind(), "invalid-impedance");

        let narrow_root = two_bus().replacen(r#""phases": "abc""#, r#""phases": "ab""#, 1);
        assert_eq!(parse_case(&narrow_root).unwrap_err().kind(), "phase-mismatch");
    }

    #[test]
    fn reversed_branch_is_oriented_from_root() {
        let text = two_bus().replace(r#""from": 1, "to": 2"#, r#""from": 2, "to": 1"#);
        let case = parse_case(&text).unwrap();
        assert_eq!(case.branches[0].from, case.root);
        assert!(case.buses[1].phases.contains(Phase::C));
    }

    #[test]
    fn bundled_case_loads() {
        let case = parse_case(crate::IEEE33_CASE_JSON).unwrap();
        assert_eq!(case.buses.len(), 33);
        assert_eq!(case.branches.len(), 32);
        assert_eq!(case.buses[case.root].id, 1);
    }
}
