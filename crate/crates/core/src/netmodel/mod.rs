//! Three-phase radial network representation and its affine flow model.

mod case;
mod imbalance;
mod linear;

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use case::{load_case, parse_case, BranchRecord, BusRecord, CaseFile};
pub use imbalance::{imbalance_index, imbalance_index_from_u, ImbalanceIndex};
pub(crate) use linear::write_matrix as linear_write_matrix;
pub use linear::{build_linear_model, FlowState, KMatrices, LinearFlowModel, MAX_CONDITION};

/// Conductor phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Phase {
        Phase::ALL[i]
    }

    /// Unit phasor of the balanced reference profile (a leads, b lags by 120°).
    pub fn reference_phasor(self) -> Complex64 {
        let angle = -2.0 * std::f64::consts::PI / 3.0 * self.index() as f64;
        Complex64::from_polar(1.0, angle)
    }

    pub fn as_char(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Phase::A),
            "b" => Ok(Phase::B),
            "c" => Ok(Phase::C),
            other => Err(format!("unknown phase '{other}'")),
        }
    }
}

/// Subset of {a, b, c}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct PhaseSet([bool; 3]);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet([true; 3]);

    pub fn contains(self, phase: Phase) -> bool {
        self.0[phase.index()]
    }

    pub fn insert(&mut self, phase: Phase) {
        self.0[phase.index()] = true;
    }

    pub fn len(self) -> usize {
        self.0.iter().filter(|p| **p).count()
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        (0..3).all(|i| !self.0[i] || other.0[i])
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn parse(s: &str) -> Result<PhaseSet, String> {
        let mut set = PhaseSet::default();
        for ch in s.chars() {
            let phase: Phase = ch.to_string().parse()?;
            if set.contains(phase) {
                return Err(format!("phase '{ch}' listed twice in '{s}'"));
            }
            set.insert(phase);
        }
        Ok(set)
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// 3×3 complex series impedance in per-unit.
pub type PhaseImpedance = [[Complex64; 3]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub phases: PhaseSet,
    /// Nominal (forecast) load per phase in p.u.; sets the loss linearization point.
    pub nominal_load: [Complex64; 3],
}

/// A branch oriented away from the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Upstream bus index into [`NetworkCase::buses`].
    pub from: usize,
    /// Downstream bus index.
    pub to: usize,
    pub z: PhaseImpedance,
}

/// Validated radial three-phase network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub buses: Vec<Bus>,
    /// Branches in breadth-first order from the root.
    pub branches: Vec<Branch>,
    pub root: usize,
    /// Squared reference voltage magnitude per phase at the root (p.u.²).
    pub u_ref: [f64; 3],
    /// Branches leaving the root.
    pub root_branches: Vec<usize>,
    /// Power base (MVA).
    pub s_base: f64,
    /// Voltage base (kV, line-to-line).
    pub v_base: f64,
}

impl NetworkCase {
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Index of the branch between two bus ids, in either orientation.
    pub fn branch_between(&self, a: u32, b: u32) -> Option<usize> {
        let (ia, ib) = (self.bus_index(a)?, self.bus_index(b)?);
        self.branches
            .iter()
            .position(|br| (br.from == ia && br.to == ib) || (br.from == ib && br.to == ia))
    }

    /// Branch feeding each bus (`None` for the root).
    pub fn parent_branch(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.buses.len()];
        for (k, br) in self.branches.iter().enumerate() {
            parent[br.to] = Some(k);
        }
        parent
    }

    /// Canonical (bus, phase) ordering over all buses including the root.
    pub fn node_phases(&self) -> Vec<(usize, Phase)> {
        self.buses
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.phases.iter().map(move |p| (i, p)))
            .collect()
    }

    /// Canonical (branch, phase) ordering; a branch carries the phases of its downstream bus.
    pub fn branch_phases(&self) -> Vec<(usize, Phase)> {
        self.branches
            .iter()
            .enumerate()
            .flat_map(|(k, br)| self.buses[br.to].phases.iter().map(move |p| (k, p)))
            .collect()
    }

    /// Total nominal load magnitude in p.u.
    pub fn total_nominal_load(&self) -> f64 {
        self.buses
            .iter()
            .flat_map(|b| b.nominal_load.iter())
            .map(|s| s.norm())
            .sum()
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("case parse error: {0}")]
    Parse(String),
    #[error("non-radial topology: {0}")]
    NonRadial(String),
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("missing root: {0}")]
    MissingRoot(String),
    #[error("branch {from}-{to} references unknown bus {bus}")]
    UnknownBus { from: u32, to: u32, bus: u32 },
    #[error("invalid bus {id}: {reason}")]
    InvalidBus { id: u32, reason: String },
    #[error("invalid impedance on branch {from}-{to}: {reason}")]
    InvalidImpedance { from: u32, to: u32, reason: String },
    #[error("phase mismatch on branch {from}-{to}: downstream phases {down} not within upstream phases {up}")]
    PhaseMismatch {
        from: u32,
        to: u32,
        up: String,
        down: String,
    },
    #[error("invalid base or reference: {0}")]
    InvalidBase(String),
}

impl CaseError {
    pub fn kind(&self) -> &'static str {
        match self {
            CaseError::Io { .. } => "io",
            CaseError::Parse(_) => "parse",
            CaseError::NonRadial(_) => "non-radial",
            CaseError::DuplicateBus(_) => "duplicate-bus",
            CaseError::MissingRoot(_) => "missing-root",
            CaseError::UnknownBus { .. } => "unknown-bus",
            CaseError::InvalidBus { .. } => "invalid-bus",
            CaseError::InvalidImpedance { .. } => "invalid-impedance",
            CaseError::PhaseMismatch { .. } => "phase-mismatch",
            CaseError::InvalidBase(_) => "invalid-base",
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("ill-conditioned flow model (condition estimate {0:.3e})")]
    IllConditioned(f64),
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

impl ModelError {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelError::IllConditioned(_) => "ill-conditioned",
            ModelError::DimensionMismatch { .. } => "dimension-mismatch",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_set_parse_and_display() {
        let s = PhaseSet::parse("ac").unwrap();
        assert!(s.contains(Phase::A) && !s.contains(Phase::B) && s.contains(Phase::C));
        assert_eq!(s.to_string(), "ac");
        assert!(s.is_subset(PhaseSet::ABC));
        assert!(!PhaseSet::ABC.is_subset(s));
        assert!(PhaseSet::parse("aa").is_err());
        assert!(PhaseSet::parse("ad").is_err());
    }

    #[test]
    fn reference_phasors_are_120_degrees_apart() {
        let a = Phase::A.reference_phasor();
        let b = Phase::B.reference_phasor();
        let c = Phase::C.reference_phasor();
        assert!((a + b + c).norm() < 1e-12);
        assert!((b / a - Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI / 3.0)).norm() < 1e-12);
    }
}
