//! One pricing interval: dispatch → broadcast → responses → evaluation.
//!
//! The realised state is always evaluated through the same linear model the
//! operator dispatched with.

use serde::Serialize;
use thiserror::Error;

use crate::dso::{
    assemble_dispatch_qp, extract_dlmp, fixed_demand, solve_dispatch, DispatchResult, Participants,
    PriceSignal, ScenarioLimits,
};
use crate::netmodel::{imbalance_index_from_u, FlowState, LinearFlowModel, NetworkCase, Phase};
use crate::prosumer::{respond, Response};
use crate::Result;

/// Per-unit tolerance on dispatch/response agreement.
pub const EQUIVALENCE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("index mismatch: {0}")]
    IndexMismatch(String),
    #[error("tariff {0} $/MWh must be finite and non-negative")]
    InvalidTariff(f64),
}

impl MarketError {
    pub fn kind(&self) -> &'static str {
        match self {
            MarketError::IndexMismatch(_) => "index-mismatch",
            MarketError::InvalidTariff(_) => "invalid-tariff",
        }
    }
}

/// One prosumer's answer to the broadcast, with its DG if it owns one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentResponse {
    pub prosumer: usize,
    pub dg: Option<usize>,
    pub bus: u32,
    pub phase: Phase,
    /// Prices the agent saw.
    pub pi_p: f64,
    pub pi_q: f64,
    pub response: Response,
}

/// `|response − dispatch|` per agent in p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deviation {
    pub p_d: f64,
    pub p_g: f64,
    /// `None` when the reactive price was zero and `q_g` is not compared.
    pub q_g: Option<f64>,
}

impl Deviation {
    pub fn max(&self) -> f64 {
        self.p_d.max(self.p_g).max(self.q_g.unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BusImbalance {
    pub bus: u32,
    pub delta: f64,
}

/// Positive exceedances of each monitored quantity (zero where within limits).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violations {
    /// Per branch-phase (MW).
    pub branch_mw: Vec<f64>,
    /// Per node-phase, voltage magnitude (p.u.).
    pub voltage_pu: Vec<f64>,
    /// Per three-phase bus, `δ − δ̄`.
    pub imbalance: Vec<f64>,
    /// Exact imbalance index at each three-phase bus.
    pub bus_imbalance: Vec<BusImbalance>,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

impl Violations {
    pub fn max_branch(&self) -> f64 {
        max_of(&self.branch_mw)
    }

    pub fn max_voltage(&self) -> f64 {
        max_of(&self.voltage_pu)
    }

    pub fn max_imbalance(&self) -> f64 {
        max_of(&self.imbalance)
    }

    pub fn is_clear(&self) -> bool {
        self.max_branch() == 0.0 && self.max_voltage() == 0.0 && self.max_imbalance() == 0.0
    }
}

/// Pricing mode of a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Tariff {
    Dlmp,
    Flat { price: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub tariff: Tariff,
    pub limits: ScenarioLimits,
    /// Absent for the flat-tariff baseline.
    pub dispatch: Option<DispatchResult>,
    pub prices: PriceSignal,
    pub responses: Vec<AgentResponse>,
    /// Per agent; empty for the flat-tariff baseline.
    pub equivalence: Vec<Deviation>,
    pub realized_flow: FlowState,
    pub violations: Violations,
}

impl CycleReport {
    pub fn max_deviation(&self) -> f64 {
        self.equivalence.iter().map(Deviation::max).fold(0.0, f64::max)
    }
}

/// Solves the dispatch, broadcasts its prices and evaluates the responses.
pub fn run_dispatch_cycle(
    case: &NetworkCase,
    model: &LinearFlowModel,
    participants: &Participants,
    limits: &ScenarioLimits,
) -> Result<CycleReport> {
    run_dispatch_cycle_with_truth(case, model, participants, participants, limits)
}

/// Like [`run_dispatch_cycle`], but the operator dispatches on `forecast`
/// while the agents respond (and the network is loaded) with `truth`.
/// Both must describe the same agents in the same order.
pub fn run_dispatch_cycle_with_truth(
    case: &NetworkCase,
    model: &LinearFlowModel,
    forecast: &Participants,
    truth: &Participants,
    limits: &ScenarioLimits,
) -> Result<CycleReport> {
    same_agents(forecast, truth)?;
    let qp = assemble_dispatch_qp(case, model, forecast, limits)?;
    let dispatch = solve_dispatch(&qp, model)?;
    let prices = extract_dlmp(&qp, model, &dispatch.qp_solution)?;
    let s = case.s_base;

    let q_ref: Vec<Option<f64>> = truth
        .owned_dg()
        .iter()
        .map(|g| g.map(|g| dispatch.q_g[g] * s))
        .collect();
    let (responses, realized_flow, violations) = evaluate_responses(case, model, truth, limits, &prices, &q_ref)?;

    let equivalence = responses
        .iter()
        .map(|a| {
            let r = &a.response;
            let dg_dev = |v: f64, g: Option<usize>, dispatched: &[f64]| {
                g.map_or(v.abs(), |g| (v - dispatched[g] * s).abs()) / s
            };
            Deviation {
                p_d: (r.p_d - dispatch.p_d[a.prosumer] * s).abs() / s,
                p_g: dg_dev(r.p_g, a.dg, &dispatch.p_g),
                q_g: (!r.q_indifferent).then(|| dg_dev(r.q_g, a.dg, &dispatch.q_g)),
            }
        })
        .collect();

    Ok(CycleReport {
        tariff: Tariff::Dlmp,
        limits: limits.clone(),
        dispatch: Some(dispatch),
        prices,
        responses,
        equivalence,
        realized_flow,
        violations,
    })
}

/// Every agent faces `(tariff, 0)`; nothing is dispatched.
pub fn flat_tariff_cycle(
    case: &NetworkCase,
    model: &LinearFlowModel,
    participants: &Participants,
    limits: &ScenarioLimits,
    tariff: f64,
) -> Result<CycleReport> {
    if !(tariff.is_finite() && tariff >= 0.0) {
        return Err(MarketError::InvalidTariff(tariff).into());
    }
    participants.validate(case)?;
    let prices = PriceSignal::flat(model, tariff);
    let no_ref = vec![None; participants.prosumers.len()];
    let (responses, realized_flow, violations) =
        evaluate_responses(case, model, participants, limits, &prices, &no_ref)?;
    Ok(CycleReport {
        tariff: Tariff::Flat { price: tariff },
        limits: limits.clone(),
        dispatch: None,
        prices,
        responses,
        equivalence: Vec::new(),
        realized_flow,
        violations,
    })
}

/// Broadcasts `prices` to the agents and evaluates the network they produce.
/// `q_ref[k]` is the reactive output prosumer `k`'s DG holds at a zero
/// reactive price.
pub fn evaluate_responses(
    case: &NetworkCase,
    model: &LinearFlowModel,
    participants: &Participants,
    limits: &ScenarioLimits,
    prices: &PriceSignal,
    q_ref: &[Option<f64>],
) -> Result<(Vec<AgentResponse>, FlowState, Violations)> {
    if q_ref.len() != participants.prosumers.len() {
        return Err(MarketError::IndexMismatch(format!(
            "{} reference outputs for {} prosumers",
            q_ref.len(),
            participants.prosumers.len()
        ))
        .into());
    }
    let responses = collect_responses(participants, prices, q_ref)?;
    let flow = realized_flow(case, model, participants, &responses)?;
    let v = violations(case, model, limits, &flow)?;
    Ok((responses, flow, v))
}

fn same_agents(a: &Participants, b: &Participants) -> std::result::Result<(), MarketError> {
    let key_p = |p: &Participants| p.prosumers.iter().map(|x| (x.bus, x.phase)).collect::<Vec<_>>();
    let key_g = |p: &Participants| p.dgs.iter().map(|x| (x.bus, x.phase)).collect::<Vec<_>>();
    if key_p(a) != key_p(b) || key_g(a) != key_g(b) {
        return Err(MarketError::IndexMismatch(
            "forecast and true participants describe different agents".into(),
        ));
    }
    Ok(())
}

fn collect_responses(
    participants: &Participants,
    prices: &PriceSignal,
    q_ref: &[Option<f64>],
) -> Result<Vec<AgentResponse>> {
    let owned = participants.owned_dg();
    let mut out = Vec::with_capacity(participants.prosumers.len());
    for (k, pr) in participants.prosumers.iter().enumerate() {
        let (pi_p, pi_q) = prices.at(pr.bus, pr.phase).ok_or_else(|| {
            MarketError::IndexMismatch(format!("no price for bus {} phase {}", pr.bus, pr.phase))
        })?;
        let dg = owned[k].map(|g| &participants.dgs[g]);
        out.push(AgentResponse {
            prosumer: k,
            dg: owned[k],
            bus: pr.bus,
            phase: pr.phase,
            pi_p,
            pi_q,
            response: respond(pr, dg, pi_p, pi_q, q_ref[k]),
        });
    }
    Ok(out)
}

/// Linear-model flow with the agents at their responses and inelastic demand fixed.
pub fn realized_flow(
    case: &NetworkCase,
    model: &LinearFlowModel,
    participants: &Participants,
    responses: &[AgentResponse],
) -> Result<FlowState> {
    let s = case.s_base;
    let (fixed_p, fixed_q) = fixed_demand(case, model, participants);
    let mut p: Vec<f64> = fixed_p.iter().map(|v| -v).collect();
    let mut q: Vec<f64> = fixed_q.iter().map(|v| -v).collect();
    for a in responses {
        let bus = case
            .bus_index(a.bus)
            .ok_or_else(|| MarketError::IndexMismatch(format!("unknown bus {}", a.bus)))?;
        let j = model
            .position(bus, a.phase)
            .ok_or_else(|| MarketError::IndexMismatch(format!("bus {} has no phase {}", a.bus, a.phase)))?;
        p[j] += (a.response.p_g - a.response.p_d) / s;
        q[j] += a.response.q_g / s;
    }
    Ok(model.evaluate_injection(&p, &q)?)
}

/// Exceedances of a flow state against the limits.
pub fn violations(
    case: &NetworkCase,
    model: &LinearFlowModel,
    limits: &ScenarioLimits,
    flow: &FlowState,
) -> Result<Violations> {
    let s = case.s_base;
    let bounds = limits.branch_bounds(case, model)?;
    let branch_mw = flow
        .p_b
        .iter()
        .zip(&bounds)
        .map(|(p, (lo, hi))| {
            let p = p * s;
            (p - hi).max(lo - p).max(0.0)
        })
        .collect();
    let (v_lo, v_hi) = (limits.u_lo.max(0.0).sqrt(), limits.u_hi.sqrt());
    let voltage_pu = flow
        .voltage_magnitudes()
        .iter()
        .map(|v| (v - v_hi).max(v_lo - v).max(0.0))
        .collect();

    let mut imbalance = Vec::new();
    let mut bus_imbalance = Vec::new();
    for (b, bus) in case.buses.iter().enumerate() {
        let u = Phase::ALL.map(|p| model.position(b, p).map(|j| flow.u[j]));
        if let Some(delta) = imbalance_index_from_u(u).value() {
            bus_imbalance.push(BusImbalance { bus: bus.id, delta });
            imbalance.push(limits.delta_max.map_or(0.0, |d| (delta - d).max(0.0)));
        }
    }
    Ok(Violations {
        branch_mw,
        voltage_pu,
        imbalance,
        bus_imbalance,
    })
}

/// Payments and welfare for one interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settlement {
    /// Per agent ($, positive = the agent pays).
    pub payments: Vec<f64>,
    /// `Σ U − Σ C − π_LMP · root supply` ($).
    pub welfare: f64,
}

/// Charges `pi_p·p_d − pi_p·p_g − pi_q·q_g` per agent at the prices in `prices`.
pub fn settle(
    prices: &PriceSignal,
    participants: &Participants,
    responses: &[AgentResponse],
    pi_lmp: f64,
    root_supply_mw: f64,
) -> std::result::Result<Settlement, MarketError> {
    if responses.len() != participants.prosumers.len() {
        return Err(MarketError::IndexMismatch(format!(
            "{} responses for {} prosumers",
            responses.len(),
            participants.prosumers.len()
        )));
    }
    let mut payments = Vec::with_capacity(responses.len());
    let mut welfare = -pi_lmp * root_supply_mw;
    for a in responses {
        let pr = participants
            .prosumers
            .get(a.prosumer)
            .filter(|p| p.bus == a.bus && p.phase == a.phase)
            .ok_or_else(|| MarketError::IndexMismatch(format!("response for unknown agent {}", a.prosumer)))?;
        let (pi_p, pi_q) = prices
            .at(a.bus, a.phase)
            .ok_or_else(|| MarketError::IndexMismatch(format!("no price for bus {} phase {}", a.bus, a.phase)))?;
        let r = &a.response;
        payments.push(pi_p * r.p_d - pi_p * r.p_g - pi_q * r.q_g);
        welfare += pr.utility(r.p_d);
        if let Some(g) = a.dg {
            let dg = participants
                .dgs
                .get(g)
                .ok_or_else(|| MarketError::IndexMismatch(format!("unknown dg {g}")))?;
            welfare -= dg.cost(r.p_g);
        }
    }
    Ok(Settlement { payments, welfare })
}
