//! Delimited tables for plotting and JSON reports.
//!
//! Every numeric column header carries its unit in brackets, e.g.
//! `p_dlmp[$/MWh]`; dimensionless columns use `[-]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::dso::{Participants, PriceSignal};
use crate::market::{settle, CycleReport};
use crate::netmodel::{LinearFlowModel, NetworkCase};
use crate::scenarios::MonteCarloReport;

fn num(v: f64) -> String {
    let s = format!("{v:.9}");
    // Tiny negatives would otherwise print as "-0.000000000".
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

/// Per node-phase P-DLMP and Q-DLMP, with an optional flat-tariff column.
pub fn price_table(prices: &PriceSignal, flat: Option<f64>) -> String {
    let mut out = String::from("bus,phase,p_dlmp[$/MWh],q_dlmp[$/MVarh]");
    if flat.is_some() {
        out.push_str(",flat_tariff[$/MWh]");
    }
    out.push('\n');
    for (j, (bus, phase)) in prices.node_phases.iter().enumerate() {
        let _ = write!(out, "{bus},{phase},{},{}", num(prices.pi_p[j]), num(prices.pi_q[j]));
        if let Some(f) = flat {
            let _ = write!(out, ",{}", num(f));
        }
        out.push('\n');
    }
    out
}

fn label_of(report: &CycleReport) -> &'static str {
    match report.tariff {
        crate::market::Tariff::Dlmp => "dlmp",
        crate::market::Tariff::Flat { .. } => "flat",
    }
}

/// Voltage magnitude per node-phase for each report.
pub fn voltage_table(model: &LinearFlowModel, reports: &[&CycleReport]) -> String {
    let mut out = String::from("bus,phase");
    for r in reports {
        let _ = write!(out, ",v_{}[p.u.]", label_of(r));
    }
    if !reports.is_empty() {
        out.push_str(",v_min[p.u.],v_max[p.u.]");
    }
    out.push('\n');
    let mags: Vec<Vec<f64>> = reports.iter().map(|r| r.realized_flow.voltage_magnitudes()).collect();
    for (j, &(bus, phase)) in model.node_phase_index().iter().enumerate() {
        let _ = write!(out, "{},{phase}", model.bus_id(bus));
        for m in &mags {
            let _ = write!(out, ",{}", num(m[j]));
        }
        if let Some(r) = reports.first() {
            let _ = write!(
                out,
                ",{},{}",
                num(r.limits.u_lo.max(0.0).sqrt()),
                num(r.limits.u_hi.sqrt())
            );
        }
        out.push('\n');
    }
    out
}

/// Active flow per branch-phase for each report, with its limits.
pub fn branch_table(case: &NetworkCase, model: &LinearFlowModel, reports: &[&CycleReport]) -> String {
    let mut out = String::from("from,to,phase");
    for r in reports {
        let _ = write!(out, ",p_{}[MW]", label_of(r));
    }
    out.push_str(",limit_lo[MW],limit_hi[MW]\n");
    let bounds = reports
        .first()
        .and_then(|r| r.limits.branch_bounds(case, model).ok())
        .unwrap_or_else(|| vec![(f64::NEG_INFINITY, f64::INFINITY); model.num_branch_phases()]);
    for (row, &(k, phase)) in model.branch_phase_index().iter().enumerate() {
        let br = &case.branches[k];
        let _ = write!(out, "{},{},{phase}", case.buses[br.from].id, case.buses[br.to].id);
        for r in reports {
            let _ = write!(out, ",{}", num(r.realized_flow.p_b[row] * case.s_base));
        }
        let _ = writeln!(out, ",{},{}", num(bounds[row].0), num(bounds[row].1));
    }
    out
}

/// Exact imbalance index per three-phase bus for each report.
pub fn imbalance_table(reports: &[&CycleReport]) -> String {
    let mut out = String::from("bus");
    for r in reports {
        let _ = write!(out, ",delta_{}[-]", label_of(r));
    }
    out.push_str(",delta_max[-]\n");
    let Some(first) = reports.first() else {
        return out;
    };
    for (i, b) in first.violations.bus_imbalance.iter().enumerate() {
        let _ = write!(out, "{}", b.bus);
        for r in reports {
            let _ = write!(out, ",{}", num(r.violations.bus_imbalance[i].delta));
        }
        let limit = first.limits.delta_max.map_or(String::from("inf"), num);
        let _ = writeln!(out, ",{limit}");
    }
    out
}

/// One row per agent: quantities, prices and payment.
pub fn agent_table(case: &NetworkCase, participants: &Participants, report: &CycleReport) -> String {
    let mut out = String::from(
        "agent,bus,phase,dg,p_d[MW],p_g[MW],q_g[MVar],pi_p[$/MWh],pi_q[$/MVarh],payment[$]\n",
    );
    let supply: f64 = report.realized_flow.p_root.iter().sum::<f64>() * case.s_base;
    let payments = settle(&report.prices, participants, &report.responses, report.limits.pi_lmp, supply)
        .map(|s| s.payments)
        .unwrap_or_else(|_| vec![f64::NAN; report.responses.len()]);
    for (a, pay) in report.responses.iter().zip(payments) {
        let dg = a.dg.map(|g| participants.dgs[g].name.clone()).unwrap_or_default();
        let r = &a.response;
        let _ = writeln!(
            out,
            "{},{},{},{dg},{},{},{},{},{},{}",
            a.prosumer,
            a.bus,
            a.phase,
            num(r.p_d),
            num(r.p_g),
            num(r.q_g),
            num(a.pi_p),
            num(a.pi_q),
            num(pay)
        );
    }
    out
}

/// Monte Carlo summary, one row per sigma pair.
pub fn monte_carlo_table(report: &MonteCarloReport) -> String {
    let mut out = String::from(
        "scenario,sigma_forecast[-],sigma_utility[-],trials,failed,\
         dlmp_branch[MW],flat_branch[MW],dlmp_voltage[p.u.],flat_voltage[p.u.],\
         dlmp_imbalance[-],flat_imbalance[-]\n",
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            report.scenario,
            num(r.sigma_forecast),
            num(r.sigma_utility),
            r.trials,
            r.failed,
            num(r.dlmp.branch_mw),
            num(r.flat.branch_mw),
            num(r.dlmp.voltage_pu),
            num(r.flat.voltage_pu),
            num(r.dlmp.imbalance),
            num(r.flat.imbalance)
        );
    }
    out
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    /// Unit conventions of the payload.
    units: BTreeMap<&'static str, &'static str>,
    report: &'a T,
}

const UNITS: &[(&str, &str)] = &[
    ("flows, injections, dispatch", "p.u. on s_base"),
    ("u", "p.u.^2"),
    ("responses", "MW / MVar"),
    ("prices", "$/MWh, $/MVarh"),
    ("objective, welfare, surplus", "$"),
    ("violations.branch_mw", "MW"),
    ("violations.voltage_pu", "p.u."),
];

/// Pretty JSON with a unit legend.
pub fn to_json<T: Serialize>(report: &T) -> String {
    serde_json::to_string_pretty(&Envelope {
        units: UNITS.iter().copied().collect(),
        report,
    }).expect("reports serialise")
}
