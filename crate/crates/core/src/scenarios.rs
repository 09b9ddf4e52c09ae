//! Scenario presets and the Monte Carlo uncertainty study.
//!
//! In a Monte Carlo trial the operator prices the interval once on its
//! forecast (the nominal participant data); each agent then responds to those
//! prices with its own perturbed "true" specs, and the network is loaded
//! with the true responses. The flat-tariff baseline uses the same truths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dso::{
    assemble_dispatch_qp, extract_dlmp, solve_dispatch, BranchLimit, Participants, PriceSignal, ScenarioLimits,
};
use crate::market::{evaluate_responses, Violations};
use crate::netmodel::{LinearFlowModel, NetworkCase};
use crate::Result;

/// Root price used by every preset ($/MWh).
pub const DEFAULT_PI_LMP: f64 = 30.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario '{0}' (expected A1, B1, C1, D1 or D2)")]
    UnknownPreset(String),
    #[error("scenario {scenario} refers to unknown DG '{dg}'")]
    UnknownDg { scenario: String, dg: String },
    #[error("invalid perturbation model: {0}")]
    InvalidPerturbation(String),
    #[error("scenario file {path}: {reason}")]
    InvalidFile { path: String, reason: String },
}

impl ScenarioError {
    pub fn kind(&self) -> &'static str {
        match self {
            ScenarioError::UnknownPreset(_) => "unknown-scenario",
            ScenarioError::UnknownDg { .. } => "unknown-dg",
            ScenarioError::InvalidPerturbation(_) => "invalid-perturbation",
            ScenarioError::InvalidFile { .. } => "invalid-scenario-file",
        }
    }
}

/// Replacement reactive bounds for every unit of a named DG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactiveOverride {
    pub dg: String,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub limits: ScenarioLimits,
    #[serde(default)]
    pub reactive: Vec<ReactiveOverride>,
}

impl ScenarioConfig {
    /// Participants with this scenario's reactive capabilities applied.
    pub fn apply(&self, participants: &Participants) -> std::result::Result<Participants, ScenarioError> {
        let mut out = participants.clone();
        for o in &self.reactive {
            let mut hit = false;
            for g in out.dgs.iter_mut().filter(|g| g.name == o.dg) {
                g.q_g_min = o.q_min_mvar;
                g.q_g_max = o.q_max_mvar;
                hit = true;
            }
            if !hit {
                return Err(ScenarioError::UnknownDg {
                    scenario: self.name.clone(),
                    dg: o.dg.clone(),
                });
            }
        }
        Ok(out)
    }

    /// The monitored quantity whose management the scenario demonstrates.
    pub fn focus(&self) -> Metric {
        match self.name.chars().next() {
            Some('B') => Metric::Branch,
            Some('C') => Metric::Voltage,
            Some('D') => Metric::Imbalance,
            _ => Metric::Branch,
        }
    }
}

pub fn preset(name: &str) -> std::result::Result<ScenarioConfig, ScenarioError> {
    let base = ScenarioLimits {
        u_lo: 0.95f64.powi(2),
        u_hi: 1.05f64.powi(2),
        branch_lo_mw: -3.0,
        branch_hi_mw: 3.0,
        branch_overrides: Vec::new(),
        delta_max: Some(0.03),
        pi_lmp: DEFAULT_PI_LMP,
    };
    let mut cfg = ScenarioConfig {
        name: name.to_ascii_uppercase(),
        limits: base,
        reactive: Vec::new(),
    };
    match cfg.name.as_str() {
        "A1" => {}
        "B1" => cfg.limits.branch_overrides.push(BranchLimit {
            from: 3,
            to: 4,
            phase: None,
            lo_mw: -0.5,
            hi_mw: 0.5,
        }),
        "C1" => cfg.limits = cfg.limits.with_voltage_band(0.97, 1.03),
        "D1" => cfg.limits.delta_max = Some(0.015),
        "D2" => {
            cfg.limits.delta_max = Some(0.015);
            cfg.reactive = ["DG2", "DG4", "DG6"]
                .iter()
                .map(|dg| ReactiveOverride {
                    dg: dg.to_string(),
                    q_min_mvar: 0.0,
                    q_max_mvar: 0.1,
                })
                .collect();
        }
        _ => return Err(ScenarioError::UnknownPreset(name.to_string())),
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationModel {
    /// Relative standard deviation of the load forecast error.
    pub sigma_forecast: f64,
    /// Relative standard deviation of the utility coefficients `c1`, `c2`.
    pub sigma_utility: f64,
    pub seed: u64,
    pub n_trials: usize,
}

impl PerturbationModel {
    pub fn validate(&self) -> std::result::Result<(), ScenarioError> {
        if !(self.sigma_forecast >= 0.0 && self.sigma_forecast.is_finite())
            || !(self.sigma_utility >= 0.0 && self.sigma_utility.is_finite())
        {
            return Err(ScenarioError::InvalidPerturbation(format!(
                "sigmas must be finite and ≥ 0 (forecast {}, utility {})",
                self.sigma_forecast, self.sigma_utility
            )));
        }
        if self.n_trials == 0 {
            return Err(ScenarioError::InvalidPerturbation("n_trials must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One trial's true participant data.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub participants: Participants,
    /// Utility draws rejected for breaking concavity.
    pub resamples: usize,
}

/// True specs for `trial`. Each prosumer draws a load factor `f ~ N(1, σ_f²)`
/// that scales its reactive demand, its demand bounds and its demand curve
/// (`c1 / f`), then independent `N(1, σ_u²)` factors on `c1` and `c2`.
///
/// Draws come from standard normals seeded by `(seed, trial)` alone, so runs
/// at different sigmas share their random numbers.
pub fn perturb(participants: &Participants, model: &PerturbationModel, trial: usize) -> Perturbed {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(trial as u64);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut out = participants.clone();
    let mut resamples = 0;
    for pr in &mut out.prosumers {
        let f = 1.0 + model.sigma_forecast * normal();
        pr.q_d *= f;
        pr.p_d_min *= f;
        pr.p_d_max *= f;
        if pr.p_d_min > pr.p_d_max {
            std::mem::swap(&mut pr.p_d_min, &mut pr.p_d_max);
        }
        if f != 0.0 {
            pr.c1 /= f;
        }
        let c1 = pr.c1;
        let mut k1 = 1.0 + model.sigma_utility * normal();
        while c1 * k1 > 0.0 {
            resamples += 1;
            k1 = 1.0 + model.sigma_utility * normal();
        }
        let k2 = 1.0 + model.sigma_utility * normal();
        pr.c1 = c1 * k1;
        pr.c2 *= k2;
    }
    Perturbed {
        participants: out,
        resamples,
    }
}

/// Monitored quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Branch,
    Voltage,
    Imbalance,
}

/// Mean over trials of the per-trial maximum exceedance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct OverLimit {
    pub branch_mw: f64,
    pub voltage_pu: f64,
    pub imbalance: f64,
}

impl OverLimit {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Branch => self.branch_mw,
            Metric::Voltage => self.voltage_pu,
            Metric::Imbalance => self.imbalance,
        }
    }

    fn of(v: &Violations) -> Self {
        OverLimit {
            branch_mw: v.max_branch(),
            voltage_pu: v.max_voltage(),
            imbalance: v.max_imbalance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloRow {
    pub sigma_forecast: f64,
    pub sigma_utility: f64,
    pub trials: usize,
    /// Trials whose evaluation failed; excluded from the averages.
    pub failed: usize,
    pub resamples: usize,
    pub dlmp: OverLimit,
    pub flat: OverLimit,
    /// Per-trial maxima under DLMP, in trial order (failed trials omitted).
    #[serde(skip)]
    pub dlmp_samples: Vec<OverLimit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub scenario: String,
    pub flat_tariff: f64,
    pub rows: Vec<MonteCarloRow>,
}

/// Prices the interval on the nominal data, then runs `model.n_trials`
/// perturbed trials under both DLMP and the flat tariff.
pub fn monte_carlo(
    case: &NetworkCase,
    network: &LinearFlowModel,
    participants: &Participants,
    config: &ScenarioConfig,
    model: &PerturbationModel,
) -> Result<MonteCarloRow> {
    model.validate()?;
    let forecast = config.apply(participants)?;
    let qp = assemble_dispatch_qp(case, network, &forecast, &config.limits)?;
    let dispatch = solve_dispatch(&qp, network)?;
    let prices = extract_dlmp(&qp, network, &dispatch.qp_solution)?;
    let q_ref: Vec<Option<f64>> = forecast
        .owned_dg()
        .iter()
        .map(|g| g.map(|g| dispatch.q_g[g] * case.s_base))
        .collect();
    let flat = PriceSignal::flat(network, config.limits.pi_lmp);
    let no_ref = vec![None; forecast.prosumers.len()];

    let outcomes: Vec<Option<(OverLimit, OverLimit, usize)>> = (0..model.n_trials)
        .into_par_iter()
        .map(|trial| {
            let truth = perturb(&forecast, model, trial);
            let run = |p: &PriceSignal, r: &[Option<f64>]| {
                evaluate_responses(case, network, &truth.participants, &config.limits, p, r)
                    .map(|(_, _, v)| OverLimit::of(&v))
                    .ok()
            };
            Some((run(&prices, &q_ref)?, run(&flat, &no_ref)?, truth.resamples))
        })
        .collect();

    let mut row = MonteCarloRow {
        sigma_forecast: model.sigma_forecast,
        sigma_utility: model.sigma_utility,
        trials: model.n_trials,
        failed: 0,
        resamples: 0,
        dlmp: OverLimit::default(),
        flat: OverLimit::default(),
        dlmp_samples: Vec::with_capacity(model.n_trials),
    };
    // Fixed-order reduction keeps the report bitwise reproducible.
    for outcome in outcomes {
        let Some((d, f, resamples)) = outcome else {
            row.failed += 1;
            continue;
        };
        row.resamples += resamples;
        for (acc, v) in [(&mut row.dlmp, d), (&mut row.flat, f)] {
            acc.branch_mw += v.branch_mw;
            acc.voltage_pu += v.voltage_pu;
            acc.imbalance += v.imbalance;
        }
        row.dlmp_samples.push(d);
    }
    let ok = (row.trials - row.failed).max(1) as f64;
    for acc in [&mut row.dlmp, &mut row.flat] {
        acc.branch_mw /= ok;
        acc.voltage_pu /= ok;
        acc.imbalance /= ok;
    }
    Ok(row)
}

/// One row per utility sigma, sharing random numbers across rows.
pub fn monte_carlo_table(
    case: &NetworkCase,
    network: &LinearFlowModel,
    participants: &Participants,
    config: &ScenarioConfig,
    sigma_forecast: f64,
    sigmas_utility: &[f64],
    seed: u64,
    n_trials: usize,
) -> Result<MonteCarloReport> {
    let rows = sigmas_utility
        .iter()
        .map(|&sigma_utility| {
            let model = PerturbationModel {
                sigma_forecast,
                sigma_utility,
                seed,
                n_trials,
            };
            monte_carlo(case, network, participants, config, &model)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloReport {
        scenario: config.name.clone(),
        flat_tariff: config.limits.pi_lmp,
        rows,
    })
}

/// Least-squares slope of the per-trial DLMP exceedance against sigma, with
/// the one-sided p-value for "the averages decrease with sigma".
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendTest {
    pub slope: f64,
    pub t_statistic: f64,
    pub p_value: f64,
}

impl TrendTest {
    /// Whether a decreasing trend is significant at level `alpha`.
    pub fn rejects_non_decreasing(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

pub fn trend_test(report: &MonteCarloReport, metric: Metric) -> TrendTest {
    let points: Vec<(f64, f64)> = report
        .rows
        .iter()
        .flat_map(|r| r.dlmp_samples.iter().map(move |s| (r.sigma_utility, s.get(metric))))
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if points.len() < 3 || sxx == 0.0 {
        return TrendTest {
            slope: 0.0,
            t_statistic: 0.0,
            p_value: 1.0,
        };
    }
    let slope = sxy / sxx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    let df = n - 2.0;
    let se = (sse / df / sxx).sqrt();
    if se == 0.0 {
        let p_value = if slope < 0.0 { 0.0 } else { 1.0 };
        return TrendTest {
            slope,
            t_statistic: if slope == 0.0 { 0.0 } else { slope.signum() * f64::INFINITY },
            p_value,
        };
    }
    let t = slope / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    TrendTest {
        slope,
        t_statistic: t,
        p_value: dist.cdf(t),
    }
}
