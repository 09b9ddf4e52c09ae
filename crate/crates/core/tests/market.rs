mod common;

use common::toy::toy;
use dlmp_core::dso::{parse_participants, ScenarioLimits};
use dlmp_core::market::{
    flat_tariff_cycle, run_dispatch_cycle, run_dispatch_cycle_with_truth, settle, EQUIVALENCE_TOL,
};
use dlmp_core::netmodel::{build_linear_model, parse_case, Phase};
use dlmp_core::scenarios::{preset, Metric};
use proptest::prelude::*;

#[test]
fn cycle_is_idempotent() {
    let t = toy(1.0);
    let limits = ScenarioLimits::unlimited(30.0).with_voltage_band(0.95, 1.05);
    let a = run_dispatch_cycle(&t.case, &t.model, &t.participants, &limits).unwrap();
    let b = run_dispatch_cycle(&t.case, &t.model, &t.participants, &limits).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn settlement_welfare_matches_dispatch_objective() {
    let t = toy(1.0);
    let limits = ScenarioLimits::unlimited(30.0);
    let r = run_dispatch_cycle(&t.case, &t.model, &t.participants, &limits).unwrap();
    let supply: f64 = r.realized_flow.p_root.iter().sum::<f64>() * t.case.s_base;
    let s = settle(&r.prices, &t.participants, &r.responses, 30.0, supply).unwrap();
    let obj = r.dispatch.as_ref().unwrap().objective;
    assert!((s.welfare - obj).abs() <= 1e-6 * (1.0 + obj.abs()), "{} vs {obj}", s.welfare);
    for (pay, a) in s.payments.iter().zip(&r.responses) {
        let expect = a.pi_p * (a.response.p_d - a.response.p_g) - a.pi_q * a.response.q_g;
        assert!((pay - expect).abs() < 1e-12);
    }
}

#[test]
fn settle_rejects_mismatched_responses() {
    let t = toy(1.0);
    let r = run_dispatch_cycle(&t.case, &t.model, &t.participants, &ScenarioLimits::unlimited(30.0)).unwrap();
    let err = settle(&r.prices, &t.participants, &r.responses[1..], 30.0, 0.0).unwrap_err();
    assert_eq!(err.kind(), "index-mismatch");
}

#[test]
fn empty_market_dispatches_only_the_root() {
    let t = toy(1.0);
    let none = parse_participants(r#"{"prosumers": [], "dgs": []}"#).unwrap();
    let r = run_dispatch_cycle(&t.case, &t.model, &none, &ScenarioLimits::unlimited(30.0)).unwrap();
    assert!(r.responses.is_empty());
    assert_eq!(r.max_deviation(), 0.0);
    let nominal: f64 = t.case.buses.iter().flat_map(|b| b.nominal_load).map(|s| s.re).sum();
    let supply: f64 = r.realized_flow.p_root.iter().sum();
    assert!(supply > nominal, "losses on top of {nominal}: {supply}");
}

#[test]
fn flat_tariff_treats_every_agent_alike() {
    let text = r#"{"s_base_mva": 1.0, "v_base_kv": 12.66, "root_bus": 1,
        "buses": [{"id": 1, "phases": "abc"},
                  {"id": 2, "phases": "abc", "load_mw": [0.05, 0.05, 0.05]},
                  {"id": 3, "phases": "abc", "load_mw": [0.05, 0.05, 0.05]}],
        "branches": [
          {"from": 1, "to": 2, "r_ohm": [[1,0.2,0.2],[0.2,1,0.2],[0.2,0.2,1]], "x_ohm": [[1,0.2,0.2],[0.2,1,0.2],[0.2,0.2,1]]},
          {"from": 2, "to": 3, "r_ohm": [[1,0.2,0.2],[0.2,1,0.2],[0.2,0.2,1]], "x_ohm": [[1,0.2,0.2],[0.2,1,0.2],[0.2,0.2,1]]}]}"#;
    let case = parse_case(text).unwrap();
    let model = build_linear_model(&case).unwrap();
    let agent = |bus: u32, phase: &str| {
        format!(
            r#"{{"bus": {bus}, "phase": "{phase}", "c1": -200, "c2": 50, "c3": 0,
                "p_d_min_mw": 0, "p_d_max_mw": 0.2, "q_d_mvar": 0.01}}"#
        )
    };
    let parts = parse_participants(&format!(
        r#"{{"prosumers": [{}, {}, {}], "dgs": []}}"#,
        agent(2, "a"),
        agent(3, "c"),
        agent(2, "b")
    ))
    .unwrap();
    let r = flat_tariff_cycle(&case, &model, &parts, &ScenarioLimits::unlimited(30.0), 30.0).unwrap();
    assert!(r.prices.pi_p.iter().all(|&p| p == 30.0));
    assert!(r.prices.pi_q.iter().all(|&q| q == 0.0));
    assert!(r.dispatch.is_none() && r.equivalence.is_empty());
    let p = r.responses[0].response.p_d;
    // Marginal utility 50 − 400·p equals 30 at p = 0.05.
    assert!((p - 0.05).abs() < 1e-12);
    assert!(r.responses.iter().all(|a| a.response.p_d == p));
    // Same agents under DLMP see different prices because of losses
    // (linearized around the nominal loads).
    let d = run_dispatch_cycle(&case, &model, &parts, &ScenarioLimits::unlimited(30.0)).unwrap();
    assert!(d.prices.at(3, Phase::C).unwrap().0 > d.prices.at(2, Phase::A).unwrap().0);
}

#[test]
fn invalid_flat_tariff_is_rejected() {
    let t = toy(1.0);
    let err = flat_tariff_cycle(&t.case, &t.model, &t.participants, &ScenarioLimits::unlimited(30.0), f64::NAN)
        .unwrap_err();
    assert_eq!(err.kind(), "invalid-tariff");
}

#[test]
fn forecast_and_truth_must_describe_the_same_agents() {
    let t = toy(1.0);
    let mut other = t.participants.clone();
    other.prosumers.swap(0, 1);
    let err =
        run_dispatch_cycle_with_truth(&t.case, &t.model, &t.participants, &other, &ScenarioLimits::unlimited(30.0))
            .unwrap_err();
    assert_eq!(err.module(), "market");
}

#[test]
fn dlmp_removes_the_violation_the_flat_tariff_causes() {
    let text = dlmp_core::IEEE33_CASE_JSON;
    let case = parse_case(text).unwrap();
    let model = build_linear_model(&case).unwrap();
    let parts = parse_participants(text).unwrap();
    for (name, metric) in [("B1", Metric::Branch), ("C1", Metric::Voltage), ("D1", Metric::Imbalance)] {
        let cfg = preset(name).unwrap();
        assert_eq!(cfg.focus(), metric);
        let d = run_dispatch_cycle(&case, &model, &parts, &cfg.limits).unwrap();
        let f = flat_tariff_cycle(&case, &model, &parts, &cfg.limits, 30.0).unwrap();
        let pick = |v: &dlmp_core::market::Violations| match metric {
            Metric::Branch => v.max_branch(),
            Metric::Voltage => v.max_voltage(),
            Metric::Imbalance => v.max_imbalance(),
        };
        assert!(pick(&f.violations) > pick(&d.violations) + 1e-3, "{name}");
        assert!(d.max_deviation() <= EQUIVALENCE_TOL);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Agents facing the dispatch prices choose the dispatch itself.
    #[test]
    fn responses_reproduce_the_dispatch(
        scale in prop::collection::vec(0.6f64..1.6, 6),
        dg_cost in 5.0f64..40.0,
        v_lo in 0.93f64..0.97,
    ) {
        let mut t = toy(1.0);
        for (p, k) in t.participants.prosumers.iter_mut().zip(&scale) {
            p.c1 *= k;
        }
        t.participants.dgs[0].c5 = dg_cost;
        let limits = ScenarioLimits::unlimited(30.0).with_voltage_band(v_lo, 1.05);
        if let Ok(r) = run_dispatch_cycle(&t.case, &t.model, &t.participants, &limits) {
            prop_assert!(r.max_deviation() <= EQUIVALENCE_TOL, "{}", r.max_deviation());
            prop_assert!(r.violations.max_voltage() <= 1e-6);
        }
    }
}
