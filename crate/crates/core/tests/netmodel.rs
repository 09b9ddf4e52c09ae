mod common;

use common::sweep;
use dlmp_core::netmodel::{
    build_linear_model, imbalance_index, load_case, parse_case, LinearFlowModel, NetworkCase, Phase,
};
use num_complex::Complex64;
use proptest::prelude::*;

fn bundled() -> (NetworkCase, LinearFlowModel) {
    let case = parse_case(dlmp_core::IEEE33_CASE_JSON).unwrap();
    let model = build_linear_model(&case).unwrap();
    (case, model)
}

/// Largest |u_linear − u_sweep| with every bus at `scale` × nominal load.
fn fidelity(case: &NetworkCase, model: &LinearFlowModel, scale: f64) -> f64 {
    let loads: Vec<[Complex64; 3]> = case.buses.iter().map(|b| b.nominal_load.map(|s| s * scale)).collect();
    let exact = sweep::solve(case, &loads);
    assert!(exact.iterations < 500, "sweep did not converge");
    let (p, q): (Vec<f64>, Vec<f64>) = model
        .node_phase_index()
        .iter()
        .map(|&(b, ph)| {
            let s = loads[b][ph.index()];
            (-s.re, -s.im)
        })
        .unzip();
    let flow = model.evaluate_injection(&p, &q).unwrap();
    model
        .node_phase_index()
        .iter()
        .enumerate()
        .map(|(j, &(b, ph))| (flow.u[j] - exact.u[b][ph.index()]).abs())
        .fold(0.0, f64::max)
}

fn coupled_two_bus(load: [(f64, f64); 3]) -> NetworkCase {
    let text = format!(
        r#"{{"s_base_mva": 1.0, "v_base_kv": 12.66, "root_bus": 1,
           "buses": [{{"id": 1, "phases": "abc"}},
                     {{"id": 2, "phases": "abc", "load_mw": [{}, {}, {}], "load_mvar": [{}, {}, {}]}}],
           "branches": [{{"from": 1, "to": 2,
                         "r_ohm": [[0.9, 0.3, 0.3], [0.3, 0.9, 0.3], [0.3, 0.3, 0.9]],
                         "x_ohm": [[1.2, 0.5, 0.4], [0.5, 1.2, 0.5], [0.4, 0.5, 1.2]]}}]}}"#,
        load[0].0, load[1].0, load[2].0, load[0].1, load[1].1, load[2].1
    );
    parse_case(&text).unwrap()
}

#[test]
fn two_bus_matches_nonlinear_flow() {
    let case = coupled_two_bus([(0.3, 0.1), (0.5, 0.2), (0.8, 0.3)]);
    let model = build_linear_model(&case).unwrap();
    let err = fidelity(&case, &model, 1.0);
    assert!(err <= 1e-3, "two-bus fidelity {err:.3e}");
}

#[test]
fn bundled_case_matches_nonlinear_flow_at_nominal_load() {
    let (case, model) = bundled();
    let err = fidelity(&case, &model, 1.0);
    assert!(err <= 5e-3, "33-bus fidelity {err:.3e}");
}

#[test]
fn fidelity_degrades_gracefully_off_nominal() {
    let (case, model) = bundled();
    let at = |s| fidelity(&case, &model, s);
    let nominal = at(1.0);
    // Linearized around nominal: light load is still close, heavy load worse.
    assert!(at(0.5) < 1e-2);
    assert!(at(1.3) > nominal);
}

#[test]
fn zero_impedance_feeder_is_flat() {
    let text = r#"{"s_base_mva": 1.0, "v_base_kv": 12.66, "root_bus": 1,
        "buses": [{"id": 1, "phases": "abc"}, {"id": 2, "phases": "abc", "load_mw": [0.2, 0.1, 0.3]}],
        "branches": [{"from": 1, "to": 2, "r_ohm": [[0,0,0],[0,0,0],[0,0,0]], "x_ohm": [[0,0,0],[0,0,0],[0,0,0]]}]}"#;
    let case = parse_case(text).unwrap();
    let model = build_linear_model(&case).unwrap();
    let n = model.num_node_phases();
    let flow = model.evaluate_injection(&vec![-0.2; n], &vec![-0.1; n]).unwrap();
    assert!(flow.u.iter().all(|u| (u - 1.0).abs() < 1e-15));
}

#[test]
fn non_radial_case_file_is_rejected() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/cycle3.json");
    let err = load_case(path).unwrap_err();
    assert_eq!(err.kind(), "non-radial");
    assert!(err.to_string().contains("non-radial topology"));
}

#[test]
fn lateral_phases_follow_the_case() {
    let text = r#"{"s_base_mva": 1.0, "v_base_kv": 12.66, "root_bus": 1,
        "buses": [{"id": 1, "phases": "abc"}, {"id": 2, "phases": "abc"}, {"id": 3, "phases": "b", "load_mw": [0, 0.1, 0]}],
        "branches": [
          {"from": 1, "to": 2, "r_ohm": [[0.5,0.1,0.1],[0.1,0.5,0.1],[0.1,0.1,0.5]], "x_ohm": [[0.5,0.1,0.1],[0.1,0.5,0.1],[0.1,0.1,0.5]]},
          {"from": 2, "to": 3, "r_ohm": [[0,0,0],[0,0.5,0],[0,0,0]], "x_ohm": [[0,0,0],[0,0.5,0],[0,0,0]]}]}"#;
    let case = parse_case(text).unwrap();
    let model = build_linear_model(&case).unwrap();
    assert_eq!(model.num_node_phases(), 7);
    assert_eq!(model.num_branch_phases(), 4);
    assert!(model.position(2, Phase::A).is_none());
    assert!(model.position(2, Phase::B).is_some());
    let err = fidelity(&case, &model, 1.0);
    assert!(err <= 1e-3, "{err:.3e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flow_map_is_affine(
        a in prop::collection::vec(-0.05f64..0.05, 196),
        b in prop::collection::vec(-0.05f64..0.05, 196),
    ) {
        let (_, model) = bundled();
        let n = model.num_node_phases();
        let zero = model.evaluate_injection(&vec![0.0; n], &vec![0.0; n]).unwrap();
        let f = |p: &[f64], q: &[f64]| model.evaluate_injection(p, q).unwrap();
        let (pa, qa) = a.split_at(n);
        let (pb, qb) = b.split_at(n);
        let sum_p: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x + y).collect();
        let sum_q: Vec<f64> = qa.iter().zip(qb).map(|(x, y)| x + y).collect();
        let (fa, fb, fs) = (f(pa, qa), f(pb, qb), f(&sum_p, &sum_q));
        for j in 0..n {
            let lhs = fs.u[j] - zero.u[j];
            let rhs = (fa.u[j] - zero.u[j]) + (fb.u[j] - zero.u[j]);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
        for k in 0..model.num_branch_phases() {
            let lhs = fs.p_b[k] - zero.p_b[k];
            let rhs = (fa.p_b[k] - zero.p_b[k]) + (fb.p_b[k] - zero.p_b[k]);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn root_supplies_injection_plus_losses(
        p in prop::collection::vec(-0.05f64..0.02, 98),
    ) {
        let (_, model) = bundled();
        let q = vec![0.0; p.len()];
        let flow = model.evaluate_injection(&p, &q).unwrap();
        let demand: f64 = -p.iter().sum::<f64>();
        let supply: f64 = flow.p_root.iter().sum();
        // Root columns carry no injection; the network only adds losses.
        prop_assert!(supply >= demand - 1e-9 - p[..3].iter().map(|v| v.abs()).sum::<f64>());
    }

    #[test]
    fn imbalance_index_is_scale_and_order_invariant(
        v in prop::array::uniform3(0.85f64..1.15),
        k in 0.5f64..2.0,
    ) {
        let d = imbalance_index(v.map(Some)).value().unwrap();
        let scaled = imbalance_index(v.map(|x| Some(x * k))).value().unwrap();
        let rotated = imbalance_index([Some(v[2]), Some(v[0]), Some(v[1])]).value().unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - scaled).abs() < 1e-12);
        prop_assert!((d - rotated).abs() < 1e-15);
        let mean = (v[0] + v[1] + v[2]) / 3.0;
        let expect = v.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max) / mean;
        prop_assert!((d - expect).abs() < 1e-14);
    }
}

#[test]
fn balanced_voltages_have_zero_imbalance() {
    assert!(imbalance_index([Some(0.97); 3]).value().unwrap() < 1e-15);
    assert!(imbalance_index([Some(1.0), None, Some(1.0)]).value().is_none());
}
