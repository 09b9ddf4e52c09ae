//! A three-bus feeder (1 → 2 → 3, all abc) with one prosumer per
//! non-root node-phase and a DG at bus 3 phase a.

use dlmp_core::dso::{parse_participants, Participants};
use dlmp_core::netmodel::{build_linear_model, parse_case, LinearFlowModel, NetworkCase};

pub struct Toy {
    pub case: NetworkCase,
    pub model: LinearFlowModel,
    pub participants: Participants,
}

/// `z` scales the branch impedances (0 gives a lossless feeder).
pub fn toy(z: f64) -> Toy {
    let r = |v: f64| v * z;
    let mat = |d: f64, o: f64| format!("[[{d},{o},{o}],[{o},{d},{o}],[{o},{o},{d}]]");
    let case_json = format!(
        r#"{{"name": "toy3", "s_base_mva": 1.0, "v_base_kv": 12.66, "root_bus": 1,
           "buses": [{{"id": 1, "phases": "abc"}},
                     {{"id": 2, "phases": "abc", "load_mw": [0.05, 0.08, 0.11], "load_mvar": [0.02, 0.03, 0.04]}},
                     {{"id": 3, "phases": "abc", "load_mw": [0.06, 0.09, 0.14], "load_mvar": [0.02, 0.03, 0.05]}}],
           "branches": [{{"from": 1, "to": 2, "r_ohm": {}, "x_ohm": {}}},
                        {{"from": 2, "to": 3, "r_ohm": {}, "x_ohm": {}}}]}}"#,
        mat(r(2.0), r(0.6)),
        mat(r(3.0), r(1.0)),
        mat(r(2.5), r(0.8)),
        mat(r(3.5), r(1.1)),
    );
    let case = parse_case(&case_json).unwrap();
    let model = build_linear_model(&case).unwrap();
    let mut prosumers = Vec::new();
    for (bus, base) in [(2, [0.05, 0.08, 0.11]), (3, [0.06, 0.09, 0.14])] {
        for (k, phase) in ["a", "b", "c"].iter().enumerate() {
            let p_max = base[k] * 1.5;
            // Marginal utility 30 $/MWh at the nominal load, 45 at zero.
            let c2 = 45.0;
            let c1 = -(c2 - 30.0) / (2.0 * base[k]);
            prosumers.push(format!(
                r#"{{"bus": {bus}, "phase": "{phase}", "c1": {c1}, "c2": {c2}, "c3": 0.0,
                    "p_d_min_mw": 0.0, "p_d_max_mw": {p_max}, "q_d_mvar": {}}}"#,
                base[k] * 0.4
            ));
        }
    }
    let parts = format!(
        r#"{{"prosumers": [{}],
            "dgs": [{{"name": "G", "bus": 3, "phase": "a", "c4": 20.0, "c5": 10.0, "c6": 0.0,
                      "p_g_min_mw": 0.0, "p_g_max_mw": 0.1, "q_g_min_mvar": -0.05, "q_g_max_mvar": 0.05}}]}}"#,
        prosumers.join(",")
    );
    let participants = parse_participants(&parts).unwrap();
    participants.validate(&case).unwrap();
    Toy {
        case,
        model,
        participants,
    }
}
