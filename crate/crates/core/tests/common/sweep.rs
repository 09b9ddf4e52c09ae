//! Nonlinear three-phase power flow by backward/forward sweep.
//!
//! Wye-connected constant-power loads, slack at the root with magnitudes
//! `sqrt(u_ref)` and balanced 120° angles. Written from the circuit laws
//! directly; shares nothing with the linear model besides the case data.

use dlmp_core::netmodel::NetworkCase;
use num_complex::Complex64;

pub struct SweepResult {
    /// Squared magnitudes per bus and phase (0 for absent phases).
    pub u: Vec<[f64; 3]>,
    pub iterations: usize,
}

/// `s_load[bus][phase]` is the consumed complex power in p.u.
pub fn solve(case: &NetworkCase, s_load: &[[Complex64; 3]]) -> SweepResult {
    let nbus = case.buses.len();
    let zero = Complex64::new(0.0, 0.0);
    let angle = |k: usize| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI / 3.0 * k as f64);
    let slack: [Complex64; 3] = std::array::from_fn(|k| angle(k) * case.u_ref[k].sqrt());

    let mut v: Vec<[Complex64; 3]> = vec![slack; nbus];
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        // Backward: branch currents, leaves first (branches are in BFS order).
        let mut injected: Vec<[Complex64; 3]> = (0..nbus)
            .map(|b| {
                std::array::from_fn(|k| {
                    if case.buses[b].phases.contains(dlmp_core::netmodel::Phase::from_index(k)) {
                        (s_load[b][k] / v[b][k]).conj()
                    } else {
                        zero
                    }
                })
            })
            .collect();
        let mut current = vec![[zero; 3]; case.branches.len()];
        for (k, br) in case.branches.iter().enumerate().rev() {
            current[k] = injected[br.to];
            for ph in 0..3 {
                injected[br.from][ph] += current[k][ph];
            }
        }
        // Forward: voltages.
        let mut change: f64 = 0.0;
        let mut next = v.clone();
        next[case.root] = slack;
        for (k, br) in case.branches.iter().enumerate() {
            for ph in 0..3 {
                if !case.buses[br.to].phases.contains(dlmp_core::netmodel::Phase::from_index(ph)) {
                    next[br.to][ph] = zero;
                    continue;
                }
                let mut drop = zero;
                for g in 0..3 {
                    drop += br.z[ph][g] * current[k][g];
                }
                next[br.to][ph] = next[br.from][ph] - drop;
                change = change.max((next[br.to][ph] - v[br.to][ph]).norm());
            }
        }
        v = next;
        if change < 1e-13 {
            break;
        }
    }
    SweepResult {
        u: v.iter().map(|row| std::array::from_fn(|k| row[k].norm_sqr())).collect(),
        iterations,
    }
}
