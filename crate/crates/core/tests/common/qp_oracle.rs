//! Random strictly convex QPs with a planted optimum, and a brute-force
//! active-set enumeration solver to check them against.
//!
//! The enumeration never looks at the planted active set: it tries every
//! candidate working set in order of size and returns the first point that
//! satisfies the KKT conditions. Strict convexity makes that point the
//! unique optimum.

use dlmp_core::qpsolver::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

pub struct Planted {
    pub problem: QpProblem,
    pub x: DVector<f64>,
    pub active: usize,
}

/// `n ≤ 20`, `≤ 10` inequalities, `≤ 5` equalities and finite box bounds on
/// every variable. The number of active inequality/box constraints is kept
/// small so enumeration stays cheap.
pub fn planted_qp<R: Rng>(rng: &mut R) -> Planted {
    let n = rng.random_range(1..=20usize);
    let p = rng.random_range(0..=5usize.min(n - 1));
    let m = rng.random_range(0..=10usize);
    let normal = |rng: &mut R| -> f64 {
        // Box-Muller; keeps the oracle free of the crate's distributions.
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };

    let a = DMatrix::from_fn(n, n, |_, _| normal(rng) / (n as f64).sqrt());
    let alpha = rng.random_range(0.1..1.0);
    let h = a.transpose() * &a + DMatrix::identity(n, n) * alpha;
    let h = (&h + h.transpose()) * 0.5;

    let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let m_mat = DMatrix::from_fn(m, n, |_, _| normal(rng));
    let n_mat = DMatrix::from_fn(p, n, |_, _| normal(rng));
    let n_vec = -(&n_mat * &x);
    let slack = DVector::from_fn(m, |_, _| rng.random_range(0.1..1.0));
    let mut m_vec = -(&m_mat * &x) - slack;
    let mut x_lo = DVector::from_fn(n, |i, _| x[i] - rng.random_range(0.2..2.0));
    let mut x_hi = DVector::from_fn(n, |i, _| x[i] + rng.random_range(0.2..2.0));

    // Candidates: inequality rows, then one side of each variable's box.
    let k_max = (n - p).min(if n > 10 { 3 } else { 4 });
    let k = rng.random_range(0..=k_max);
    let pool = m + n;
    let chosen = sample(rng, pool, k.min(pool)).into_vec();
    let mut mu = DVector::zeros(m);
    let mut mu_lo = DVector::zeros(n);
    let mut mu_hi = DVector::zeros(n);
    for &c in &chosen {
        let w = rng.random_range(0.5..2.0);
        if c < m {
            m_vec[c] = -m_mat.row(c).dot(&x.transpose());
            mu[c] = w;
        } else {
            let i = c - m;
            if rng.random_bool(0.5) {
                x_lo[i] = x[i];
                mu_lo[i] = w;
            } else {
                x_hi[i] = x[i];
                mu_hi[i] = w;
            }
        }
    }
    let lambda = DVector::from_fn(p, |_, _| normal(rng));
    let c = -(&h * &x + m_mat.transpose() * &mu + n_mat.transpose() * &lambda - &mu_lo + &mu_hi);

    Planted {
        problem: QpProblem {
            h,
            c,
            m_mat,
            m_vec,
            n_mat,
            n_vec,
            x_lo,
            x_hi,
        },
        x,
        active: chosen.len(),
    }
}

pub struct OracleSolution {
    pub x: DVector<f64>,
    pub objective: f64,
}

/// `a·x ≤ b` with the variable it bounds, if it is a box side.
struct Row {
    a: DVector<f64>,
    b: f64,
    var: Option<usize>,
}

/// Exhaustive active-set enumeration; `None` if no working set yields a KKT
/// point (infeasible problem).
pub fn enumerate(problem: &QpProblem) -> Option<OracleSolution> {
    let n = problem.c.len();
    let p = problem.n_vec.len();
    let mut rows = Vec::new();
    for j in 0..problem.m_vec.len() {
        rows.push(Row {
            a: problem.m_mat.row(j).transpose(),
            b: -problem.m_vec[j],
            var: None,
        });
    }
    for i in 0..n {
        let e = DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
        if problem.x_lo[i].is_finite() {
            rows.push(Row {
                a: -&e,
                b: -problem.x_lo[i],
                var: Some(i),
            });
        }
        if problem.x_hi[i].is_finite() {
            rows.push(Row {
                a: e,
                b: problem.x_hi[i],
                var: Some(i),
            });
        }
    }

    let tol = 1e-9;
    for size in 0..=(n.saturating_sub(p)).min(rows.len()) {
        let mut found = None;
        for_each_combination(rows.len(), size, &mut |set| {
            // Both sides of one variable's box cannot be active together.
            for (a, &i) in set.iter().enumerate() {
                if let Some(v) = rows[i].var {
                    if set[a + 1..].iter().any(|&k| rows[k].var == Some(v)) {
                        return false;
                    }
                }
            }
            let dim = n + p + size;
            let mut kkt = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(&problem.h);
            rhs.rows_mut(0, n).copy_from(&(-&problem.c));
            for r in 0..p {
                let nr = problem.n_mat.row(r);
                kkt.view_mut((n + r, 0), (1, n)).copy_from(&nr);
                kkt.view_mut((0, n + r), (n, 1)).copy_from(&nr.transpose());
                rhs[n + r] = -problem.n_vec[r];
            }
            for (s, &i) in set.iter().enumerate() {
                let a = &rows[i].a;
                kkt.view_mut((n + p + s, 0), (1, n)).copy_from(&a.transpose());
                kkt.view_mut((0, n + p + s), (n, 1)).copy_from(a);
                rhs[n + p + s] = rows[i].b;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                return false;
            };
            if sol.iter().any(|v| !v.is_finite()) {
                return false;
            }
            let x = sol.rows(0, n).into_owned();
            if (0..size).any(|s| sol[n + p + s] < -tol) {
                return false;
            }
            if rows.iter().any(|r| r.a.dot(&x) - r.b > tol * (1.0 + r.b.abs())) {
                return false;
            }
            if p > 0 && (&problem.n_mat * &x + &problem.n_vec).amax() > tol {
                return false;
            }
            let objective = problem.objective(&x);
            found = Some(OracleSolution { x, objective });
            true
        });
        if found.is_some() {
            return found;
        }
    }
    None
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order until it
/// returns `true`.
fn for_each_combination(n: usize, k: usize, f: &mut dyn FnMut(&[usize]) -> bool) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if f(&idx) {
            return;
        }
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
