//! Mehrotra predictor-corrector interior-point method.
//!
//! Internally the problem is rewritten as
//!
//! ```text
//! minimize ½ xᵀHx + cᵀx   s.t.   A x = b,   G x + s = h,   s ≥ 0
//! ```
//!
//! where `G` stacks the row-normalised `M`, the finite upper bounds and the
//! negated finite lower bounds, and `A` stacks the row-normalised `N` plus
//! one row per fixed variable (`x_lo = x_hi`). Each Newton step solves the
//! reduced system
//!
//! ```text
//! [ H + Gᵀ S⁻¹Z G   Aᵀ ] [dx]   [ -r_d - Gᵀ S⁻¹(Z r_g - r_c) ]
//! [ A               0  ] [dy] = [ -r_p                       ]
//! ```
//!
//! with a small regularisation removed by one step of iterative refinement.

use std::ops::SubAssign;

use nalgebra::{DMatrix, DVector};

use super::{residuals_at, KktResiduals, ProblemError, QpProblem, QpSettings, QpSolution, QpStatus};

const STEP_FRACTION: f64 = 0.99;
const PRIMAL_REG: f64 = 1e-12;
const DUAL_REG: f64 = 1e-11;
const DIVERGENCE: f64 = 1e9;
const POLISH_PIVOT_RATIO: f64 = 1e-13;

/// Row-normalised standard form.
struct Standard {
    n: usize,
    // G = [gm; I[up]; -I[lo]], h = [-m/scale; x_hi[up]; -x_lo[lo]]
    gm: DMatrix<f64>,
    gm_rows: Vec<usize>,
    gm_scale: Vec<f64>,
    up: Vec<usize>,
    lo: Vec<usize>,
    h: DVector<f64>,
    // A = [an; I[fixed]], b = [bn; x_lo[fixed]]
    a: DMatrix<f64>,
    b: DVector<f64>,
    an_rows: Vec<usize>,
    an_scale: Vec<f64>,
    fixed: Vec<usize>,
}

impl Standard {
    fn num_ineq(&self) -> usize {
        self.h.len()
    }

    fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let gx = &self.gm * x;
        let mut out = DVector::zeros(self.num_ineq());
        out.rows_mut(0, gx.len()).copy_from(&gx);
        let mut k = gx.len();
        for &i in &self.up {
            out[k] = x[i];
            k += 1;
        }
        for &i in &self.lo {
            out[k] = -x[i];
            k += 1;
        }
        out
    }

    fn gt_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let mrows = self.gm.nrows();
        let mut out = self.gm.tr_mul(&z.rows(0, mrows).into_owned());
        let mut k = mrows;
        for &i in &self.up {
            out[i] += z[k];
            k += 1;
        }
        for &i in &self.lo {
            out[i] -= z[k];
            k += 1;
        }
        out
    }

    /// `Gᵀ diag(d) G`
    fn gt_d_g(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let mrows = self.gm.nrows();
        let mut scaled = self.gm.clone();
        for r in 0..mrows {
            let w = d[r].sqrt();
            scaled.row_mut(r).scale_mut(w);
        }
        let mut out = scaled.tr_mul(&scaled);
        let mut k = mrows;
        for &i in &self.up {
            out[(i, i)] += d[k];
            k += 1;
        }
        for &i in &self.lo {
            out[(i, i)] += d[k];
            k += 1;
        }
        out
    }
}

enum Prepared {
    Ready(Standard),
    Infeasible,
}

fn prepare(p: &QpProblem, tol: f64) -> Prepared {
    let n = p.num_vars();
    for i in 0..n {
        if p.x_lo[i] > p.x_hi[i] || p.x_lo[i] == f64::INFINITY || p.x_hi[i] == f64::NEG_INFINITY {
            return Prepared::Infeasible;
        }
    }

    let mut gm_rows = Vec::new();
    let mut gm_scale = Vec::new();
    for r in 0..p.m_mat.nrows() {
        let norm = p.m_mat.row(r).amax();
        if norm == 0.0 {
            if p.m_vec[r] > tol {
                return Prepared::Infeasible;
            }
            continue;
        }
        gm_rows.push(r);
        gm_scale.push(norm);
    }
    let mut gm = DMatrix::zeros(gm_rows.len(), n);
    let mut hm = DVector::zeros(gm_rows.len());
    for (k, (&r, &s)) in gm_rows.iter().zip(&gm_scale).enumerate() {
        gm.set_row(k, &(p.m_mat.row(r) / s));
        hm[k] = -p.m_vec[r] / s;
    }

    let mut an_rows = Vec::new();
    let mut an_scale = Vec::new();
    for r in 0..p.n_mat.nrows() {
        let norm = p.n_mat.row(r).amax();
        if norm == 0.0 {
            if p.n_vec[r].abs() > tol {
                return Prepared::Infeasible;
            }
            continue;
        }
        an_rows.push(r);
        an_scale.push(norm);
    }
    let fixed: Vec<usize> = (0..n).filter(|&i| p.x_lo[i] == p.x_hi[i]).collect();
    let up: Vec<usize> = (0..n)
        .filter(|&i| p.x_hi[i].is_finite() && p.x_lo[i] != p.x_hi[i])
        .collect();
    let lo: Vec<usize> = (0..n)
        .filter(|&i| p.x_lo[i].is_finite() && p.x_lo[i] != p.x_hi[i])
        .collect();

    let mut a = DMatrix::zeros(an_rows.len() + fixed.len(), n);
    let mut b = DVector::zeros(an_rows.len() + fixed.len());
    for (k, (&r, &s)) in an_rows.iter().zip(&an_scale).enumerate() {
        a.set_row(k, &(p.n_mat.row(r) / s));
        b[k] = -p.n_vec[r] / s;
    }
    for (k, &i) in fixed.iter().enumerate() {
        a[(an_rows.len() + k, i)] = 1.0;
        b[an_rows.len() + k] = p.x_lo[i];
    }

    let mut h = DVector::zeros(gm_rows.len() + up.len() + lo.len());
    h.rows_mut(0, hm.len()).copy_from(&hm);
    let mut k = hm.len();
    for &i in &up {
        h[k] = p.x_hi[i];
        k += 1;
    }
    for &i in &lo {
        h[k] = -p.x_lo[i];
        k += 1;
    }

    Prepared::Ready(Standard {
        n,
        gm,
        gm_rows,
        gm_scale,
        up,
        lo,
        h,
        a,
        b,
        an_rows,
        an_scale,
        fixed,
    })
}

/// Multipliers mapped back to the caller's constraint rows.
struct Duals {
    mu_m: DVector<f64>,
    lambda_n: DVector<f64>,
    mu_lo: DVector<f64>,
    mu_hi: DVector<f64>,
}

fn unscale(p: &QpProblem, st: &Standard, y: &DVector<f64>, z: &DVector<f64>) -> Duals {
    let n = st.n;
    let mut mu_m = DVector::zeros(p.m_mat.nrows());
    for (k, (&r, &s)) in st.gm_rows.iter().zip(&st.gm_scale).enumerate() {
        mu_m[r] = z[k] / s;
    }
    let mut lambda_n = DVector::zeros(p.n_mat.nrows());
    for (k, (&r, &s)) in st.an_rows.iter().zip(&st.an_scale).enumerate() {
        lambda_n[r] = y[k] / s;
    }
    let mut mu_lo = DVector::zeros(n);
    let mut mu_hi = DVector::zeros(n);
    let mut k = st.gm_rows.len();
    for &i in &st.up {
        mu_hi[i] = z[k];
        k += 1;
    }
    for &i in &st.lo {
        mu_lo[i] = z[k];
        k += 1;
    }
    for (k, &i) in st.fixed.iter().enumerate() {
        let v = y[st.an_rows.len() + k];
        if v >= 0.0 {
            mu_hi[i] = v;
        } else {
            mu_lo[i] = -v;
        }
    }
    Duals {
        mu_m,
        lambda_n,
        mu_lo,
        mu_hi,
    }
}

fn residuals(p: &QpProblem, x: &DVector<f64>, d: &Duals) -> KktResiduals {
    residuals_at(p, x, &d.mu_m, &d.lambda_n, &d.mu_lo, &d.mu_hi)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha: f64 = 1.0;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

/// Regularised KKT factorisation with refinement against the exact operator.
struct Newton<'a> {
    k11: DMatrix<f64>,
    a: &'a DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> Newton<'a> {
    fn new(k11: DMatrix<f64>, a: &'a DMatrix<f64>) -> Option<Self> {
        let n = k11.nrows();
        let p = a.nrows();
        let mut k = DMatrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(&k11);
        for i in 0..n {
            k[(i, i)] += PRIMAL_REG * (1.0 + k11[(i, i)].abs());
        }
        k.view_mut((n, 0), (p, n)).copy_from(a);
        k.view_mut((0, n), (n, p)).copy_from(&a.transpose());
        for i in 0..p {
            k[(n + i, n + i)] = -DUAL_REG;
        }
        let lu = k.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Self { k11, a, lu })
    }

    fn apply(&self, dx: &DVector<f64>, dy: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.k11 * dx + self.a.tr_mul(dy), self.a * dx)
    }

    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = r1.len();
        let p = r2.len();
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(r1);
        rhs.rows_mut(n, p).copy_from(r2);
        let mut sol = self.lu.solve(&rhs)?;
        for _ in 0..2 {
            let (a1, a2) = self.apply(&sol.rows(0, n).into_owned(), &sol.rows(n, p).into_owned());
            let mut res = rhs.clone();
            res.rows_mut(0, n).sub_assign(&a1);
            res.rows_mut(n, p).sub_assign(&a2);
            let corr = self.lu.solve(&res)?;
            sol += corr;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, n).into_owned(), sol.rows(n, p).into_owned()))
    }
}

pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, ProblemError> {
    problem.validate()?;
    let tol = settings.tolerance;
    let n = problem.num_vars();

    let st = match prepare(problem, tol) {
        Prepared::Ready(st) => st,
        Prepared::Infeasible => return Ok(trivial(problem, QpStatus::Infeasible)),
    };
    let m = st.num_ineq();
    let p_eq = st.a.nrows();
    let h_mat = &problem.h;
    let c = &problem.c;

    // Initial point: minimise ½xᵀHx + cᵀx + ½‖Gx - h‖² subject to Ax = b.
    let ones = DVector::from_element(m, 1.0);
    let init = Newton::new(h_mat + st.gt_d_g(&ones), &st.a)
        .and_then(|nt| nt.solve(&(-c + st.gt_mul(&st.h)), &st.b));
    let (mut x, mut y) = match init {
        Some(v) => v,
        None => (DVector::zeros(n), DVector::zeros(p_eq)),
    };
    let mut s = &st.h - st.g_mul(&x);
    let mut z = -s.clone();
    if m > 0 {
        let shift = |v: &mut DVector<f64>| {
            let alpha = -v.min();
            if alpha >= -1e-8 {
                v.add_scalar_mut(1.0 + alpha);
            }
        };
        shift(&mut s);
        shift(&mut z);
    }

    let x_scale = 1.0 + x.amax();
    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    let mut best: Option<(DVector<f64>, DVector<f64>, DVector<f64>, f64)> = None;

    for iter in 0..settings.max_iterations {
        iterations = iter + 1;
        let duals = unscale(problem, &st, &y, &z);
        let kkt = residuals(problem, &x, &duals);
        let score = kkt.max_norm();
        if best.as_ref().is_none_or(|b| score < b.3) {
            best = Some((x.clone(), y.clone(), z.clone(), score));
        }
        if kkt.within(tol) {
            status = QpStatus::Optimal;
            break;
        }

        let r_d = h_mat * &x + c + st.a.tr_mul(&y) + st.gt_mul(&z);
        let r_p = &st.a * &x - &st.b;
        let r_g = st.g_mul(&x) + &s - &st.h;
        let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };

        if x.amax() > DIVERGENCE * x_scale && r_p.amax() <= 1e-6 && r_g.amax() <= 1e-6 {
            status = QpStatus::Unbounded;
            break;
        }
        if y.amax().max(if m > 0 { z.amax() } else { 0.0 }) > DIVERGENCE {
            status = QpStatus::Infeasible;
            break;
        }

        let d = s.zip_map(&z, |si, zi| zi / si);
        let newton = match Newton::new(h_mat + st.gt_d_g(&d), &st.a) {
            Some(nt) => nt,
            None => break,
        };
        let direction = |r_c: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // dz = S⁻¹(Z (r_g + G dx) - r_c),  ds = -r_g - G dx
            let w = (z.component_mul(&r_g) - r_c).component_div(&s);
            let rhs1 = -&r_d - st.gt_mul(&w);
            let rhs2 = -&r_p;
            let (dx, dy) = newton.solve(&rhs1, &rhs2)?;
            let gdx = st.g_mul(&dx);
            let dz = (z.component_mul(&(&r_g + &gdx)) - r_c).component_div(&s);
            let ds = -&r_g - gdx;
            Some((dx, dy, ds, dz))
        };

        let r_c_aff = s.component_mul(&z);
        let Some((dx_a, dy_a, ds_a, dz_a)) = direction(&r_c_aff) else {
            break;
        };
        let (dx, dy, ds, dz) = if m > 0 {
            let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
            let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&z + &dz_a * alpha_aff)) / m as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let r_c = &r_c_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
            match direction(&r_c) {
                Some(v) => v,
                None => break,
            }
        } else {
            (dx_a, dy_a, ds_a, dz_a)
        };

        let alpha = if m > 0 {
            (STEP_FRACTION * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0)
        } else {
            1.0
        };
        x += &dx * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        if m > 0 {
            // Keep strictly interior.
            s.apply(|v| *v = v.max(1e-300));
            z.apply(|v| *v = v.max(1e-300));
        }
    }

    if status == QpStatus::MaxIterations || status == QpStatus::Optimal {
        if let Some((bx, by, bz, _)) = best.take() {
            if status != QpStatus::Optimal {
                x = bx;
                y = by;
                z = bz;
                s = (&st.h - st.g_mul(&x)).map(|v| v.max(0.0));
            }
        }
    }

    let mut duals = unscale(problem, &st, &y, &z);
    let mut kkt = residuals(problem, &x, &duals);
    let mut polished = false;

    if settings.polish && status != QpStatus::Infeasible && status != QpStatus::Unbounded {
        if let Some((px, pdual)) = polish(problem, &st, &s, &z) {
            let pk = residuals(problem, &px, &pdual);
            if pk.within(tol) && pk.max_norm() <= kkt.max_norm().max(tol) {
                x = px;
                duals = pdual;
                kkt = pk;
                polished = true;
                status = QpStatus::Optimal;
            }
        }
    }

    if status == QpStatus::MaxIterations {
        status = if kkt.within(tol) {
            QpStatus::Optimal
        } else if kkt.primal_feasibility > tol.sqrt() {
            QpStatus::Infeasible
        } else if kkt.stationarity > tol.sqrt() && x.amax() > 1e6 * x_scale {
            QpStatus::Unbounded
        } else {
            QpStatus::MaxIterations
        };
    }

    Ok(QpSolution {
        objective: problem.objective(&x),
        x,
        mu_m: duals.mu_m,
        lambda_n: duals.lambda_n,
        mu_lo: duals.mu_lo,
        mu_hi: duals.mu_hi,
        status,
        kkt,
        iterations,
        polished,
    })
}

/// Solves `problem` starting from the active set of `hint`, the solution of
/// a nearby problem with the same shape. The equality-constrained system on
/// that active set is accepted only if the result meets the full KKT
/// tolerance (which makes it the optimum); otherwise this falls back to
/// [`solve`].
pub fn solve_warm(problem: &QpProblem, settings: &QpSettings, hint: &QpSolution) -> Result<QpSolution, ProblemError> {
    problem.validate()?;
    let n = problem.num_vars();
    let shaped = hint.x.len() == n
        && hint.mu_m.len() == problem.m_mat.nrows()
        && hint.lambda_n.len() == problem.n_mat.nrows()
        && hint.mu_lo.len() == n
        && hint.mu_hi.len() == n;
    if shaped {
        if let Prepared::Ready(st) = prepare(problem, settings.tolerance) {
            let s = (&st.h - st.g_mul(&hint.x)).map(|v| v.max(0.0));
            let mut z = DVector::zeros(st.num_ineq());
            for (k, (&r, &sc)) in st.gm_rows.iter().zip(&st.gm_scale).enumerate() {
                z[k] = hint.mu_m[r] * sc;
            }
            let mut k = st.gm_rows.len();
            for &i in &st.up {
                z[k] = hint.mu_hi[i];
                k += 1;
            }
            for &i in &st.lo {
                z[k] = hint.mu_lo[i];
                k += 1;
            }
            if let Some((x, duals)) = polish(problem, &st, &s, &z) {
                let kkt = residuals(problem, &x, &duals);
                if kkt.within(settings.tolerance) {
                    return Ok(QpSolution {
                        objective: problem.objective(&x),
                        x,
                        mu_m: duals.mu_m,
                        lambda_n: duals.lambda_n,
                        mu_lo: duals.mu_lo,
                        mu_hi: duals.mu_hi,
                        status: QpStatus::Optimal,
                        kkt,
                        iterations: 0,
                        polished: true,
                    });
                }
            }
        }
    }
    solve(problem, settings)
}

/// Solves the equality-constrained QP on the active set guessed from the interior iterate.
fn polish(
    p: &QpProblem,
    st: &Standard,
    s: &DVector<f64>,
    z: &DVector<f64>,
) -> Option<(DVector<f64>, Duals)> {
    let n = st.n;
    let m = st.num_ineq();
    let active: Vec<usize> = (0..m).filter(|&i| z[i] > s[i]).collect();
    let p_eq = st.a.nrows();
    let na = active.len();
    if p_eq + na > n {
        return None;
    }

    // Rows of G for the active set.
    let mut ga = DMatrix::zeros(na, n);
    let mut ha = DVector::zeros(na);
    let mrows = st.gm.nrows();
    for (k, &i) in active.iter().enumerate() {
        if i < mrows {
            ga.set_row(k, &st.gm.row(i));
        } else if i < mrows + st.up.len() {
            ga[(k, st.up[i - mrows])] = 1.0;
        } else {
            ga[(k, st.lo[i - mrows - st.up.len()])] = -1.0;
        }
        ha[k] = st.h[i];
    }

    let dim = n + p_eq + na;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    kkt.view_mut((n, 0), (p_eq, n)).copy_from(&st.a);
    kkt.view_mut((0, n), (n, p_eq)).copy_from(&st.a.transpose());
    kkt.view_mut((n + p_eq, 0), (na, n)).copy_from(&ga);
    kkt.view_mut((0, n + p_eq), (n, na)).copy_from(&ga.transpose());
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&p.c));
    rhs.rows_mut(n, p_eq).copy_from(&st.b);
    rhs.rows_mut(n + p_eq, na).copy_from(&ha);

    let lu = kkt.clone().full_piv_lu();
    let diag = lu.u().diagonal();
    let big = diag.amax();
    let small = diag.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if big.is_nan() || big <= 0.0 || small < POLISH_PIVOT_RATIO * big {
        return None;
    }
    let mut sol = lu.solve(&rhs)?;
    let res = &rhs - &kkt * &sol;
    sol += lu.solve(&res)?;

    let px = sol.rows(0, n).into_owned();
    let py = sol.rows(n, p_eq).into_owned();
    let mut pz = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        let v = sol[n + p_eq + k];
        if v < -1e-10 * (1.0 + v.abs()) {
            return None;
        }
        pz[i] = v.max(0.0);
    }
    Some((px, unscale(p, st, &py, &pz)))
}

fn trivial(p: &QpProblem, status: QpStatus) -> QpSolution {
    let n = p.num_vars();
    let x = DVector::from_fn(n, |i, _| {
        let (lo, hi) = (p.x_lo[i], p.x_hi[i]);
        if lo.is_finite() {
            lo
        } else if hi.is_finite() {
            hi
        } else {
            0.0
        }
    });
    let mu_m = DVector::zeros(p.m_mat.nrows());
    let lambda_n = DVector::zeros(p.n_mat.nrows());
    let mu_lo = DVector::zeros(n);
    let mu_hi = DVector::zeros(n);
    let kkt = residuals_at(p, &x, &mu_m, &lambda_n, &mu_lo, &mu_hi);
    QpSolution {
        objective: p.objective(&x),
        x,
        mu_m,
        lambda_n,
        mu_lo,
        mu_hi,
        status,
        kkt,
        iterations: 0,
        polished: false,
    }
}
