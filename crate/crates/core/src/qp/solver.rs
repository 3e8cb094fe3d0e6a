//! Operator-splitting (ADMM) solver for `min 1/2 x^T Q x + q^T x` subject to
//! `l <= C x <= u`.
//!
//! The iteration follows the usual splitting with a projected auxiliary
//! variable `z = C x`. Before iterating, the problem is preconditioned:
//!
//! * every constraint row is scaled to unit infinity-norm;
//! * the variable is whitened by the thin SVD of the scaled constraint matrix,
//!   `x = V diag(1/sigma) w`, so the constraint operator acting on `w` has
//!   orthonormal columns. Monomial Vandermonde blocks are badly conditioned,
//!   and this change of variables removes that from the splitting iteration
//!   without touching the feasible set.
//!
//! Multipliers are mapped back to the original rows, and convergence is judged
//! on the KKT residual of the original problem. A final polishing step solves
//! the equality-constrained problem on the detected active set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::assemble::QuadraticProgram;
use crate::error::{Error, Result};
use crate::kernel::KernelCoefficients;

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    /// Iteration budget exhausted; the best iterate is returned.
    NotConverged,
}

/// Which iteration runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpMethod {
    /// Splitting iterations for up to `admm_budget` steps, then the
    /// interior-point method if the tolerance was not reached.
    Auto,
    Admm,
    InteriorPoint,
}

/// Solver settings.
#[derive(Debug, Clone)]
pub struct QpSettings {
    /// Target for the relative KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial primal point in the original coordinates.
    pub warm_start: Option<DVector<f64>>,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    /// Residuals are evaluated every this many iterations.
    pub check_every: usize,
    pub polish: bool,
    pub method: QpMethod,
    pub admm_budget: usize,
    pub ipm_max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 40_000,
            warm_start: None,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            check_every: 10,
            polish: true,
            method: QpMethod::Auto,
            admm_budget: 2_000,
            ipm_max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Solution in the original coordinates.
    pub x: DVector<f64>,
    /// Multipliers of `l <= C x <= u` (positive at an active upper bound,
    /// negative at an active lower bound).
    pub multipliers: DVector<f64>,
    pub alpha: KernelCoefficients,
    /// Objective including the constant term.
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

/// Relative KKT residuals of a primal/dual pair in the original coordinates.
#[derive(Debug, Clone, Copy)]
pub struct KktResidual {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity)
    }
}

/// Primal infeasibility is measured in units of the bounds, stationarity
/// relative to the largest term, and complementarity as
/// `|y_i| * slack_i` relative to `max(1, ||y||) * max(1, ||bounds||)`.
pub fn kkt_residual(qp: &QuadraticProgram, x: &DVector<f64>, y: &DVector<f64>) -> KktResidual {
    let cx = &qp.constraints * x;
    let bound_scale = qp
        .lower
        .iter()
        .chain(qp.upper.iter())
        .filter(|v| v.is_finite())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..cx.len() {
        let (v, l, u) = (cx[i], qp.lower[i], qp.upper[i]);
        primal = primal.max(l - v).max(v - u);
        let slack = if y[i] > 0.0 { u - v } else if y[i] < 0.0 { v - l } else { 0.0 };
        comp = comp.max((y[i] * slack).abs());
    }
    let qx = &qp.hessian * x;
    let cty = qp.constraints.tr_mul(y);
    let stationarity = &qx + &qp.linear + &cty;
    let dual_scale = 1f64.max(qx.amax()).max(qp.linear.amax()).max(cty.amax());
    KktResidual {
        primal: primal.max(0.0) / bound_scale,
        dual: stationarity.amax() / dual_scale,
        complementarity: comp / (1f64.max(y.amax()) * bound_scale),
    }
}

/// Preconditioned copy of the problem in whitened coordinates.
struct Scaled {
    /// `x = transform * w`
    transform: DMatrix<f64>,
    /// `w = inverse * x`
    inverse: DMatrix<f64>,
    row_scale: DVector<f64>,
    /// Row-scaled constraints in the original variables.
    ar: DMatrix<f64>,
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
}

impl Scaled {
    fn new(qp: &QuadraticProgram) -> Result<Self> {
        let (m, n) = qp.constraints.shape();
        let mut row_scale = DVector::from_element(m, 1.0);
        let mut a = qp.constraints.clone();
        let mut l = qp.lower.clone();
        let mut u = qp.upper.clone();
        for i in 0..m {
            let nrm = a.row(i).amax();
            if nrm > 0.0 {
                let s = 1.0 / nrm;
                row_scale[i] = s;
                a.row_mut(i).scale_mut(s);
                l[i] *= s;
                u[i] *= s;
            } else if l[i] > 0.0 || u[i] < 0.0 {
                return Err(Error::InfeasibleProblem(format!("empty constraint row {i} excludes 0")));
            }
        }

        let (transform, inverse) = if m == 0 {
            (DMatrix::identity(n, n), DMatrix::identity(n, n))
        } else {
            let svd = a.clone().svd(false, true);
            let v_t = svd.v_t.expect("requested V^T");
            let sv = svd.singular_values;
            let k = sv.len();
            let floor = sv.max() * 1e-12;
            if k < n {
                // Fewer constraint rows than variables; leave the unconstrained
                // directions in their original scale.
                (DMatrix::identity(n, n), DMatrix::identity(n, n))
            } else {
                let mut t = v_t.transpose();
                let mut inv = v_t.clone();
                for j in 0..n {
                    let s = sv[j].max(floor);
                    t.column_mut(j).scale_mut(1.0 / s);
                    inv.row_mut(j).scale_mut(s);
                }
                (t, inv)
            }
        };
        let ar = a.clone();
        let p = transform.tr_mul(&(&qp.hessian * &transform));
        let p = (&p + p.transpose()) * 0.5;
        let q = transform.tr_mul(&qp.linear);
        let a = &a * &transform;
        Ok(Self { transform, inverse, row_scale, ar, p, q, a, l, u })
    }

    fn unscale(&self, w: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.transform * w, y.component_mul(&self.row_scale))
    }
}

fn project(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].clamp(l[i], u[i]))
}

fn factor(p: &DMatrix<f64>, a: &DMatrix<f64>, rho: &DVector<f64>, sigma: f64) -> Cholesky<f64, Dyn> {
    let n = p.nrows();
    let mut ra = a.clone();
    for (mut row, &r) in ra.row_iter_mut().zip(rho.iter()) {
        row *= r;
    }
    let mut k = p + a.tr_mul(&ra);
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    let mut shift = 0.0;
    loop {
        let mut kk = k.clone();
        for i in 0..n {
            kk[(i, i)] += shift;
        }
        if let Some(ch) = kk.cholesky() {
            return ch;
        }
        shift = if shift == 0.0 { 1e-10 * k.diagonal().amax().max(1.0) } else { shift * 10.0 };
    }
}

fn rho_vector(rho: f64, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(l.len(), |i, _| if (u[i] - l[i]).abs() < 1e-12 { 1e3 * rho } else { rho })
}

struct Candidate {
    x: DVector<f64>,
    /// Multipliers of the original rows.
    y: DVector<f64>,
    kkt: f64,
}

impl Candidate {
    fn better(self, other: Option<Candidate>) -> Candidate {
        match other {
            Some(o) if o.kkt < self.kkt => o,
            _ => self,
        }
    }
}

/// Solves `qp` with default settings apart from `tol` and `max_iter`.
pub fn solve_qp(qp: &QuadraticProgram, tol: f64, max_iter: usize) -> Result<QpSolution> {
    solve_qp_with(qp, &QpSettings { tol, max_iter, ..QpSettings::default() })
}

pub fn solve_qp_with(qp: &QuadraticProgram, settings: &QpSettings) -> Result<QpSolution> {
    let n = qp.dim();
    let m = qp.constraints.nrows();
    if qp.hessian.shape() != (n, n) || qp.constraints.ncols() != n || qp.lower.len() != m || qp.upper.len() != m {
        return Err(Error::InvalidParameter("inconsistent QP dimensions".into()));
    }
    // Phase 1: every interval must be nonempty.
    for i in 0..m {
        if qp.lower[i] > qp.upper[i] {
            return Err(Error::InfeasibleProblem(format!(
                "row {i} has lower bound {} above upper bound {}",
                qp.lower[i], qp.upper[i]
            )));
        }
    }
    if let Some(x0) = &settings.warm_start {
        if x0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
        }
    }
    let sc = Scaled::new(qp)?;
    let tol = settings.tol;

    let (mut chosen, mut iterations) = match settings.method {
        QpMethod::Admm => admm(qp, &sc, settings, settings.max_iter)?,
        QpMethod::InteriorPoint => interior_point(qp, &sc, settings),
        QpMethod::Auto => {
            let (c, it) = admm(qp, &sc, settings, settings.admm_budget.min(settings.max_iter))?;
            if c.kkt <= tol {
                (c, it)
            } else {
                let (d, it2) = interior_point(qp, &sc, settings);
                (c.better(Some(d)), it + it2)
            }
        }
    };
    iterations = iterations.max(1);

    // Never hand back something worse than a feasible warm start.
    if let Some(x0) = &settings.warm_start {
        let obj_chosen = qp.objective(&chosen.x);
        let obj_warm = qp.objective(x0);
        let scale = 1f64.max(obj_warm.abs());
        if qp.max_violation(x0) <= tol && obj_warm < obj_chosen - tol * scale {
            let y0 = DVector::zeros(m);
            let kkt = kkt_residual(qp, x0, &y0).max();
            chosen = Candidate { x: x0.clone(), y: y0, kkt };
        }
    }

    let s = qp.n_kernels.max(1);
    let alpha = KernelCoefficients::from_flat(chosen.x.as_slice(), s, (n / s).saturating_sub(1))
        .or_else(|_| KernelCoefficients::from_flat(chosen.x.as_slice(), 1, n - 1))?;
    Ok(QpSolution {
        objective: qp.objective(&chosen.x),
        alpha,
        kkt_residual: chosen.kkt,
        iterations,
        status: if chosen.kkt <= tol { QpStatus::Solved } else { QpStatus::NotConverged },
        x: chosen.x,
        multipliers: chosen.y,
    })
}

/// Splitting iterations in whitened coordinates, followed by polishing.
fn admm(qp: &QuadraticProgram, sc: &Scaled, settings: &QpSettings, max_iter: usize) -> Result<(Candidate, usize)> {
    let n = qp.dim();
    let m = sc.a.nrows();
    let tol = settings.tol;
    let sigma = settings.sigma;
    let alpha_r = settings.relaxation;

    let mut w = match &settings.warm_start {
        Some(x0) => &sc.inverse * x0,
        None => DVector::zeros(n),
    };
    let mut z = project(&(&sc.a * &w), &sc.l, &sc.u);
    let mut y = DVector::zeros(m);
    let mut rho = settings.rho;
    let mut rho_vec = rho_vector(rho, &sc.l, &sc.u);
    let mut chol = factor(&sc.p, &sc.a, &rho_vec, sigma);

    let mut best: Option<Candidate> = None;
    let mut iterations = 0;
    let mut prev_y = y.clone();

    for it in 1..=max_iter {
        iterations = it;
        let rhs = &w * sigma - &sc.q + sc.a.tr_mul(&(rho_vec.component_mul(&z) - &y));
        let w_tilde = chol.solve(&rhs);
        let z_tilde = &sc.a * &w_tilde;
        w = &w_tilde * alpha_r + &w * (1.0 - alpha_r);
        let z_relax = &z_tilde * alpha_r + &z * (1.0 - alpha_r);
        let z_new = project(&(&z_relax + y.component_div(&rho_vec)), &sc.l, &sc.u);
        y += rho_vec.component_mul(&(&z_relax - &z_new));
        z = z_new;

        if it % settings.check_every != 0 && it != max_iter {
            continue;
        }
        let (x, y_orig) = sc.unscale(&w, &y);
        let kkt = kkt_residual(qp, &x, &y_orig).max();
        if best.as_ref().is_none_or(|b| kkt < b.kkt) {
            best = Some(Candidate { x, y: y_orig, kkt });
        }
        if kkt <= tol {
            break;
        }

        // Primal infeasibility certificate on the multiplier increments.
        let dy = &y - &prev_y;
        prev_y = y.clone();
        let dy_norm = dy.amax();
        if dy_norm > 1e-30 {
            let at_dy = sc.a.tr_mul(&dy).amax();
            let support: f64 = (0..m).map(|i| if dy[i] > 0.0 { sc.u[i] * dy[i] } else { sc.l[i] * dy[i] }).sum();
            if at_dy <= 1e-9 * dy_norm && support < -1e-9 * dy_norm {
                return Err(Error::InfeasibleProblem("multiplier increments certify infeasibility".into()));
            }
        }

        // Residual balancing.
        let ax = &sc.a * &w;
        let prim = (&ax - &z).amax() / 1e-12f64.max(ax.amax()).max(z.amax());
        let pw = &sc.p * &w;
        let aty = sc.a.tr_mul(&y);
        let dual = (&pw + &sc.q + &aty).amax() / 1e-12f64.max(pw.amax()).max(aty.amax()).max(sc.q.amax());
        if prim > 0.0 && dual > 0.0 {
            let ratio = (prim / dual).sqrt();
            if !(0.2..=5.0).contains(&ratio) {
                rho = (rho * ratio).clamp(1e-6, 1e6);
                rho_vec = rho_vector(rho, &sc.l, &sc.u);
                chol = factor(&sc.p, &sc.a, &rho_vec, sigma);
            }
        }
    }

    let mut chosen = best.unwrap_or_else(|| {
        let (x, y_orig) = sc.unscale(&w, &y);
        let kkt = kkt_residual(qp, &x, &y_orig).max();
        Candidate { x, y: y_orig, kkt }
    });
    if settings.polish && chosen.kkt > tol {
        let active = active_from_dual(&z, &y, &sc.l, &sc.u);
        chosen = chosen.better(polish(qp, sc, &sc.transform * &w, active, tol));
    }
    Ok((chosen, iterations))
}

/// Rows whose multiplier dominates their slack, with the bound they sit on.
fn active_from_dual(z: &DVector<f64>, y: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> Vec<(usize, bool)> {
    (0..z.len())
        .filter_map(|i| {
            if z[i] - l[i] < -y[i] {
                Some((i, false))
            } else if u[i] - z[i] < y[i] {
                Some((i, true))
            } else {
                None
            }
        })
        .collect()
}

/// Mehrotra predictor-corrector on `G x + s = h, s >= 0` built from the
/// row-scaled constraints.
fn interior_point(qp: &QuadraticProgram, sc: &Scaled, settings: &QpSettings) -> (Candidate, usize) {
    let n = qp.dim();
    let m = sc.ar.nrows();
    let tol = settings.tol;
    // (row, +1 for upper / -1 for lower)
    let mut rows: Vec<(usize, f64)> = Vec::with_capacity(2 * m);
    let mut h_vals = Vec::with_capacity(2 * m);
    for i in 0..m {
        if sc.u[i].is_finite() {
            rows.push((i, 1.0));
            h_vals.push(sc.u[i]);
        }
        if sc.l[i].is_finite() {
            rows.push((i, -1.0));
            h_vals.push(-sc.l[i]);
        }
    }
    let p = rows.len();
    let g = DMatrix::from_fn(p, n, |r, j| rows[r].1 * sc.ar[(rows[r].0, j)]);
    let h = DVector::from_vec(h_vals);
    let qmat = &qp.hessian;
    let qvec = &qp.linear;

    let mut x = settings.warm_start.clone().unwrap_or_else(|| DVector::zeros(n));
    let mut s = (&h - &g * &x).map(|v| v.max(1.0));
    let mut z = DVector::from_element(p, 1.0);
    let to_candidate = |x: &DVector<f64>, z: &DVector<f64>| {
        let mut y = DVector::zeros(m);
        for (r, &(i, sign)) in rows.iter().enumerate() {
            y[i] += sign * z[r];
        }
        let y_orig = y.component_mul(&sc.row_scale);
        let kkt = kkt_residual(qp, x, &y_orig).max();
        Candidate { x: x.clone(), y: y_orig, kkt }
    };

    let mut best: Option<Candidate> = None;
    let mut iterations = 0;
    let max_iter = settings.ipm_max_iter;
    for it in 0..max_iter {
        iterations = it + 1;
        let cand = to_candidate(&x, &z);
        let done = cand.kkt <= tol;
        best = Some(match best {
            Some(b) if b.kkt <= cand.kkt => b,
            _ => cand,
        });
        if done || p == 0 {
            break;
        }
        let r_d = qmat * &x + qvec + g.tr_mul(&z);
        let r_p = &g * &x + &s - &h;
        let mu = s.dot(&z) / p as f64;
        let wdiag = z.component_div(&s);
        let mut wg = g.clone();
        for (mut row, &wv) in wg.row_iter_mut().zip(wdiag.iter()) {
            row *= wv;
        }
        let hess = qmat + g.tr_mul(&wg);
        let chol = factor_spd(&hess);

        let solve = |rc: &DVector<f64>| {
            let t = (-rc + z.component_mul(&r_p)).component_div(&s);
            let rhs = -&r_d - g.tr_mul(&t);
            let dx = chol.solve(&rhs);
            let ds = -&r_p - &g * &dx;
            let dz = (-rc - z.component_mul(&ds)).component_div(&s);
            (dx, ds, dz)
        };
        let step = |ds: &DVector<f64>, dz: &DVector<f64>| {
            let mut a: f64 = 1.0;
            for i in 0..p {
                if ds[i] < 0.0 {
                    a = a.min(-s[i] / ds[i]);
                }
                if dz[i] < 0.0 {
                    a = a.min(-z[i] / dz[i]);
                }
            }
            a
        };

        let rc_aff = s.component_mul(&z);
        let (_, ds_a, dz_a) = solve(&rc_aff);
        let a_aff = step(&ds_a, &dz_a);
        let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / p as f64;
        let centering = (mu_aff / mu).powi(3);
        let rc = &rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(p, centering * mu);
        let (dx, ds, dz) = solve(&rc);
        let a = (0.99 * step(&ds, &dz)).min(1.0);
        x += &dx * a;
        s += &ds * a;
        z += &dz * a;
        if !(x.iter().all(|v| v.is_finite()) && s.iter().all(|v| v.is_finite()) && z.iter().all(|v| v.is_finite())) {
            break;
        }
    }

    let mut chosen = best.expect("at least one iterate");
    if settings.polish && chosen.kkt > tol {
        let mut upper_active = vec![None; m];
        for (r, &(i, sign)) in rows.iter().enumerate() {
            if z[r] > s[r] {
                upper_active[i] = Some(sign > 0.0);
            }
        }
        let active = upper_active.iter().enumerate().filter_map(|(i, a)| a.map(|up| (i, up))).collect();
        let x0 = chosen.x.clone();
        chosen = chosen.better(polish(qp, sc, x0, active, tol));
    }
    (chosen, iterations)
}

fn factor_spd(h: &DMatrix<f64>) -> Cholesky<f64, Dyn> {
    let n = h.nrows();
    let base = h.diagonal().amax().max(1e-300);
    let mut shift = 0.0;
    loop {
        let mut k = h.clone();
        for i in 0..n {
            k[(i, i)] += shift;
        }
        if let Some(ch) = k.cholesky() {
            return ch;
        }
        shift = if shift == 0.0 { 1e-14 * base } else { shift * 10.0 };
    }
}

/// Equality-constrained refits on a working active set (row-scaled
/// constraints, original variables), solved as regularized KKT systems with
/// iterative refinement. Violated rows are added and rows with multipliers of
/// the wrong sign dropped for a few rounds.
fn polish(
    qp: &QuadraticProgram,
    sc: &Scaled,
    x_start: DVector<f64>,
    mut active: Vec<(usize, bool)>,
    tol: f64,
) -> Option<Candidate> {
    let n = qp.dim();
    let m = sc.ar.nrows();
    let qscale = qp.hessian.amax().max(1.0);
    let delta = 1e-11 * qscale;
    let mut best: Option<Candidate> = None;
    let mut x = x_start;
    for _round in 0..8 {
        let na = active.len();
        let dim = n + na;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&qp.linear));
        for (r, &(i, up)) in active.iter().enumerate() {
            for j in 0..n {
                let v = sc.ar[(i, j)] * qscale;
                kkt[(n + r, j)] = v;
                kkt[(j, n + r)] = v;
            }
            rhs[n + r] = qscale * if up { sc.u[i] } else { sc.l[i] };
        }
        let mut reg = kkt.clone();
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        for i in n..dim {
            reg[(i, i)] -= delta;
        }
        let lu = reg.lu();
        let mut sol = DVector::zeros(dim);
        sol.rows_mut(0, n).copy_from(&x);
        for _ in 0..10 {
            let resid = &rhs - &kkt * &sol;
            sol += lu.solve(&resid)?;
        }
        x = sol.rows(0, n).into_owned();
        let mut y = DVector::zeros(m);
        for (r, &(i, _)) in active.iter().enumerate() {
            y[i] = sol[n + r] * qscale * sc.row_scale[i];
        }
        let kkt_val = kkt_residual(qp, &x, &y).max();
        if !kkt_val.is_finite() {
            break;
        }
        let done = kkt_val <= tol;
        let cand = Candidate { x: x.clone(), y: y.clone(), kkt: kkt_val };
        best = Some(match best {
            Some(b) if b.kkt <= cand.kkt => b,
            _ => cand,
        });
        if done {
            break;
        }

        // Working-set update.
        let cx = &sc.ar * &x;
        let mut next: Vec<(usize, bool)> = active
            .iter()
            .copied()
            .filter(|&(i, up)| if up { y[i] >= 0.0 } else { y[i] <= 0.0 })
            .collect();
        let mut changed = next.len() != active.len();
        let slack_tol = tol * 1e-2;
        for i in 0..m {
            if active.iter().any(|&(a, _)| a == i) {
                continue;
            }
            if cx[i] > sc.u[i] + slack_tol {
                next.push((i, true));
                changed = true;
            } else if cx[i] < sc.l[i] - slack_tol {
                next.push((i, false));
                changed = true;
            }
        }
        if !changed {
            break;
        }
        active = next;
    }
    best
}
