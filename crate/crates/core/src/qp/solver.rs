//! Operator-splitting (ADMM) solver for convex QPs.
//!
//! Solves `min ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u` where box bounds are appended
//! to `A` as identity rows. The problem is equilibrated with Ruiz scaling,
//! each iteration solves one quasi-definite KKT system with a cached sparse
//! LDLᵀ factorization, and an active-set polishing step refines the
//! solution once the ADMM iterates are close.

use super::csc::CscMatrix;
use super::ldl::LdlFactor;
use super::problem::{QuadraticProgram, RowName, VarName};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    /// Absolute tolerance on the scaled primal and dual residuals.
    pub eps_abs: f64,
    /// Relative tolerance on the scaled residuals.
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub polish: bool,
    pub polish_delta: f64,
    pub polish_refine_iters: usize,
    pub check_interval: usize,
    pub method: QpMethod,
}

impl QpSettings {
    /// Defaults with the interior point method, suited to the stiff
    /// equality-constrained horizon problems.
    pub fn interior_point() -> Self {
        Self {
            method: QpMethod::InteriorPoint,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QpMethod {
    /// Operator splitting with active-set polishing.
    #[default]
    Admm,
    /// Primal-dual interior point with Mehrotra correction; falls back to
    /// ADMM for infeasibility certificates when it does not converge.
    InteriorPoint,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 0.0,
            eps_prim_inf: 1e-6,
            eps_dual_inf: 1e-6,
            max_iter: 40_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            polish: true,
            polish_delta: 1e-7,
            polish_refine_iters: 5,
            check_interval: 5,
            method: QpMethod::Admm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    /// The objective is unbounded below on the feasible set.
    DualInfeasible,
    IterationLimit,
}

/// Constraint that carries the infeasibility certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Culprit {
    Row(RowName),
    Bound(VarName),
}

impl std::fmt::Display for Culprit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Culprit::Row(r) => write!(f, "row {r}"),
            Culprit::Bound(v) => write!(f, "bound on {v}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: Vec<f64>,
    /// Multipliers of the general rows.
    pub y_rows: Vec<f64>,
    /// Multipliers of the box bounds (zero for unbounded variables).
    pub y_bounds: Vec<f64>,
    pub objective: f64,
    /// Scaled residuals used for termination.
    pub prim_res: f64,
    pub dual_res: f64,
    /// Residuals of the original, unscaled problem.
    pub prim_res_unscaled: f64,
    pub dual_res_unscaled: f64,
    pub iterations: usize,
    pub polished: bool,
    pub culprit: Option<Culprit>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

pub(super) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub(super) fn clip(v: f64, l: f64, u: f64) -> f64 {
    v.max(l).min(u)
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;

/// Scaled problem data.
pub(super) struct Scaled {
    pub(super) n: usize,
    pub(super) m: usize,
    pub(super) p: CscMatrix,
    pub(super) q: Vec<f64>,
    pub(super) a: CscMatrix,
    pub(super) at: CscMatrix,
    pub(super) l: Vec<f64>,
    pub(super) u: Vec<f64>,
    pub(super) d: Vec<f64>,
    pub(super) e: Vec<f64>,
    pub(super) c: f64,
    /// Variables owning a box row, in row order after the general rows.
    bound_vars: Vec<usize>,
    m_rows: usize,
}

pub(super) fn stack_and_scale(qp: &QuadraticProgram, iters: usize) -> Scaled {
    let n = qp.n_vars();
    let m_rows = qp.n_rows();
    let bound_vars: Vec<usize> = (0..n)
        .filter(|&j| qp.var_lower[j].is_finite() || qp.var_upper[j].is_finite())
        .collect();
    let m = m_rows + bound_vars.len();
    let mut trips: Vec<_> = qp.a.triplets().collect();
    trips.extend(bound_vars.iter().enumerate().map(|(k, &j)| (m_rows + k, j, 1.0)));
    let mut a = CscMatrix::from_triplets(m, n, &trips);
    let mut l = qp.row_lower.clone();
    let mut u = qp.row_upper.clone();
    l.extend(bound_vars.iter().map(|&j| qp.var_lower[j]));
    u.extend(bound_vars.iter().map(|&j| qp.var_upper[j]));
    let mut p = qp.p.clone();
    let mut q = qp.q.clone();

    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    let bound = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let pn = p.sym_upper_col_norms_inf();
        let an = a.col_norms_inf();
        let dk: Vec<f64> = (0..n).map(|j| 1.0 / bound(pn[j].max(an[j])).sqrt()).collect();
        let rn = a.row_norms_inf();
        let ek: Vec<f64> = rn.iter().map(|r| 1.0 / bound(*r).sqrt()).collect();
        p.scale(&dk, &dk);
        a.scale(&ek, &dk);
        for j in 0..n {
            d[j] *= dk[j];
            q[j] *= dk[j];
        }
        for i in 0..m {
            e[i] *= ek[i];
        }
        // Cost scaling.
        let pn = p.sym_upper_col_norms_inf();
        let mean = if n > 0 { pn.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let gamma = 1.0 / bound(mean.max(norm_inf(&q)));
        for v in &mut p.values {
            *v *= gamma;
        }
        for v in &mut q {
            *v *= gamma;
        }
        c *= gamma;
    }
    for i in 0..m {
        l[i] *= e[i];
        u[i] *= e[i];
    }
    let at = a.transpose();
    Scaled {
        n,
        m,
        p,
        q,
        a,
        at,
        l,
        u,
        d,
        e,
        c,
        bound_vars,
        m_rows,
    }
}

/// KKT matrix `[P + σI, Aᵀ; A, −diag(1/ρ)]` (upper triangle) with the
/// positions of entries that change between factorizations.
pub(super) struct Kkt {
    pub(super) mat: CscMatrix,
    /// Position of each `P_jj + σ` entry.
    p_diag: Vec<usize>,
    /// Position of each `−1/ρ_i` entry.
    rho_diag: Vec<usize>,
    pub(super) ldl: LdlFactor,
}

impl Kkt {
    pub(super) fn new(s: &Scaled, sigma: f64, rho: &[f64]) -> Option<Self> {
        let (n, m) = (s.n, s.m);
        let mut trips: Vec<_> = s.p.triplets().collect();
        trips.extend((0..n).map(|j| (j, j, sigma)));
        for (i, j, v) in s.a.triplets() {
            trips.push((j, n + i, v));
        }
        trips.extend((0..m).map(|i| (n + i, n + i, -1.0 / rho[i])));
        let mat = CscMatrix::from_triplets(n + m, n + m, &trips);
        let find_diag = |c: usize| -> usize {
            let range = mat.colptr[c]..mat.colptr[c + 1];
            range.clone().find(|&p| mat.rowind[p] == c).expect("diagonal present")
        };
        let p_diag = (0..n).map(find_diag).collect();
        let rho_diag = (n..n + m).map(find_diag).collect();
        let mut ldl = LdlFactor::analyze(&mat).ok()?;
        ldl.factor().ok()?;
        Some(Self {
            mat,
            p_diag,
            rho_diag,
            ldl,
        })
    }

    pub(super) fn update_rho(&mut self, rho: &[f64]) -> bool {
        for (i, &p) in self.rho_diag.iter().enumerate() {
            self.mat.values[p] = -1.0 / rho[i];
            self.ldl.set_value(p, self.mat.values[p]);
        }
        self.ldl.factor().is_ok()
    }
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
}

fn residuals(s: &Scaled, x: &[f64], z: &[f64], y: &[f64], set: &QpSettings) -> (Residuals, Vec<f64>, Vec<f64>, Vec<f64>) {
    let ax = s.a.mul_vec(x);
    let px = s.p.sym_upper_mul_vec(x);
    let aty = s.at.mul_vec(y);
    let prim = ax.iter().zip(z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let dual = (0..s.n).fold(0.0f64, |m, j| m.max((px[j] + s.q[j] + aty[j]).abs()));
    let eps_prim = set.eps_abs + set.eps_rel * norm_inf(&ax).max(norm_inf(z));
    let eps_dual = set.eps_abs + set.eps_rel * norm_inf(&px).max(norm_inf(&aty)).max(norm_inf(&s.q));
    (
        Residuals {
            prim,
            dual,
            eps_prim,
            eps_dual,
        },
        ax,
        px,
        aty,
    )
}

fn rho_vector(s: &Scaled, rho: f64) -> Vec<f64> {
    (0..s.m)
        .map(|i| {
            if s.l[i] == s.u[i] {
                RHO_EQ_FACTOR * rho
            } else if s.l[i] == f64::NEG_INFINITY && s.u[i] == f64::INFINITY {
                RHO_MIN
            } else {
                rho
            }
        })
        .collect()
}

/// Solve `qp` from a cold start.
pub fn solve(qp: &QuadraticProgram, settings: &QpSettings) -> QpSolution {
    solve_with_hint(qp, settings, None)
}

/// Solve `qp`, optionally starting from a primal point `x0`.
pub fn solve_with_hint(qp: &QuadraticProgram, settings: &QpSettings, x0: Option<&[f64]>) -> QpSolution {
    let s = stack_and_scale(qp, settings.scaling_iters);
    if settings.method == QpMethod::InteriorPoint {
        if let Some(sol) = super::ipm::solve_scaled(qp, &s, settings, x0) {
            return sol;
        }
    }
    admm(qp, &s, settings, x0)
}

fn admm(qp: &QuadraticProgram, s: &Scaled, settings: &QpSettings, x0: Option<&[f64]>) -> QpSolution {
    let (n, m) = (s.n, s.m);

    let mut x = vec![0.0; n];
    if let Some(x0) = x0 {
        for j in 0..n {
            x[j] = x0[j] / s.d[j];
        }
    }
    let ax0 = s.a.mul_vec(&x);
    let mut z: Vec<f64> = (0..m).map(|i| clip(ax0[i], s.l[i], s.u[i])).collect();
    let mut y = vec![0.0; m];

    let mut rho = settings.rho;
    let mut rho_vec = rho_vector(&s, rho);
    let Some(mut kkt) = Kkt::new(&s, settings.sigma, &rho_vec) else {
        return failed(qp, &s, QpStatus::IterationLimit, x, y, 0);
    };

    let mut rhs = vec![0.0; n + m];
    let mut x_tilde = vec![0.0; n];
    let mut z_tilde = vec![0.0; m];
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; m];
    let mut polish_threshold = 1e-3f64;
    let alpha = settings.alpha;
    let sigma = settings.sigma;

    for iter in 1..=settings.max_iter {
        for j in 0..n {
            rhs[j] = sigma * x[j] - s.q[j];
        }
        for i in 0..m {
            rhs[n + i] = z[i] - y[i] / rho_vec[i];
        }
        kkt.ldl.solve(&mut rhs);
        x_tilde.copy_from_slice(&rhs[..n]);
        for i in 0..m {
            z_tilde[i] = z[i] + (rhs[n + i] - y[i]) / rho_vec[i];
        }
        for j in 0..n {
            let xn = alpha * x_tilde[j] + (1.0 - alpha) * x[j];
            dx[j] = xn - x[j];
            x[j] = xn;
        }
        for i in 0..m {
            let zh = alpha * z_tilde[i] + (1.0 - alpha) * z[i];
            let zn = clip(zh + y[i] / rho_vec[i], s.l[i], s.u[i]);
            let yn = y[i] + rho_vec[i] * (zh - zn);
            dy[i] = yn - y[i];
            y[i] = yn;
            z[i] = zn;
        }

        let check = iter % settings.check_interval == 0 || iter == settings.max_iter;
        if !check {
            continue;
        }
        let (res, ax, px, aty) = residuals(&s, &x, &z, &y, settings);
        if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
            if settings.polish {
                if let Some(sol) = polish(qp, &s, &kkt, settings.sigma, &z, &y, settings, iter) {
                    return sol;
                }
            }
            return finish(qp, &s, QpStatus::Optimal, &x, &z, &y, iter, false, None);
        }
        if let Some(culprit) = primal_infeasible(&s, &dy, settings.eps_prim_inf, qp) {
            return finish(qp, &s, QpStatus::PrimalInfeasible, &x, &z, &y, iter, false, Some(culprit));
        }
        if dual_infeasible(&s, &dx, settings.eps_dual_inf) {
            return finish(qp, &s, QpStatus::DualInfeasible, &x, &z, &y, iter, false, None);
        }
        if settings.polish && res.prim.max(res.dual) <= polish_threshold {
            if let Some(sol) = polish(qp, &s, &kkt, settings.sigma, &z, &y, settings, iter) {
                return sol;
            }
            polish_threshold = (polish_threshold * 0.1).max(settings.eps_abs);
        }
        if settings.adaptive_rho && iter % settings.adaptive_rho_interval == 0 {
            let prim_norm = norm_inf(&ax).max(norm_inf(&z)).max(1e-30);
            let dual_norm = norm_inf(&px).max(norm_inf(&aty)).max(norm_inf(&s.q)).max(1e-30);
            let ratio = (res.prim / prim_norm) / (res.dual / dual_norm).max(1e-30);
            let new_rho = clip(rho * ratio.sqrt(), RHO_MIN, RHO_MAX);
            if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                rho = new_rho;
                rho_vec = rho_vector(&s, rho);
                if !kkt.update_rho(&rho_vec) {
                    break;
                }
            }
        }
    }
    let iters = settings.max_iter;
    finish(qp, &s, QpStatus::IterationLimit, &x, &z, &y, iters, false, None)
}

fn primal_infeasible(s: &Scaled, dy_s: &[f64], eps: f64, qp: &QuadraticProgram) -> Option<Culprit> {
    // Work with the unscaled certificate E δy.
    let dy: Vec<f64> = (0..s.m).map(|i| s.e[i] * dy_s[i]).collect();
    let norm = norm_inf(&dy);
    if norm < 1e-30 {
        return None;
    }
    let at_dy_s = s.at.mul_vec(dy_s);
    let at_dy = (0..s.n).fold(0.0f64, |mx, j| mx.max((at_dy_s[j] / s.d[j]).abs()));
    if at_dy > eps * norm {
        return None;
    }
    let mut support = 0.0;
    for i in 0..s.m {
        let (l, u) = (s.l[i] / s.e[i], s.u[i] / s.e[i]);
        if dy[i] > 0.0 {
            if u.is_infinite() {
                if dy[i] > eps * norm {
                    return None;
                }
            } else {
                support += u * dy[i];
            }
        } else if dy[i] < 0.0 {
            if l.is_infinite() {
                if dy[i] < -eps * norm {
                    return None;
                }
            } else {
                support += l * dy[i];
            }
        }
    }
    if support >= -eps * norm {
        return None;
    }
    let worst = (0..s.m)
        .max_by(|&a, &b| dy[a].abs().total_cmp(&dy[b].abs()).then(b.cmp(&a)))
        .unwrap_or(0);
    Some(if worst < s.m_rows {
        Culprit::Row(qp.row_names[worst])
    } else {
        Culprit::Bound(qp.var_names[s.bound_vars[worst - s.m_rows]])
    })
}

fn dual_infeasible(s: &Scaled, dx_s: &[f64], eps: f64) -> bool {
    let dx: Vec<f64> = (0..s.n).map(|j| s.d[j] * dx_s[j]).collect();
    let norm = norm_inf(&dx);
    if norm < 1e-30 {
        return false;
    }
    let pdx = s.p.sym_upper_mul_vec(dx_s);
    let pdx_norm = (0..s.n).fold(0.0f64, |mx, j| mx.max((pdx[j] / s.d[j]).abs())) / s.c;
    if pdx_norm > eps * norm {
        return false;
    }
    let qdx: f64 = s.q.iter().zip(dx_s).map(|(a, b)| a * b).sum::<f64>() / s.c;
    if qdx > -eps * norm {
        return false;
    }
    let adx = s.a.mul_vec(dx_s);
    for i in 0..s.m {
        let v = adx[i] / s.e[i];
        if s.u[i].is_finite() && v > eps * norm {
            return false;
        }
        if s.l[i].is_finite() && v < -eps * norm {
            return false;
        }
    }
    true
}

#[derive(Clone, Copy, PartialEq)]
enum Active {
    No,
    Lower,
    Upper,
    Fixed,
}

/// Solve the equality-constrained problem on the active set guessed from
/// `(z, y)`; `reg` is the primal regularization already in `kkt`.
#[allow(clippy::too_many_arguments)]
pub(super) fn polish(
    qp: &QuadraticProgram,
    s: &Scaled,
    kkt: &Kkt,
    reg: f64,
    z: &[f64],
    y: &[f64],
    set: &QpSettings,
    iter: usize,
) -> Option<QpSolution> {
    let (n, m) = (s.n, s.m);
    let active: Vec<Active> = (0..m)
        .map(|i| {
            if s.l[i] == s.u[i] {
                Active::Fixed
            } else if z[i] - s.l[i] < -y[i] {
                Active::Lower
            } else if s.u[i] - z[i] < y[i] {
                Active::Upper
            } else {
                Active::No
            }
        })
        .collect();
    let delta = set.polish_delta;

    // Regularized reduced KKT on the same sparsity pattern: inactive rows
    // are decoupled by zeroing their A entries and setting the diagonal to -1.
    let mut vals = kkt.mat.values.clone();
    for &p in &kkt.p_diag {
        vals[p] = vals[p] - reg + delta;
    }
    for i in 0..m {
        let col = n + i;
        let is_active = active[i] != Active::No;
        for p in kkt.mat.colptr[col]..kkt.mat.colptr[col + 1] {
            if kkt.mat.rowind[p] == col {
                vals[p] = if is_active { -delta } else { -1.0 };
            } else if !is_active {
                vals[p] = 0.0;
            }
        }
    }
    let mut ldl = kkt.ldl.clone();
    ldl.set_values(&vals);
    ldl.factor().ok()?;

    let mut rhs = vec![0.0; n + m];
    for j in 0..n {
        rhs[j] = -s.q[j];
    }
    for i in 0..m {
        rhs[n + i] = match active[i] {
            Active::Lower | Active::Fixed => s.l[i],
            Active::Upper => s.u[i],
            Active::No => 0.0,
        };
    }
    // Exact reduced system K0 (no regularization) for iterative refinement.
    let k0_mul = |v: &[f64]| -> Vec<f64> {
        let (vx, vy) = v.split_at(n);
        let mut out = vec![0.0; n + m];
        let px = s.p.sym_upper_mul_vec(vx);
        out[..n].copy_from_slice(&px);
        let ax = s.a.mul_vec(vx);
        for i in 0..m {
            if active[i] == Active::No {
                out[n + i] = -vy[i];
            } else {
                out[n + i] = ax[i];
            }
        }
        let masked_y: Vec<f64> = (0..m).map(|i| if active[i] == Active::No { 0.0 } else { vy[i] }).collect();
        let aty = s.at.mul_vec(&masked_y);
        for j in 0..n {
            out[j] += aty[j];
        }
        out
    };
    let mut sol = rhs.clone();
    ldl.solve(&mut sol);
    for _ in 0..set.polish_refine_iters {
        let k0s = k0_mul(&sol);
        let mut r: Vec<f64> = rhs.iter().zip(&k0s).map(|(a, b)| a - b).collect();
        if norm_inf(&r) < 1e-15 {
            break;
        }
        ldl.solve(&mut r);
        for (a, b) in sol.iter_mut().zip(&r) {
            *a += b;
        }
    }
    let xp = sol[..n].to_vec();
    let yp: Vec<f64> = (0..m)
        .map(|i| match active[i] {
            Active::No => 0.0,
            Active::Lower => sol[n + i].min(0.0),
            Active::Upper => sol[n + i].max(0.0),
            Active::Fixed => sol[n + i],
        })
        .collect();
    let axp = s.a.mul_vec(&xp);
    let zp: Vec<f64> = (0..m).map(|i| clip(axp[i], s.l[i], s.u[i])).collect();
    let (res, ..) = residuals(s, &xp, &zp, &yp, set);
    if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
        Some(finish(qp, s, QpStatus::Optimal, &xp, &zp, &yp, iter, true, None))
    } else {
        None
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn finish(
    qp: &QuadraticProgram,
    s: &Scaled,
    status: QpStatus,
    x_s: &[f64],
    z_s: &[f64],
    y_s: &[f64],
    iterations: usize,
    polished: bool,
    culprit: Option<Culprit>,
) -> QpSolution {
    let set = QpSettings {
        eps_rel: 0.0,
        ..QpSettings::default()
    };
    let (res, ax, _, _) = residuals(s, x_s, z_s, y_s, &set);
    let x: Vec<f64> = (0..s.n).map(|j| s.d[j] * x_s[j]).collect();
    let y: Vec<f64> = (0..s.m).map(|i| s.e[i] * y_s[i] / s.c).collect();
    let prim_u = (0..s.m).fold(0.0f64, |mx, i| mx.max(((ax[i] - z_s[i]) / s.e[i]).abs()));
    // Unscaled dual residual P x + q + Aᵀ y.
    let px = qp.p.sym_upper_mul_vec(&x);
    let mut grad: Vec<f64> = px.iter().zip(&qp.q).map(|(a, b)| a + b).collect();
    let aty = qp.a.tmul_vec(&y[..s.m_rows]);
    for j in 0..s.n {
        grad[j] += aty[j];
    }
    let mut y_bounds = vec![0.0; s.n];
    for (k, &j) in s.bound_vars.iter().enumerate() {
        y_bounds[j] = y[s.m_rows + k];
        grad[j] += y_bounds[j];
    }
    let dual_u = norm_inf(&grad);
    QpSolution {
        status,
        objective: qp.objective(&x),
        x,
        y_rows: y[..s.m_rows].to_vec(),
        y_bounds,
        prim_res: res.prim,
        dual_res: res.dual,
        prim_res_unscaled: prim_u,
        dual_res_unscaled: dual_u,
        iterations,
        polished,
        culprit,
    }
}

fn failed(qp: &QuadraticProgram, s: &Scaled, status: QpStatus, x: Vec<f64>, y: Vec<f64>, it: usize) -> QpSolution {
    let z = s.a.mul_vec(&x);
    finish(qp, s, status, &x, &z, &y, it, false, None)
}
