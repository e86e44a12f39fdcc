//! Primal-dual interior point method with Mehrotra's predictor-corrector
//! on the Ruiz-scaled problem.
//!
//! Every finite one-sided bound of a row `l ≤ a x ≤ u` gets a slack and a
//! multiplier; rows with `l = u` stay equalities. The Newton system is the
//! quasi-definite KKT matrix `[P + δI, Aᵀ; A, −diag(1/ρ)]` already used by
//! ADMM, with `ρ_i = z_l/s_l + z_u/s_u` on inequality rows, so its symbolic
//! factorization is shared.

use super::problem::QuadraticProgram;
use super::solver::{clip, finish, norm_inf, polish, Kkt, QpSettings, QpSolution, QpStatus, Scaled};

const PRIMAL_REG: f64 = 1e-8;
const EQ_RHO: f64 = 1e8;
const FREE_RHO: f64 = 1e-12;
const RHO_CAP: f64 = 1e30;
const MAX_ITER: usize = 80;
const STEP_FRACTION: f64 = 0.995;
const REFINE_ITERS: usize = 10;
const MIN_STEP: f64 = 1e-6;
const MAX_STALLED: usize = 5;

#[derive(Clone, Copy, PartialEq)]
enum RowType {
    Equality,
    Bounded { lower: bool, upper: bool },
    Free,
}

/// Solve the scaled problem; `None` when the method fails to converge,
/// typically on infeasible or unbounded problems.
pub(super) fn solve_scaled(
    qp: &QuadraticProgram,
    s: &Scaled,
    set: &QpSettings,
    x0: Option<&[f64]>,
) -> Option<QpSolution> {
    let (n, m) = (s.n, s.m);
    let kind: Vec<RowType> = (0..m)
        .map(|i| {
            let (lo, hi) = (s.l[i].is_finite(), s.u[i].is_finite());
            if lo && hi && s.l[i] == s.u[i] {
                RowType::Equality
            } else if lo || hi {
                RowType::Bounded { lower: lo, upper: hi }
            } else {
                RowType::Free
            }
        })
        .collect();
    let n_comp: usize = kind
        .iter()
        .map(|k| match k {
            RowType::Bounded { lower, upper } => *lower as usize + *upper as usize,
            _ => 0,
        })
        .sum();

    let mut rho: Vec<f64> = kind
        .iter()
        .map(|k| match k {
            RowType::Equality => EQ_RHO,
            RowType::Bounded { .. } => 1.0,
            RowType::Free => FREE_RHO,
        })
        .collect();
    let mut kkt = Kkt::new(s, PRIMAL_REG, &rho)?;
    // Exact barrier weights; the factorized matrix caps them at the
    // equality regularization and refinement recovers the exact solve.
    let mut sigma = rho.clone();

    // Starting point: the least-squares fit of the regularized system, or
    // the scaled hint, with slacks pushed into the interior.
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    if let Some(h) = x0 {
        for j in 0..n {
            x[j] = h[j] / s.d[j];
        }
    } else {
        let mut rhs = vec![0.0; n + m];
        for j in 0..n {
            rhs[j] = -s.q[j];
        }
        for i in 0..m {
            rhs[n + i] = match kind[i] {
                RowType::Equality => s.l[i],
                RowType::Bounded { lower, upper } => match (lower, upper) {
                    (true, true) => 0.5 * (s.l[i] + s.u[i]),
                    (true, false) => s.l[i],
                    _ => s.u[i],
                },
                RowType::Free => 0.0,
            };
        }
        kkt.ldl.solve(&mut rhs);
        x.copy_from_slice(&rhs[..n]);
    }
    let ax = s.a.mul_vec(&x);
    let mut sl = vec![0.0; m];
    let mut su = vec![0.0; m];
    let mut zl = vec![0.0; m];
    let mut zu = vec![0.0; m];
    for i in 0..m {
        if let RowType::Bounded { lower, upper } = kind[i] {
            if lower {
                sl[i] = (ax[i] - s.l[i]).max(1.0);
                zl[i] = 1.0;
            }
            if upper {
                su[i] = (s.u[i] - ax[i]).max(1.0);
                zu[i] = 1.0;
            }
            y[i] = zu[i] - zl[i];
        }
    }

    let mut rhs = vec![0.0; n + m];
    let mut sol = vec![0.0; n + m];
    let eps = set.eps_abs.max(1e-12);
    let mut stalled = 0;
    for iter in 1..=MAX_ITER {
        let ax = s.a.mul_vec(&x);
        let px = s.p.sym_upper_mul_vec(&x);
        let aty = s.at.mul_vec(&y);
        let r_d: Vec<f64> = (0..n).map(|j| px[j] + s.q[j] + aty[j]).collect();
        let mut r_p = vec![0.0; m];
        let mut r_l = vec![0.0; m];
        let mut r_u = vec![0.0; m];
        let mut prim = 0.0f64;
        for i in 0..m {
            match kind[i] {
                RowType::Equality => {
                    r_p[i] = ax[i] - s.l[i];
                    prim = prim.max(r_p[i].abs());
                }
                RowType::Bounded { lower, upper } => {
                    if lower {
                        r_l[i] = ax[i] - sl[i] - s.l[i];
                        prim = prim.max(r_l[i].abs());
                    }
                    if upper {
                        r_u[i] = ax[i] + su[i] - s.u[i];
                        prim = prim.max(r_u[i].abs());
                    }
                }
                RowType::Free => {}
            }
        }
        let dual = norm_inf(&r_d);
        let gap: f64 = (0..m).map(|i| sl[i] * zl[i] + su[i] * zu[i]).sum();
        let mu = if n_comp > 0 { gap / n_comp as f64 } else { 0.0 };
        if !(prim.is_finite() && dual.is_finite() && mu.is_finite()) {
            return None;
        }
        if prim <= eps && dual <= eps && mu <= eps {
            let z: Vec<f64> = (0..m).map(|i| clip(ax[i], s.l[i], s.u[i])).collect();
            if set.polish {
                if let Some(sol) = polish(qp, s, &kkt, PRIMAL_REG, &z, &y, set, iter) {
                    return Some(sol);
                }
            }
            return Some(finish(qp, s, QpStatus::Optimal, &x, &z, &y, iter, false, None));
        }

        // Newton matrix for the current slacks and multipliers.
        for i in 0..m {
            if let RowType::Bounded { lower, upper } = kind[i] {
                let mut sig = 0.0;
                if lower {
                    sig += zl[i] / sl[i];
                }
                if upper {
                    sig += zu[i] / su[i];
                }
                sigma[i] = sig.max(1.0 / RHO_CAP);
                rho[i] = sigma[i].min(EQ_RHO);
            }
        }
        if !kkt.update_rho(&rho) {
            return None;
        }

        // Predictor (σ = 0) then corrector with the centering target.
        let mut target = vec![(0.0, 0.0); m];
        let mut step = Direction::new(n, m);
        for phase in 0..2 {
            let (sigma_mu, corr) = if phase == 0 {
                (0.0, None)
            } else {
                let alpha = max_step(&kind, &sl, &su, &zl, &zu, &step);
                let gap_aff: f64 = (0..m)
                    .map(|i| {
                        (sl[i] + alpha * step.dsl[i]) * (zl[i] + alpha * step.dzl[i])
                            + (su[i] + alpha * step.dsu[i]) * (zu[i] + alpha * step.dzu[i])
                    })
                    .sum();
                let mu_aff = if n_comp > 0 { gap_aff / n_comp as f64 } else { 0.0 };
                let centering = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };
                (centering * mu, Some(step.clone()))
            };
            for i in 0..m {
                let (mut cl, mut cu) = (sl[i] * zl[i] - sigma_mu, su[i] * zu[i] - sigma_mu);
                if let Some(c) = &corr {
                    cl += c.dsl[i] * c.dzl[i];
                    cu += c.dsu[i] * c.dzu[i];
                }
                target[i] = (cl, cu);
            }
            for j in 0..n {
                rhs[j] = -r_d[j];
            }
            for i in 0..m {
                rhs[n + i] = match kind[i] {
                    RowType::Equality => -r_p[i],
                    RowType::Bounded { lower, upper } => {
                        let mut v = 0.0;
                        if upper {
                            v += (-target[i].1 + zu[i] * r_u[i]) / su[i];
                        }
                        if lower {
                            v += (target[i].0 + zl[i] * r_l[i]) / sl[i];
                        }
                        -v / sigma[i]
                    }
                    RowType::Free => 0.0,
                };
            }
            solve_refined(s, &mut kkt, &kind, &sigma, &rhs, &mut sol);
            let (dx, dy) = sol.split_at(n);
            let adx = s.a.mul_vec(dx);
            step.dx.copy_from_slice(dx);
            step.dy.copy_from_slice(dy);
            for i in 0..m {
                if let RowType::Bounded { lower, upper } = kind[i] {
                    // Multiplier steps follow dy from the solve; only the
                    // less active side of a two-sided row uses the
                    // complementarity relation, so large z/s never
                    // multiplies the slack step.
                    let dsl = adx[i] + r_l[i];
                    let dsu = -adx[i] - r_u[i];
                    let from_l = |dsl: f64| (-target[i].0 - zl[i] * dsl) / sl[i];
                    let from_u = |dsu: f64| (-target[i].1 - zu[i] * dsu) / su[i];
                    match (lower, upper) {
                        (true, false) => {
                            step.dsl[i] = dsl;
                            step.dzl[i] = -dy[i];
                        }
                        (false, true) => {
                            step.dsu[i] = dsu;
                            step.dzu[i] = dy[i];
                        }
                        _ => {
                            step.dsl[i] = dsl;
                            step.dsu[i] = dsu;
                            if zl[i] / sl[i] >= zu[i] / su[i] {
                                step.dzu[i] = from_u(dsu);
                                step.dzl[i] = step.dzu[i] - dy[i];
                            } else {
                                step.dzl[i] = from_l(dsl);
                                step.dzu[i] = dy[i] + step.dzl[i];
                            }
                        }
                    }
                }
            }
        }
        let full = max_step(&kind, &sl, &su, &zl, &zu, &step);
        stalled = if full < MIN_STEP { stalled + 1 } else { 0 };
        if stalled >= MAX_STALLED {
            return None;
        }
        let alpha = (STEP_FRACTION * max_step(&kind, &sl, &su, &zl, &zu, &step)).min(1.0);
        for j in 0..n {
            x[j] += alpha * step.dx[j];
        }
        for i in 0..m {
            match kind[i] {
                RowType::Equality => y[i] += alpha * step.dy[i],
                RowType::Bounded { .. } => {
                    sl[i] += alpha * step.dsl[i];
                    su[i] += alpha * step.dsu[i];
                    zl[i] += alpha * step.dzl[i];
                    zu[i] += alpha * step.dzu[i];
                    y[i] = zu[i] - zl[i];
                }
                RowType::Free => {}
            }
        }
    }
    None
}

#[derive(Clone)]
struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dsl: Vec<f64>,
    dsu: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
}

impl Direction {
    fn new(n: usize, m: usize) -> Self {
        Self {
            dx: vec![0.0; n],
            dy: vec![0.0; m],
            dsl: vec![0.0; m],
            dsu: vec![0.0; m],
            dzl: vec![0.0; m],
            dzu: vec![0.0; m],
        }
    }
}

/// Largest step in `[0, 1]` keeping all slacks and multipliers nonnegative.
fn max_step(kind: &[RowType], sl: &[f64], su: &[f64], zl: &[f64], zu: &[f64], d: &Direction) -> f64 {
    let mut alpha = 1.0f64;
    let mut limit = |v: f64, dv: f64| {
        if dv < 0.0 {
            alpha = alpha.min(-v / dv);
        }
    };
    for (i, k) in kind.iter().enumerate() {
        if let RowType::Bounded { lower, upper } = *k {
            if lower {
                limit(sl[i], d.dsl[i]);
                limit(zl[i], d.dzl[i]);
            }
            if upper {
                limit(su[i], d.dsu[i]);
                limit(zu[i], d.dzu[i]);
            }
        }
    }
    alpha
}

/// Solve the Newton system with iterative refinement against the
/// unregularized matrix (zero dual block on equality rows).
fn solve_refined(s: &Scaled, kkt: &mut Kkt, kind: &[RowType], sigma: &[f64], rhs: &[f64], sol: &mut [f64]) {
    let (n, m) = (s.n, s.m);
    sol.copy_from_slice(rhs);
    kkt.ldl.solve(sol);
    for _ in 0..REFINE_ITERS {
        let (vx, vy) = sol.split_at(n);
        let mut r = vec![0.0; n + m];
        let px = s.p.sym_upper_mul_vec(vx);
        let aty = s.at.mul_vec(vy);
        let ax = s.a.mul_vec(vx);
        for j in 0..n {
            r[j] = rhs[j] - px[j] - aty[j];
        }
        for i in 0..m {
            let diag = match kind[i] {
                RowType::Equality => 0.0,
                _ => -1.0 / sigma[i],
            };
            r[n + i] = rhs[n + i] - ax[i] - diag * vy[i];
        }
        if norm_inf(&r) <= 1e-14 * (1.0 + norm_inf(rhs)) {
            break;
        }
        kkt.ldl.solve(&mut r);
        for (a, b) in sol.iter_mut().zip(&r) {
            *a += b;
        }
    }
}
