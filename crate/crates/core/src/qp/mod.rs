//! Sparse convex quadratic programs with named variables.

pub mod csc;
mod ipm;
pub mod ldl;
pub mod ordering;
pub mod problem;
pub mod solver;

pub use csc::CscMatrix;
pub use problem::{QpBuilder, QuadraticProgram, RowKind, RowName, VarKind, VarName};
pub use solver::{solve, solve_with_hint, Culprit, QpMethod, QpSettings, QpSolution, QpStatus};

use crate::error::{Error, Result};

/// Values of the variables `(kind, entity, t)` for `t` in `times`, in order.
pub fn variable_slice(
    qp: &QuadraticProgram,
    x: &[f64],
    kind: VarKind,
    entity: usize,
    times: impl IntoIterator<Item = usize>,
) -> Result<Vec<f64>> {
    times
        .into_iter()
        .map(|t| {
            let name = VarName::new(kind, entity, t);
            qp.var_index(&name)
                .map(|i| x[i])
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        })
        .collect()
}

/// Values of `(kind, e, time)` for the given entities at one time step.
pub fn variable_snapshot(
    qp: &QuadraticProgram,
    x: &[f64],
    kind: VarKind,
    entities: impl IntoIterator<Item = usize>,
    time: usize,
) -> Result<Vec<f64>> {
    entities
        .into_iter()
        .map(|e| {
            let name = VarName::new(kind, e, time);
            qp.var_index(&name)
                .map(|i| x[i])
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const INF: f64 = f64::INFINITY;

    fn generic(i: usize) -> VarName {
        VarName::new(VarKind::Generic, i, 0)
    }

    fn row(i: usize) -> RowName {
        RowName::new(RowKind::Generic, i, 0)
    }

    #[test]
    fn active_lower_bound() {
        let mut b = QpBuilder::new();
        let x = b.add_var(generic(0), 1.0, INF);
        b.add_quadratic(x, x, 1.0);
        let qp = b.build().unwrap();
        let s = solve(&qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(s.objective, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn unconstrained_quadratic() {
        let mut b = QpBuilder::new();
        let x = b.add_var(generic(0), -INF, INF);
        let y = b.add_var(generic(1), -INF, INF);
        // (x-3)^2 + (y+1)^2
        b.add_quadratic(x, x, 1.0);
        b.add_linear(x, -6.0);
        b.add_quadratic(y, y, 1.0);
        b.add_linear(y, 2.0);
        b.add_constant(10.0);
        let qp = b.build().unwrap();
        let s = solve(&qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[0], 3.0, epsilon = 1e-7);
        assert_relative_eq!(s.x[1], -1.0, epsilon = 1e-7);
        assert!(s.objective.abs() < 1e-10);
    }

    #[test]
    fn equality_constrained() {
        let mut b = QpBuilder::new();
        let x = b.add_var(generic(0), -INF, INF);
        let y = b.add_var(generic(1), -INF, INF);
        b.add_quadratic(x, x, 1.0);
        b.add_quadratic(y, y, 1.0);
        b.add_eq(row(0), &[(x, 1.0), (y, 1.0)], 1.0);
        let qp = b.build().unwrap();
        let s = solve(&qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(s.x[1], 0.5, epsilon = 1e-8);
        assert_relative_eq!(s.objective, 0.5, epsilon = 1e-8);
        assert!(s.prim_res <= 1e-8 && s.dual_res <= 1e-8);
    }

    #[test]
    fn linear_program_vertex() {
        // min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0  -> (1.6, 1.2)
        let mut b = QpBuilder::new();
        let x = b.add_var(generic(0), 0.0, INF);
        let y = b.add_var(generic(1), 0.0, INF);
        b.add_linear(x, -1.0);
        b.add_linear(y, -1.0);
        b.add_row(row(0), &[(x, 1.0), (y, 2.0)], -INF, 4.0);
        b.add_row(row(1), &[(x, 3.0), (y, 1.0)], -INF, 6.0);
        let qp = b.build().unwrap();
        let s = solve(&qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[0], 1.6, epsilon = 1e-7);
        assert_relative_eq!(s.x[1], 1.2, epsilon = 1e-7);
    }

    #[test]
    fn interior_point_solves_small_problems() {
        let mut b = QpBuilder::new();
        let x = b.add_var(generic(0), 0.0, INF);
        let y = b.add_var(generic(1), 0.0, INF);
        b.add_linear(x, -1.0);
        b.add_linear(y, -1.0);
        b.add_row(row(0), &[(x, 1.0), (y, 2.0)], -INF, 4.0);
        b.add_row(row(1), &[(x, 3.0), (y, 1.0)], -INF, 6.0);
        b.add_eq(row(2), &[(x, 1.0), (y, -1.0)], 0.4);
        let qp = b.build().unwrap();
        let s = solve(&qp, &QpSettings::interior_point());
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[0], 1.6, epsilon = 1e-7);
        assert_relative_eq!(s.x[1], 1.2, epsilon = 1e-7);
    }

    #[test]
    fn interior_point_falls_back_on_infeasible() {
        let mut b = QpBuilder::new();
        let x = b.add_var(generic(0), 0.0, 1.0);
        b.add_quadratic(x, x, 1.0);
        b.add_row(row(7), &[(x, 1.0)], 2.0, INF);
        let qp = b.build().unwrap();
        let s = solve(&qp, &QpSettings::interior_point());
        assert_eq!(s.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn infeasible_detected_with_culprit() {
        let mut b = QpBuilder::new();
        let x = b.add_var(generic(0), 0.0, 1.0);
        b.add_quadratic(x, x, 1.0);
        b.add_row(row(7), &[(x, 1.0)], 2.0, INF);
        let qp = b.build().unwrap();
        let s = solve(&qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::PrimalInfeasible);
        assert!(s.culprit.is_some());
    }

    #[test]
    fn unbounded_detected() {
        let mut b = QpBuilder::new();
        let x = b.add_var(generic(0), -INF, INF);
        b.add_linear(x, 1.0);
        let qp = b.build().unwrap();
        let s = solve(&qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::DualInfeasible);
    }

    #[test]
    fn non_psd_rejected() {
        let mut b = QpBuilder::new();
        let x = b.add_var(generic(0), -INF, INF);
        b.add_quadratic(x, x, -1.0);
        assert!(b.build().is_err());
    }

    #[test]
    fn inverted_bounds_rejected() {
        let mut b = QpBuilder::new();
        b.add_var(generic(0), 1.0, 0.0);
        assert!(b.build().is_err());
    }

    #[test]
    fn deterministic() {
        let mut b = QpBuilder::new();
        let v: Vec<_> = (0..5).map(|i| b.add_var(generic(i), -1.0, 1.0)).collect();
        for i in 0..5 {
            b.add_quadratic(v[i], v[i], 1.0 + i as f64);
            b.add_linear(v[i], (i as f64).cos());
            if i > 0 {
                b.add_quadratic(v[i - 1], v[i], 0.3);
            }
        }
        b.add_row(row(0), &[(v[0], 1.0), (v[4], 1.0)], 0.5, INF);
        let qp = b.build().unwrap();
        let a = solve(&qp, &QpSettings::default());
        let c = solve(&qp, &QpSettings::default());
        assert_eq!(a.x, c.x);
    }

    #[test]
    fn slices_follow_assembly_order() {
        let mut b = QpBuilder::new();
        for l in 1..=3 {
            for t in 0..3 {
                b.add_var(VarName::new(VarKind::Hvac, l, t), (l * 10 + t) as f64, (l * 10 + t) as f64);
            }
        }
        for k in 1..=4 {
            b.add_var(VarName::new(VarKind::Frequency, k, 2), 0.0, 0.0);
        }
        let qp = b.build().unwrap();
        let x: Vec<f64> = (0..qp.n_vars()).map(|i| i as f64).collect();
        let h = variable_slice(&qp, &x, VarKind::Hvac, 1, 0..3).unwrap();
        assert_eq!(h, vec![0.0, 1.0, 2.0]);
        let f = variable_snapshot(&qp, &x, VarKind::Frequency, 1..=4, 2).unwrap();
        assert_eq!(f.len(), 4);
        assert!(matches!(
            variable_slice(&qp, &x, VarKind::Hvac, 9, 0..1),
            Err(Error::UnknownVariable(_))
        ));
        let s = solve(&qp, &QpSettings::default());
        let h = variable_slice(&qp, &s.x, VarKind::Hvac, 2, 0..3).unwrap();
        for (t, v) in h.iter().enumerate() {
            assert_relative_eq!(*v, (20 + t) as f64, epsilon = 1e-7);
        }
    }

    #[test]
    fn triplet_dump_has_header() {
        let mut b = QpBuilder::new();
        let x = b.add_var(generic(0), 0.0, 1.0);
        b.add_quadratic(x, x, 1.0);
        let qp = b.build().unwrap();
        let mut out = Vec::new();
        qp.write_triplets(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("qp 1 0\nP 1\n0 0 2e0\n"));
    }
}
