//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use btg_core::controllers::{compare_designs, BangBangConfig, HorizonComparison, HorizonConfig};
use btg_core::qp::{solve, QpBuilder, QpSettings, QpStatus, VarKind, VarName};
use btg_core::sim::Models;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct BoxQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

pub fn random_box_qp(rng: &mut ChaCha8Rng) -> BoxQp {
    let n = rng.random_range(1..=20);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
    let q = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let lb = DVector::from_fn(n, |_, _| rng.random_range(-2.0..0.0));
    let ub = DVector::from_fn(n, |i, _| lb[i] + rng.random_range(0.1..3.0));
    BoxQp { p, q, lb, ub }
}

pub fn projected_gradient(qp: &BoxQp) -> DVector<f64> {
    let n = qp.q.len();
    let lmax = qp.p.symmetric_eigenvalues().max();
    let step = 1.0 / lmax;
    let project = |v: DVector<f64>| v.zip_zip_map(&qp.lb, &qp.ub, |x, l, u| x.max(l).min(u));
    let mut x = project(DVector::zeros(n));
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let g = &qp.p * &y + &qp.q;
        let x_new = project(&y - g * step);
        let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let y_next = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        // Gradient restart keeps the momentum from oscillating.
        if (&y - &x_new).dot(&(&x_new - &x)) > 0.0 {
            t = 1.0;
            y = x_new.clone();
        } else {
            t = t_new;
            y = y_next;
        }
        x = x_new;
        let g = &qp.p * &x + &qp.q;
        let stationarity = (&x - project(&x - &g)).amax();
        if stationarity < 1e-12 {
            break;
        }
    }
    x
}

/// Largest deviation from the projected-gradient oracle over 100 random
/// box-constrained QPs with up to 20 variables; `Err` names the first case
/// the solver does not declare optimal.
pub fn box_qp_oracle_error(settings: &QpSettings) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let bq = random_box_qp(&mut rng);
        let n = bq.q.len();
        let mut b = QpBuilder::new();
        for i in 0..n {
            b.add_var(VarName::new(VarKind::Generic, i, 0), bq.lb[i], bq.ub[i]);
        }
        for i in 0..n {
            b.add_linear(i, bq.q[i]);
            b.add_quadratic(i, i, 0.5 * bq.p[(i, i)]);
            for j in i + 1..n {
                b.add_quadratic(i, j, bq.p[(i, j)]);
            }
        }
        let qp = b.build().map_err(|e| e.to_string())?;
        let sol = solve(&qp, settings);
        if sol.status != QpStatus::Optimal {
            return Err(format!("case {case}: status {:?}", sol.status));
        }
        let oracle = projected_gradient(&bq);
        worst = worst.max((DVector::from_column_slice(&sol.x) - &oracle).amax());
    }
    Ok(worst)
}

pub fn design_horizon() -> HorizonConfig {
    HorizonConfig {
        t_p: 300.0,
        h_g: 10.0,
        h_b: 100.0,
        order: 1,
    }
}

/// Twenty daytime instances of the nine-bus case with 10 to 30 buildings
/// whose zones start just below the upper comfort limit, so every design
/// has to cool.
pub fn design_instances() -> Vec<HorizonComparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let settings = QpSettings::interior_point();
    (0..20)
        .map(|case| {
            let n_b = rng.random_range(10..=30);
            let models = Models::bundled("case9", n_b, case, design_horizon()).unwrap();
            let t0 = 100.0 * rng.random_range(330..=680) as f64;
            let (_, hi) = models.bounds.zone_band(t0);
            let zone = hi - rng.random_range(0.0..5e-4);
            let xg = models.initial_grid_state(t0, &settings).unwrap();
            let xb = models.initial_building_state(t0, zone);
            compare_designs(
                &models.setup(),
                t0,
                &[xg],
                &[xb],
                &BangBangConfig::default(),
                &models.forecast,
                &settings,
            )
            .unwrap()
        })
        .collect()
}
