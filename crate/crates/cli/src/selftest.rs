//! Quick property checks run by `btg selftest`.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use btg_core::controllers::{compare_designs, BangBangConfig, HorizonConfig};
use btg_core::gear::gear_coefficients;
use btg_core::network::{bundled_case, dc_angles, parse_case, ptdf, BUNDLED_CASES};
use btg_core::qp::{solve, QpBuilder, QpSettings, QpStatus, VarKind, VarName};
use btg_core::report::{read_costs_csv, write_costs_csv, CostBreakdown};
use btg_core::sim::Models;

type Check = Result<String, String>;

fn gear() -> Check {
    let expected: [(f64, Vec<f64>); 3] = [
        (1.0, vec![1.0]),
        (2.0 / 3.0, vec![4.0 / 3.0, -1.0 / 3.0]),
        (6.0 / 11.0, vec![18.0 / 11.0, -9.0 / 11.0, 2.0 / 11.0]),
    ];
    let mut worst = 0.0f64;
    for (s, (beta0, alphas)) in expected.iter().enumerate() {
        let g = gear_coefficients(s + 1).map_err(|e| e.to_string())?;
        worst = worst.max((g.beta0 - beta0).abs());
        for (a, b) in g.alphas.iter().zip(alphas) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst <= 1e-15 {
        Ok(format!("orders 1 to 3, max error {worst:.1e}"))
    } else {
        Err(format!("max coefficient error {worst:.1e}"))
    }
}

fn solvers_agree() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for case in 0..30 {
        let n = rng.random_range(1..=12);
        let mut b = QpBuilder::new();
        for i in 0..n {
            let lb = rng.random_range(-2.0..0.0);
            b.add_var(VarName::new(VarKind::Generic, i, 0), lb, lb + rng.random_range(0.1..3.0));
        }
        for i in 0..n {
            b.add_linear(i, rng.random_range(-5.0..5.0));
            b.add_quadratic(i, i, rng.random_range(0.1..2.0));
            if i + 1 < n {
                b.add_quadratic(i, i + 1, rng.random_range(-0.1..0.1));
            }
        }
        let qp = b.build().map_err(|e| e.to_string())?;
        let admm = solve(&qp, &QpSettings::default());
        let ipm = solve(&qp, &QpSettings::interior_point());
        if admm.status != QpStatus::Optimal || ipm.status != QpStatus::Optimal {
            return Err(format!("case {case}: {:?} / {:?}", admm.status, ipm.status));
        }
        let gap = admm.x.iter().zip(&ipm.x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(gap);
    }
    if worst <= 1e-6 {
        Ok(format!("30 box QPs, max difference {worst:.1e}"))
    } else {
        Err(format!("methods differ by {worst:.1e}"))
    }
}

fn ptdf_flows() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for name in BUNDLED_CASES {
        let net = parse_case(bundled_case(name).unwrap()).map_err(|e| e.to_string())?;
        let h = ptdf(&net).map_err(|e| e.to_string())?;
        let mut p = DVector::from_fn(net.n_buses(), |_, _| rng.random_range(-1.0..1.0));
        p[net.slack_bus - 1] -= p.sum();
        let theta = dc_angles(&net, &p).map_err(|e| e.to_string())?;
        let flows = &h * &p;
        for (f, br) in flows.iter().zip(&net.branches) {
            worst = worst.max((f - br.susceptance * (theta[br.from - 1] - theta[br.to - 1])).abs());
        }
    }
    if worst <= 1e-9 {
        Ok(format!("{} bundled cases, max flow error {worst:.1e}", BUNDLED_CASES.len()))
    } else {
        Err(format!("flow error {worst:.1e}"))
    }
}

fn joint_design() -> Check {
    let horizon = HorizonConfig {
        t_p: 300.0,
        h_g: 10.0,
        h_b: 100.0,
        order: 1,
    };
    let models = Models::bundled("case9", 10, 1, horizon).map_err(|e| e.to_string())?;
    let settings = QpSettings::interior_point();
    let t0 = 50_400.0;
    let (_, hi) = models.bounds.zone_band(t0);
    let xg = models.initial_grid_state(t0, &settings).map_err(|e| e.to_string())?;
    let xb = models.initial_building_state(t0, hi - 1e-4);
    let c = compare_designs(
        &models.setup(),
        t0,
        &[xg],
        &[xb],
        &BangBangConfig::default(),
        &models.forecast,
        &settings,
    )
    .map_err(|e| e.to_string())?;
    let detail = format!(
        "joint {:.4}, building MPC {:.4}, thermostat {:.4}",
        c.joint.total(),
        c.building_mpc.total(),
        c.thermostat.total()
    );
    if c.joint_beats_building_mpc(1e-6) && c.joint_beats_thermostat(1e-6) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn costs_round_trip() -> Check {
    let rows = vec![
        ("I".to_string(), CostBreakdown { frequency: 0.1, regulation: 1e-7, lopf: 60.25, hvac: 13.5 }),
        ("III".to_string(), CostBreakdown::default()),
    ];
    let mut buf = Vec::new();
    write_costs_csv(&mut buf, &rows).map_err(|e| e.to_string())?;
    let back = read_costs_csv(buf.as_slice()).map_err(|e| e.to_string())?;
    if back == rows {
        Ok("two scenarios".into())
    } else {
        Err(format!("read back {back:?}"))
    }
}

/// Run every check, print one line each and report whether all passed.
pub fn run_all() -> bool {
    let checks: [(&str, fn() -> Check); 5] = [
        ("Gear coefficients", gear),
        ("ADMM and interior point agree", solvers_agree),
        ("PTDF matches DC angles", ptdf_flows),
        ("joint design is cheapest", joint_design),
        ("cost CSV round trip", costs_round_trip),
    ];
    let mut ok = true;
    for (name, check) in checks {
        let clock = Instant::now();
        let result = check();
        let secs = clock.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.2} s]"),
            Err(detail) => {
                ok = false;
                println!("FAIL {name}: {detail} [{secs:.2} s]");
            }
        }
    }
    ok
}
