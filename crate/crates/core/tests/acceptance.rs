//! Acceptance criteria, one PASS or FAIL line each. The run always exits
//! successfully; the lines are the verdict.

mod common;

use std::time::Instant;

use btg_core::controllers::HorizonConfig;
use btg_core::gear::{gear_coefficients, DescriptorStepper};
use btg_core::network::{bundled_case, parse_case, ptdf, PowerNetwork, BUNDLED_CASES};
use btg_core::qp::QpSettings;
use btg_core::report::{cost_breakdown, percent_reduction, CostBreakdown};
use btg_core::sim::{
    band_violations, max_frequency_deviation_hz, replay_nonlinear, run_scenario, Models, NoiseConfig, ReplayConfig,
    Scenario, ScenarioConfig, ScenarioRun,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Run one check; `setup_s` is time already spent on shared work it relies on.
fn report(id: usize, name: &str, limit_s: f64, setup_s: f64, f: impl FnOnce() -> Verdict) -> bool {
    let clock = Instant::now();
    let v = f();
    let secs = setup_s + clock.elapsed().as_secs_f64();
    let pass = v.pass && secs < limit_s;
    println!(
        "{} {id:>2} {name}: {} [{secs:.1} s, limit {limit_s} s]",
        if pass { "PASS" } else { "FAIL" },
        v.detail
    );
    pass
}

fn gear_closed_forms() -> Verdict {
    let expected: [(f64, Vec<f64>); 3] = [
        (1.0, vec![1.0]),
        (2.0 / 3.0, vec![4.0 / 3.0, -1.0 / 3.0]),
        (6.0 / 11.0, vec![18.0 / 11.0, -9.0 / 11.0, 2.0 / 11.0]),
    ];
    let mut worst = 0.0f64;
    for (s, (beta0, alphas)) in expected.iter().enumerate() {
        let g = gear_coefficients(s + 1).unwrap();
        worst = worst.max((g.beta0 - beta0).abs());
        if g.alphas.len() != alphas.len() {
            return verdict(false, format!("order {} has {} alphas", s + 1, g.alphas.len()));
        }
        for (a, b) in g.alphas.iter().zip(alphas) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-15, format!("max coefficient error {worst:.1e}"))
}

fn decay_error(s: usize, h: f64) -> f64 {
    let st = DescriptorStepper::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, -1.0),
        h,
        gear_coefficients(s).unwrap(),
    )
    .unwrap();
    let steps = (1.0 / h).round() as usize;
    let mut hist: Vec<DVector<f64>> = (0..s).map(|i| DVector::from_element(1, (i as f64 * h).exp())).collect();
    let zero = DVector::zeros(1);
    for _ in 0..steps {
        let x = st.step(&hist, &zero).unwrap();
        hist.rotate_right(1);
        hist[0] = x;
    }
    (hist[0][0] - (-1.0f64).exp()).abs()
}

fn discretization_order() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for s in 1..=3 {
        let ratio = decay_error(s, 0.02) / decay_error(s, 0.01);
        let target = 2f64.powi(s as i32);
        ok &= (ratio / target - 1.0).abs() <= 0.15;
        parts.push(format!("s={s} ratio {ratio:.3} (target {target})"));
    }
    verdict(ok, parts.join(", "))
}

fn wrong_history_converges() -> Verdict {
    let e = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 1.0, 0.0]));
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            -1.0, 0.5, 0.0, 0.0, //
            0.0, -2.0, 0.3, 0.0, //
            0.0, 0.0, -1.5, 1.0, //
            1.0, 0.0, 0.0, -1.0,
        ],
    );
    let st = DescriptorStepper::new(e, a, 0.5, gear_coefficients(2).unwrap()).unwrap();
    let forcing = DVector::from_vec(vec![0.2, 0.0, 0.1, 0.4]);
    let x0 = DVector::from_vec(vec![1.0, -1.0, 0.5, 1.4]);
    let mut good = vec![x0.clone(), x0.clone()];
    let mut bad = vec![x0.clone(), DVector::from_vec(vec![5.0, 3.0, -4.0, 2.0])];
    for k in 1..=50 {
        let g = st.step(&good, &forcing).unwrap();
        let b = st.step(&bad, &forcing).unwrap();
        good.rotate_right(1);
        good[0] = g;
        bad.rotate_right(1);
        bad[0] = b;
        let gap = (&good[0] - &bad[0]).amax();
        if gap < 1e-8 {
            return verdict(true, format!("gap {gap:.1e} after {k} steps"));
        }
    }
    verdict(false, format!("gap {:.1e} after 50 steps", (&good[0] - &bad[0]).amax()))
}

fn qp_oracle() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, settings) in [("ADMM", QpSettings::default()), ("interior point", QpSettings::interior_point())] {
        match common::box_qp_oracle_error(&settings) {
            Ok(err) => {
                ok &= err <= 1e-6;
                parts.push(format!("{name} max error {err:.1e}"));
            }
            Err(msg) => {
                ok = false;
                parts.push(format!("{name} {msg}"));
            }
        }
    }
    verdict(ok, format!("100 random QPs, {}", parts.join(", ")))
}

fn joint_vs_building_mpc(instances: &[btg_core::controllers::HorizonComparison]) -> Verdict {
    let failing = instances.iter().filter(|c| !c.joint_beats_building_mpc(1e-6)).count();
    let margin = instances
        .iter()
        .map(|c| c.building_mpc.total() - c.joint.total())
        .fold(f64::INFINITY, f64::min);
    verdict(
        failing == 0,
        format!("{} instances, {failing} violations, smallest margin {margin:.3e}", instances.len()),
    )
}

fn joint_vs_thermostat(instances: &[btg_core::controllers::HorizonComparison]) -> Verdict {
    let failing = instances.iter().filter(|c| !c.joint_beats_thermostat(1e-6)).count();
    let hvac_margin = instances
        .iter()
        .map(|c| c.thermostat.building - c.building_mpc.building)
        .fold(f64::INFINITY, f64::min);
    verdict(
        failing == 0,
        format!(
            "{} instances, {failing} violations, smallest HVAC margin {hvac_margin:.3e}",
            instances.len()
        ),
    )
}

/// Reduced nine-bus study: 30 buildings, four hours from noon, the three
/// scenarios in parallel.
fn reduced_runs() -> (Models, Vec<(ScenarioRun, CostBreakdown)>) {
    let models = Models::bundled("case9", 30, 7, HorizonConfig::default()).unwrap();
    let settings = QpSettings::interior_point();
    let runs = std::thread::scope(|s| {
        let handles: Vec<_> = Scenario::ALL
            .iter()
            .map(|&scenario| {
                let models = &models;
                let settings = &settings;
                s.spawn(move || {
                    let cfg = ScenarioConfig {
                        scenario,
                        t_start: 43_200.0,
                        t_final: 4.0 * 3600.0,
                        ..ScenarioConfig::default()
                    };
                    let run = run_scenario(models, &cfg, settings).unwrap();
                    let costs = cost_breakdown(&run, &models.net, &models.costs);
                    (run, costs)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect::<Vec<_>>()
    });
    (models, runs)
}

fn directional(runs: &[(ScenarioRun, CostBreakdown)]) -> Verdict {
    let (one, two, three) = (&runs[0].1, &runs[1].1, &runs[2].1);
    let ordering = three.total() < two.total() && two.total() < one.total();
    let freq = 100.0 * percent_reduction(one.frequency, three.frequency).unwrap_or(f64::NAN);
    let hvac = 100.0 * percent_reduction(one.hvac, two.hvac).unwrap_or(f64::NAN);
    let ok = ordering && freq > 50.0 && hvac > 5.0;
    verdict(
        ok,
        format!(
            "totals I {:.3} II {:.3} III {:.3} k$ (III < II < I {}), frequency cost I {:.4} II {:.4} III {:.4} k$ reduction I->III {freq:.1}% (> 50%), HVAC reduction I->II {hvac:.1}% (> 5%)",
            one.total(),
            two.total(),
            three.total(),
            if ordering { "holds" } else { "fails" },
            one.frequency,
            two.frequency,
            three.frequency,
        ),
    )
}

fn constraints(models: &Models, run: &ScenarioRun) -> Verdict {
    let df = max_frequency_deviation_hz(run, models.net.n_buses());
    let violations = band_violations(run, &models.bounds, 1e-6);
    verdict(
        df <= 1.0 && violations.is_empty(),
        format!(
            "max |f - 60| {df:.4} Hz, {} zone band violations over {} building steps",
            violations.len(),
            run.n_bldg_steps()
        ),
    )
}

fn replay_robustness(models: &Models, run: &ScenarioRun) -> Verdict {
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..5u64)
            .map(|seed| {
                s.spawn(move || {
                    let cfg = ReplayConfig {
                        seed,
                        noise: NoiseConfig { load: 0.1, model: 0.1 },
                        ..ReplayConfig::default()
                    };
                    replay_nonlinear(models, run, &cfg)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut worst_f = 0.0f64;
    let mut worst_t = 0.0f64;
    for (seed, r) in results.into_iter().enumerate() {
        match r {
            Ok(tr) => {
                worst_f = worst_f.max(tr.max_frequency_deviation_hz());
                worst_t = worst_t.max(tr.max_band_excursion(&models.bounds));
            }
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        }
    }
    verdict(
        worst_f <= 1.0 && worst_t <= 2.0,
        format!("5 seeds, max |f - 60| {worst_f:.4} Hz, largest zone excursion outside band {worst_t:.3} C"),
    )
}

/// Branch flows from a dense DC power flow with the slack angle pinned by
/// its own row.
fn brute_force_flows(net: &PowerNetwork, p: &DVector<f64>) -> DVector<f64> {
    let n = net.n_buses();
    let mut b = DMatrix::zeros(n, n);
    for br in &net.branches {
        let (f, t) = (br.from - 1, br.to - 1);
        b[(f, f)] += br.susceptance;
        b[(t, t)] += br.susceptance;
        b[(f, t)] -= br.susceptance;
        b[(t, f)] -= br.susceptance;
    }
    let slack = net.slack_bus - 1;
    let mut rhs = p.clone();
    for j in 0..n {
        b[(slack, j)] = 0.0;
    }
    b[(slack, slack)] = 1.0;
    rhs[slack] = 0.0;
    let theta = b.lu().solve(&rhs).expect("connected network");
    DVector::from_iterator(
        net.n_branches(),
        net.branches
            .iter()
            .map(|br| br.susceptance * (theta[br.from - 1] - theta[br.to - 1])),
    )
}

fn ptdf_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for name in BUNDLED_CASES {
        let net = parse_case(bundled_case(name).unwrap()).unwrap();
        let h = ptdf(&net).unwrap();
        for _ in 0..20 {
            let mut p = DVector::from_fn(net.n_buses(), |_, _| rng.random_range(-1.0..1.0));
            let slack = net.slack_bus - 1;
            p[slack] -= p.sum();
            let err = (&h * &p - brute_force_flows(&net, &p)).amax();
            worst = worst.max(err);
        }
    }
    verdict(
        worst <= 1e-9,
        format!("{} bundled cases, max flow error {worst:.1e}", BUNDLED_CASES.len()),
    )
}

fn main() {
    let mut passed = 0;
    passed += report(1, "Gear coefficients", 1.0, 0.0, gear_closed_forms) as usize;
    passed += report(2, "discretization order", 5.0, 0.0, discretization_order) as usize;
    passed += report(3, "wrong history convergence", 5.0, 0.0, wrong_history_converges) as usize;
    passed += report(4, "QP oracle", 60.0, 0.0, qp_oracle) as usize;

    let clock = Instant::now();
    let instances = common::design_instances();
    let shared = clock.elapsed().as_secs_f64();
    passed += report(5, "joint beats building MPC then grid MPC", 600.0, shared, || joint_vs_building_mpc(&instances)) as usize;
    passed += report(6, "joint beats thermostat then grid MPC", 600.0, shared, || joint_vs_thermostat(&instances)) as usize;

    let clock = Instant::now();
    let (models, runs) = reduced_runs();
    let shared = clock.elapsed().as_secs_f64();
    passed += report(7, "directional reproduction", 1200.0, shared, || directional(&runs)) as usize;
    passed += report(8, "Scenario III constraints", 1200.0, shared, || constraints(&models, &runs[2].0)) as usize;
    passed += report(9, "nonlinear replay robustness", 900.0, 0.0, || replay_robustness(&models, &runs[2].0)) as usize;
    passed += report(10, "PTDF oracle", 10.0, 0.0, ptdf_oracle) as usize;
    println!("{passed}/10 criteria pass");
}
