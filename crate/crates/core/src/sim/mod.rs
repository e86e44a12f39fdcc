//! Closed-loop receding-horizon simulation of the three control scenarios
//! and the nonlinear replay of their controls.
//!
//! * Scenario I: thermostat buildings, grid MPC with the thermostat schedule.
//! * Scenario II: building MPC run on its own, grid MPC with its schedule.
//! * Scenario III: the joint problem on the two-time-scale schedule.
//!
//! All scenarios share the models, initial conditions, bounds and costs.
//! The true plant is advanced with the same discrete models the controllers
//! use, driven by the realized disturbances.

pub mod replay;

pub use replay::{replay_nonlinear, ReplayConfig, ReplayTrajectory};

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::building::{sample_cluster, BuildingCluster, BuildingParams};
use crate::controllers::{
    assemble_btg_gmpc, assemble_building_mpc, assemble_grid_mpc, bang_bang_tuned, integer_ratio, solve_checked,
    solve_lopf, BangBangConfig, BoundConfig, CostConfig, HorizonConfig, MpcProblem, MpcSetup, SetpointMode,
};
use crate::error::{Error, Result};
use crate::gear::{discretize_buildings, discretize_grid, gear_coefficients, DiscreteBuildingModel, DiscreteGridModel};
use crate::grid::{assemble_dae, GridDae};
use crate::network::{attach_buildings, bundled_case, parse_case, ptdf, round_robin_assignment, PowerNetwork};
use crate::profiles::{DayProfiles, Forecast, NoisyForecast, ProfileForecast};
use crate::qp::QpSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    I,
    II,
    III,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::I, Scenario::II, Scenario::III];

    pub fn label(&self) -> &'static str {
        match self {
            Scenario::I => "I",
            Scenario::II => "II",
            Scenario::III => "III",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "1" => Ok(Scenario::I),
            "II" | "2" => Ok(Scenario::II),
            "III" | "3" => Ok(Scenario::III),
            other => Err(Error::InvalidParameter(format!("unknown scenario {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Relative standard deviations of the Gaussian perturbations; zero
/// disables a source.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Perturbation of the realized disturbances `w_g`, `w_b`.
    pub load: f64,
    /// Perturbation of the building matrices `A_b`, `B_ub`, `B_wb` (replay
    /// only).
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Start of the run, seconds after midnight.
    pub t_start: f64,
    /// Length of the run, s.
    pub t_final: f64,
    pub horizon: HorizonConfig,
    pub noise: NoiseConfig,
    pub seed: u64,
    /// Initial zone temperature; the middle of the band at the start when
    /// unset.
    pub initial_zone_c: Option<f64>,
    pub bang_bang: BangBangConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::III,
            t_start: 0.0,
            t_final: 86_400.0,
            horizon: HorizonConfig::default(),
            noise: NoiseConfig::default(),
            seed: 0,
            initial_zone_c: None,
            bang_bang: BangBangConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.horizon.validate()?;
        if integer_ratio(self.t_final, self.horizon.t_p).is_none() {
            return Err(Error::InvalidParameter(format!(
                "T_final = {} s must be a positive multiple of T_p = {} s",
                self.t_final, self.horizon.t_p
            )));
        }
        let k = self.t_start / self.horizon.h_b;
        if (k - k.round()).abs() > 1e-9 * k.abs().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "start time {} s must be a multiple of h_b = {} s",
                self.t_start, self.horizon.h_b
            )));
        }
        for (name, v) in [("load", self.noise.load), ("model", self.noise.model)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} noise must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn n_grid_steps(&self) -> usize {
        integer_ratio(self.t_final, self.horizon.h_g).unwrap_or(0)
    }

    pub fn n_bldg_steps(&self) -> usize {
        integer_ratio(self.t_final, self.horizon.h_b).unwrap_or(0)
    }
}

/// Models and parameters shared by all scenarios of one study.
#[derive(Debug, Clone)]
pub struct Models {
    pub net: PowerNetwork,
    pub dae: GridDae,
    pub grid: DiscreteGridModel,
    pub buildings: DiscreteBuildingModel,
    pub ptdf: DMatrix<f64>,
    pub costs: CostConfig,
    pub bounds: BoundConfig,
    pub horizon: HorizonConfig,
    pub forecast: ProfileForecast,
}

impl Models {
    pub fn new(
        net: PowerNetwork,
        cluster: BuildingCluster,
        profiles: DayProfiles,
        costs: CostConfig,
        bounds: BoundConfig,
        horizon: HorizonConfig,
    ) -> Result<Self> {
        horizon.validate()?;
        costs.validate()?;
        bounds.validate()?;
        if cluster.n_b() != net.n_buildings() {
            return Err(Error::Dimension(format!(
                "{} buildings in the cluster but {} attached to the network",
                cluster.n_b(),
                net.n_buildings()
            )));
        }
        let scheme = gear_coefficients(horizon.order)?;
        let dae = assemble_dae(&net);
        let grid = discretize_grid(&dae, horizon.h_g, &scheme)?;
        let buildings = discretize_buildings(&cluster, horizon.h_b, &scheme)?;
        let ptdf = ptdf(&net)?;
        let forecast = ProfileForecast::new(&net, profiles);
        Ok(Self {
            net,
            dae,
            grid,
            buildings,
            ptdf,
            costs,
            bounds,
            horizon,
            forecast,
        })
    }

    /// A bundled case with `n_b` buildings sampled around the reference
    /// building (10% spread), assigned round-robin to load buses, driven by
    /// the synthetic day profiles and default costs and bounds.
    pub fn bundled(case: &str, n_b: usize, seed: u64, horizon: HorizonConfig) -> Result<Self> {
        let text = bundled_case(case).ok_or_else(|| Error::InvalidParameter(format!("no bundled case {case:?}")))?;
        let net = parse_case(text)?;
        let net = attach_buildings(&net, &round_robin_assignment(&net, n_b, seed)?)?;
        let cluster = sample_cluster(&BuildingParams::reference(), n_b, 0.1, seed)?;
        let profiles = DayProfiles::synthetic();
        let costs = CostConfig {
            prices: profiles.price.clone(),
            ..CostConfig::default()
        };
        Self::new(net, cluster, profiles, costs, BoundConfig::default(), horizon)
    }

    pub fn setup(&self) -> MpcSetup<'_> {
        MpcSetup {
            net: &self.net,
            grid: &self.grid,
            buildings: &self.buildings,
            ptdf: &self.ptdf,
            costs: &self.costs,
            bounds: &self.bounds,
            horizon: &self.horizon,
        }
    }

    pub fn n_b(&self) -> usize {
        self.buildings.n_b()
    }

    /// Grid equilibrium at `t` for the optimal dispatch with idle HVAC.
    pub fn initial_grid_state(&self, t: f64, settings: &QpSettings) -> Result<DVector<f64>> {
        let w = self.forecast.grid(t);
        let idle = DVector::zeros(self.n_b());
        let u = solve_lopf(&self.net, &self.ptdf, &idle, &w, settings)?;
        let inj = self.dae.injection(&DVector::from_vec(u), &idle, &w);
        self.dae.steady_state(&inj, self.net.slack_bus - 1, false)
    }

    /// Building state with zone temperature `t_zone` and each wall at the
    /// temperature balancing its heat flows at `t`.
    pub fn initial_building_state(&self, t: f64, t_zone: f64) -> DVector<f64> {
        let w = self.forecast.buildings(t);
        let mut x = DVector::zeros(2 * self.n_b());
        for (l, p) in self.buildings.cluster.params.iter().enumerate() {
            let (t_amb, q_sol) = (w[3 * l], w[3 * l + 1]);
            let g1 = 1.0 / p.r1;
            let g2 = 1.0 / p.r2;
            x[2 * l] = (g1 * t_zone + g2 * t_amb + q_sol) / (g1 + g2);
            x[2 * l + 1] = t_zone;
        }
        x
    }
}

/// Counters and diagnostics of the inner solves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    /// Joint solves with the dispatch, at multiples of `T_p`.
    pub full: usize,
    /// Joint solves with the dispatch fixed, at building instants.
    pub building: usize,
    /// Grid solves with dispatch and HVAC fixed.
    pub grid_only: usize,
    /// Standalone building solves (Scenario II).
    pub building_only: usize,
    pub iterations: usize,
    pub solve_seconds: f64,
    /// Largest gap between the first planned grid state and the discrete
    /// model driven by the applied inputs and the forecast.
    pub max_step_gap: f64,
}

/// Closed-loop trajectories of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub t0: f64,
    pub horizon: HorizonConfig,
    /// Grid states at `t0 + k h_g`, `k = 0..=N`.
    pub x_g: Vec<DVector<f64>>,
    /// Generator deviations applied over grid step `k = 1..=N`.
    pub deviations: Vec<DVector<f64>>,
    /// Generator setpoints of each `T_p` block.
    pub setpoints: Vec<DVector<f64>>,
    /// Building states at `t0 + kb h_b`, `kb = 0..=M`.
    pub x_b: Vec<DVector<f64>>,
    /// HVAC power (kW) applied over building step `kb = 1..=M`.
    pub u_b: Vec<DVector<f64>>,
    /// Realized grid disturbances at grid steps `1..=N`.
    pub w_g: Vec<DVector<f64>>,
    /// Realized building disturbances at building steps `1..=M`.
    pub w_b: Vec<DVector<f64>>,
    pub stats: SolveStats,
    /// Dead band used by the thermostat (Scenario I).
    pub deadband: Option<f64>,
}

impl ScenarioRun {
    pub fn n_grid_steps(&self) -> usize {
        self.deviations.len()
    }

    pub fn n_bldg_steps(&self) -> usize {
        self.u_b.len()
    }

    pub fn grid_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.horizon.h_g
    }

    pub fn bldg_time(&self, kb: usize) -> f64 {
        self.t0 + kb as f64 * self.horizon.h_b
    }

    /// Index of the `T_p` block containing grid step `k` (1-based).
    pub fn block_of(&self, k: usize) -> usize {
        (k - 1) / self.horizon.n_grid()
    }

    /// Generator power applied over grid step `k`, p.u.
    pub fn generation(&self, k: usize) -> DVector<f64> {
        &self.setpoints[self.block_of(k)] + &self.deviations[k - 1]
    }

    /// HVAC power applied over grid step `k`, kW.
    pub fn hvac_at_grid_step(&self, k: usize) -> &DVector<f64> {
        &self.u_b[(k - 1) / self.horizon.ratio()]
    }
}

/// Realized disturbances of a run.
pub fn realization<'a>(models: &'a Models, config: &ScenarioConfig) -> Result<NoisyForecast<&'a ProfileForecast>> {
    NoisyForecast::new(&models.forecast, config.noise.load, config.horizon.h_g, config.seed)
}

fn check_horizon(models: &Models, config: &ScenarioConfig) -> Result<()> {
    config.validate()?;
    if models.horizon != config.horizon {
        return Err(Error::InvalidParameter(
            "scenario horizon differs from the horizon the models were discretized with".into(),
        ));
    }
    Ok(())
}

/// Source of the HVAC trajectory seen by the grid loop.
enum HvacSource {
    /// Fixed schedule per building step, long enough to cover the last
    /// horizon.
    Schedule(Vec<DVector<f64>>),
    /// Optimized jointly with the grid.
    Joint,
}

/// Run one scenario.
pub fn run_scenario(models: &Models, config: &ScenarioConfig, settings: &QpSettings) -> Result<ScenarioRun> {
    check_horizon(models, config)?;
    let hz = &config.horizon;
    let t0 = config.t_start;
    let m = config.n_bldg_steps();
    let extra = hz.n_bldg();
    let real = realization(models, config)?;
    let zone0 = config.initial_zone_c.unwrap_or_else(|| models.bounds.mid_band(t0));
    let xb0 = models.initial_building_state(t0, zone0);
    let hist_b0 = vec![xb0.clone(); hz.order];
    let mut stats = SolveStats::default();

    match config.scenario {
        Scenario::I => {
            let tr = bang_bang_tuned(
                &models.buildings,
                &hist_b0,
                t0,
                m + extra,
                &config.bang_bang,
                &models.bounds,
                &real,
            )?;
            let deadband = Some(tr.deadband);
            let mut run = grid_loop(models, config, settings, HvacSource::Schedule(tr.u_kw.clone()), &hist_b0, stats)?;
            run.x_b = tr.x[..=m].to_vec();
            run.u_b = tr.u_kw[..m].to_vec();
            run.deadband = deadband;
            Ok(run)
        }
        Scenario::II => {
            let mut hist = hist_b0.clone();
            let mut xs = vec![xb0];
            let mut us = Vec::with_capacity(m + extra);
            let setup = models.setup();
            let mut hint: Option<Vec<f64>> = None;
            for j in 0..m + extra {
                let t = t0 + j as f64 * hz.h_b;
                let p = assemble_building_mpc(&setup, t, &hist, &models.forecast)?;
                let clock = Instant::now();
                let sol = solve_checked(&p.qp, settings, hint.as_deref(), &format!("building MPC at t = {t} s"))?;
                stats.solve_seconds += clock.elapsed().as_secs_f64();
                stats.iterations += sol.iterations;
                stats.building_only += 1;
                let u = p.hvac_kw(&sol.x, 1)?;
                let x = models.buildings.step(&hist, &u, &real.buildings(t + hz.h_b))?;
                hist.rotate_right(1);
                hist[0] = x.clone();
                xs.push(x);
                us.push(u);
                hint = Some(sol.x);
            }
            let mut run = grid_loop(models, config, settings, HvacSource::Schedule(us.clone()), &hist_b0, stats)?;
            run.x_b = xs[..=m].to_vec();
            run.u_b = us[..m].to_vec();
            Ok(run)
        }
        Scenario::III => grid_loop(models, config, settings, HvacSource::Joint, &hist_b0, stats),
    }
}

/// Multi-rate receding-horizon loop on the grid time grid. With a fixed HVAC schedule only the
/// grid branches apply.
fn grid_loop(
    models: &Models,
    config: &ScenarioConfig,
    settings: &QpSettings,
    source: HvacSource,
    hist_b0: &[DVector<f64>],
    mut stats: SolveStats,
) -> Result<ScenarioRun> {
    let hz = &config.horizon;
    let setup = models.setup();
    let real = realization(models, config)?;
    let t0 = config.t_start;
    let n_steps = config.n_grid_steps();
    let m = config.n_bldg_steps();
    let r = hz.ratio();
    let n_grid = hz.n_grid();
    let n_bldg = hz.n_bldg();
    let n_b = models.n_b();

    let xg0 = models.initial_grid_state(t0, settings)?;
    let mut hist_g = vec![xg0.clone(); hz.order];
    let mut hist_b = hist_b0.to_vec();
    let mut x_g = vec![xg0];
    let mut x_b = vec![hist_b0[0].clone()];
    let mut deviations = Vec::with_capacity(n_steps);
    let mut setpoints: Vec<DVector<f64>> = Vec::new();
    let mut u_b: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut w_g = Vec::with_capacity(n_steps);
    let mut w_b = Vec::with_capacity(m);

    // HVAC plan per building step (0-based from t0).
    let mut plan: Vec<Option<DVector<f64>>> = match &source {
        HvacSource::Schedule(s) => s.iter().cloned().map(Some).collect(),
        HvacSource::Joint => vec![None; m + n_bldg],
    };
    let planned = |plan: &[Option<DVector<f64>>], j: usize| -> DVector<f64> {
        let j = j.min(plan.len() - 1);
        (0..=j)
            .rev()
            .find_map(|i| plan[i].clone())
            .unwrap_or_else(|| DVector::zeros(n_b))
    };
    let mut ubar: Vec<f64> = Vec::new();

    for i in 0..n_steps {
        let t = t0 + i as f64 * hz.h_g;
        let block_start = i % n_grid == 0;
        let bldg_instant = i % r == 0;
        let clock = Instant::now();
        let (problem, what): (MpcProblem, &str) = match (&source, block_start, bldg_instant) {
            (HvacSource::Joint, true, _) => {
                let p = assemble_btg_gmpc(&setup, t, &hist_g, &hist_b, SetpointMode::Optimize, &models.forecast)?;
                (p, "joint MPC")
            }
            (HvacSource::Joint, false, true) => {
                let p = assemble_btg_gmpc(&setup, t, &hist_g, &hist_b, SetpointMode::Fixed(&ubar), &models.forecast)?;
                (p, "joint MPC with fixed dispatch")
            }
            (_, start, _) => {
                let fixed: Vec<DVector<f64>> = (1..=n_grid).map(|k| planned(&plan, (i + k - 1) / r)).collect();
                let mode = if start {
                    SetpointMode::Optimize
                } else {
                    SetpointMode::Fixed(&ubar)
                };
                let p = assemble_grid_mpc(&setup, t, &hist_g, &fixed, mode, &models.forecast)?;
                (p, if start { "grid MPC" } else { "grid MPC with fixed dispatch" })
            }
        };
        let qp_sol = solve_checked(&problem.qp, settings, None, &format!("{what} at t = {t} s"))?;
        stats.solve_seconds += clock.elapsed().as_secs_f64();
        stats.iterations += qp_sol.iterations;
        match (&source, block_start, bldg_instant) {
            (HvacSource::Joint, true, _) => stats.full += 1,
            (HvacSource::Joint, false, true) => stats.building += 1,
            _ => stats.grid_only += 1,
        }
        let x = &qp_sol.x;
        if block_start {
            ubar = problem.setpoints(x)?;
            setpoints.push(DVector::from_column_slice(&ubar));
        }
        if problem.hvac_free {
            let j0 = i / r;
            for kb in 1..=n_bldg {
                if j0 + kb - 1 < plan.len() {
                    plan[j0 + kb - 1] = Some(problem.hvac_kw(x, kb)?);
                }
            }
        }

        // Apply the first instances.
        let du = problem.deviation(x, 1)?;
        let u_g = DVector::from_column_slice(&ubar) + &du;
        let hvac = planned(&plan, i / r);
        let t_next = t + hz.h_g;
        let model_step = models.grid.step(&hist_g, &u_g, &hvac, &models.forecast.grid(t_next))?;
        let gap = (&model_step - problem.grid_state(x, 1)?).amax();
        stats.max_step_gap = stats.max_step_gap.max(gap);
        let wg = real.grid(t_next);
        let xg = models.grid.step(&hist_g, &u_g, &hvac, &wg)?;
        hist_g.rotate_right(1);
        hist_g[0] = xg.clone();
        x_g.push(xg);
        deviations.push(du);
        w_g.push(wg);

        if (i + 1) % r == 0 {
            let j = (i + 1) / r;
            let wb = real.buildings(t0 + j as f64 * hz.h_b);
            if matches!(source, HvacSource::Joint) {
                let xb = models.buildings.step(&hist_b, &hvac, &wb)?;
                hist_b.rotate_right(1);
                hist_b[0] = xb.clone();
                x_b.push(xb);
            }
            u_b.push(hvac);
            w_b.push(wb);
        }
    }

    Ok(ScenarioRun {
        scenario: config.scenario,
        t0,
        horizon: hz.clone(),
        x_g,
        deviations,
        setpoints,
        x_b,
        u_b,
        w_g,
        w_b,
        stats,
        deadband: None,
    })
}

/// Zone temperatures of a run outside their bands, as `(step, building,
/// T_zone)` triples.
pub fn band_violations(run: &ScenarioRun, bounds: &BoundConfig, tol: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (kb, x) in run.x_b.iter().enumerate().skip(1) {
        let (lo, hi) = bounds.zone_band(run.bldg_time(kb));
        for l in 0..x.len() / 2 {
            let tz = x[2 * l + 1];
            if tz < lo - tol || tz > hi + tol {
                out.push((kb, l + 1, tz));
            }
        }
    }
    out
}

/// Largest frequency deviation of a run, Hz.
pub fn max_frequency_deviation_hz(run: &ScenarioRun, n: usize) -> f64 {
    run.x_g
        .iter()
        .flat_map(|x| x.rows(n, n).iter().map(|w| w.abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
        / (2.0 * std::f64::consts::PI)
}

/// Building disturbance of building `l` at building step `kb` of a run.
pub fn building_disturbance(run: &ScenarioRun, l: usize, kb: usize) -> Vector3<f64> {
    let w = &run.w_b[kb - 1];
    Vector3::new(w[3 * l], w[3 * l + 1], w[3 * l + 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Models {
        Models::bundled("case9", 3, 1, HorizonConfig::default()).unwrap()
    }

    fn one_block(scenario: Scenario) -> ScenarioConfig {
        ScenarioConfig {
            scenario,
            t_start: 43_200.0,
            t_final: 900.0,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn schedule_branch_counts() {
        let models = small();
        let run = run_scenario(&models, &one_block(Scenario::III), &QpSettings::interior_point()).unwrap();
        assert_eq!(run.stats.full, 1);
        assert_eq!(run.stats.building, 2);
        assert_eq!(run.stats.grid_only, 87);
        assert_eq!(run.stats.building_only, 0);
    }

    #[test]
    fn trajectory_lengths_and_held_hvac() {
        let models = small();
        for sc in Scenario::ALL {
            let run = run_scenario(&models, &one_block(sc), &QpSettings::interior_point()).unwrap();
            assert_eq!(run.x_g.len(), 91, "{sc}");
            assert_eq!(run.deviations.len(), 90, "{sc}");
            assert_eq!(run.setpoints.len(), 1, "{sc}");
            assert_eq!(run.x_b.len(), 4, "{sc}");
            assert_eq!(run.u_b.len(), 3, "{sc}");
            assert_eq!(run.w_b.len(), 3, "{sc}");
            for k in 1..=90 {
                let kb = (k - 1) / 30;
                assert_eq!(run.hvac_at_grid_step(k), &run.u_b[kb]);
            }
            assert_eq!(run.deadband.is_some(), sc == Scenario::I);
        }
    }

    #[test]
    fn applied_steps_match_the_plan() {
        let models = small();
        let run = run_scenario(&models, &one_block(Scenario::III), &QpSettings::interior_point()).unwrap();
        assert!(run.stats.max_step_gap <= 1e-7, "gap {}", run.stats.max_step_gap);
    }

    #[test]
    fn runs_are_deterministic() {
        let models = small();
        let mut cfg = one_block(Scenario::III);
        cfg.noise.load = 0.05;
        cfg.seed = 11;
        let a = run_scenario(&models, &cfg, &QpSettings::interior_point()).unwrap();
        let b = run_scenario(&models, &cfg, &QpSettings::interior_point()).unwrap();
        assert_eq!(a.x_g, b.x_g);
        assert_eq!(a.u_b, b.u_b);
        cfg.seed = 12;
        let c = run_scenario(&models, &cfg, &QpSettings::interior_point()).unwrap();
        assert_ne!(a.w_g, c.w_g);
    }

    #[test]
    fn scenarios_share_the_realization() {
        let models = small();
        let runs: Vec<ScenarioRun> = Scenario::ALL
            .iter()
            .map(|&sc| {
                let mut cfg = one_block(sc);
                cfg.noise.load = 0.1;
                cfg.seed = 3;
                run_scenario(&models, &cfg, &QpSettings::interior_point()).unwrap()
            })
            .collect();
        assert_eq!(runs[0].w_g, runs[1].w_g);
        assert_eq!(runs[1].w_g, runs[2].w_g);
        assert_eq!(runs[0].w_b, runs[2].w_b);
        assert_eq!(runs[0].x_g[0], runs[2].x_g[0]);
        assert_eq!(runs[0].x_b[0], runs[2].x_b[0]);
    }

    #[test]
    fn zone_temperatures_stay_in_band() {
        let models = small();
        for sc in Scenario::ALL {
            let run = run_scenario(&models, &one_block(sc), &QpSettings::interior_point()).unwrap();
            assert!(band_violations(&run, &models.bounds, 1e-6).is_empty(), "{sc}");
            assert!(max_frequency_deviation_hz(&run, models.net.n_buses()) < 1.0, "{sc}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ScenarioConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.n_grid_steps(), 8640);
        assert_eq!(cfg.n_bldg_steps(), 288);
        cfg.t_final = 1000.0;
        assert!(cfg.validate().is_err());
        cfg.t_final = 900.0;
        cfg.t_start = 100.0;
        assert!(cfg.validate().is_err());
        cfg.t_start = 600.0;
        cfg.noise.model = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn horizon_must_match_models() {
        let models = small();
        let mut cfg = one_block(Scenario::III);
        cfg.horizon.h_b = 100.0;
        assert!(run_scenario(&models, &cfg, &QpSettings::interior_point()).is_err());
    }

    #[test]
    fn scenario_names_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.to_string().parse::<Scenario>().unwrap(), sc);
        }
        assert_eq!("2".parse::<Scenario>().unwrap(), Scenario::II);
        assert!("IV".parse::<Scenario>().is_err());
    }

    #[test]
    fn initial_walls_balance_heat_flows() {
        let models = small();
        let x = models.initial_building_state(43_200.0, 23.0);
        let w = models.forecast.buildings(43_200.0);
        for (l, b) in models.buildings.cluster.blocks.iter().enumerate() {
            let dx = b.a * nalgebra::Vector2::new(x[2 * l], x[2 * l + 1])
                + b.bw * Vector3::new(w[3 * l], w[3 * l + 1], w[3 * l + 2]);
            assert!(dx[0].abs() < 1e-9, "wall drift {}", dx[0]);
        }
    }
}
