//! Open-loop replay of a run's controls through the continuous-time models
//! with perturbed disturbances and building matrices.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Models, NoiseConfig, ScenarioRun};
use crate::building::BuildingBlock;
use crate::controllers::BoundConfig;
use crate::error::{Error, Result};
use crate::profiles::{Forecast, NoisyForecast};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    /// Integrator steps per grid step.
    pub substeps: usize,
    /// Sine line flows; linear flows when unset.
    pub nonlinear: bool,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            substeps: 10,
            nonlinear: true,
            noise: NoiseConfig { load: 0.1, model: 0.1 },
            seed: 0,
            newton_tol: 1e-10,
            max_newton: 30,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("replay needs at least one substep".into()));
        }
        for (name, v) in [("load", self.noise.load), ("model", self.noise.model)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} noise must be nonnegative, got {v}")));
            }
        }
        if !(self.newton_tol > 0.0) || self.max_newton == 0 {
            return Err(Error::InvalidParameter("Newton tolerance and iteration limit must be positive".into()));
        }
        Ok(())
    }
}

/// States of a replay on the run's grid and building time grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayTrajectory {
    pub t0: f64,
    pub h_g: f64,
    pub h_b: f64,
    pub x_g: Vec<DVector<f64>>,
    pub x_b: Vec<DVector<f64>>,
    pub newton_iterations: usize,
}

impl ReplayTrajectory {
    /// Largest `|f − f_nom|` over all buses and grid steps, Hz.
    pub fn max_frequency_deviation_hz(&self) -> f64 {
        let n = self.x_g.first().map_or(0, |x| x.len() / 2);
        self.x_g
            .iter()
            .flat_map(|x| x.rows(n, n).iter().copied().collect::<Vec<_>>())
            .fold(0.0_f64, |a, w| a.max(w.abs()))
            / (2.0 * std::f64::consts::PI)
    }

    /// Largest distance of a zone temperature outside its band, °C; zero
    /// when every zone stays inside.
    pub fn max_band_excursion(&self, bounds: &BoundConfig) -> f64 {
        let mut worst = 0.0_f64;
        for (kb, x) in self.x_b.iter().enumerate() {
            let (lo, hi) = bounds.zone_band(self.t0 + kb as f64 * self.h_b);
            for l in 0..x.len() / 2 {
                let tz = x[2 * l + 1];
                worst = worst.max(lo - tz).max(tz - hi);
            }
        }
        worst
    }
}

/// Building blocks with every entry of `A`, `B_u` and `B_w` scaled by an
/// independent `1 + σ ξ`, drawn once.
pub fn perturb_blocks(blocks: &[BuildingBlock], std_fraction: f64, seed: u64) -> Vec<BuildingBlock> {
    if std_fraction == 0.0 {
        return blocks.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = || {
        let xi: f64 = StandardNormal.sample(&mut rng);
        1.0 + std_fraction * xi
    };
    blocks
        .iter()
        .map(|b| {
            let mut p = *b;
            p.a.iter_mut().for_each(|v| *v *= factor());
            p.bu.iter_mut().for_each(|v| *v *= factor());
            p.bw.iter_mut().for_each(|v| *v *= factor());
            p
        })
        .collect()
}

const MODEL_STREAM: u64 = 0x6d6f_6465_6c00_0001;

/// Replay the applied controls of `run` through the continuous-time grid DAE
/// and building ODEs with backward Euler at `h_g / substeps`. Controls are
/// held over their steps; the realized disturbances are the forecast with
/// `config.noise.load` noise, redrawn every grid step. The controls are not
/// re-optimized against the perturbed states.
pub fn replay_nonlinear(models: &Models, run: &ScenarioRun, config: &ReplayConfig) -> Result<ReplayTrajectory> {
    config.validate()?;
    let hz = &run.horizon;
    let n_steps = run.n_grid_steps();
    let r = hz.ratio();
    if run.n_bldg_steps() * r != n_steps || run.x_g.is_empty() || run.x_b.is_empty() {
        return Err(Error::Dimension("run trajectories are incomplete".into()));
    }
    let dae = &models.dae;
    let tau = hz.h_g / config.substeps as f64;
    let realized = NoisyForecast::new(&models.forecast, config.noise.load, hz.h_g, config.seed)?;
    let blocks = perturb_blocks(
        &models.buildings.cluster.blocks,
        config.noise.model,
        config.seed ^ MODEL_STREAM,
    );
    let inverses: Vec<Matrix2<f64>> = blocks
        .iter()
        .enumerate()
        .map(|(l, b)| {
            (Matrix2::identity() - b.a * tau)
                .try_inverse()
                .ok_or_else(|| Error::Singular(format!("perturbed building {} pencil", l + 1)))
        })
        .collect::<Result<_>>()?;
    let e = DMatrix::from_diagonal(&dae.e_diag) / tau;

    let mut xg = run.x_g[0].clone();
    let mut xb = run.x_b[0].clone();
    let mut out_g = vec![xg.clone()];
    let mut out_b = vec![xb.clone()];
    let mut newton_total = 0;
    for k in 1..=n_steps {
        let u_g = run.generation(k);
        let u_b = run.hvac_at_grid_step(k).clone();
        let w_g = realized.grid(run.grid_time(k));
        let w_b = realized.buildings(run.grid_time(k));
        for sub in 1..=config.substeps {
            let t = run.grid_time(k - 1) + sub as f64 * tau;
            let prev = xg.clone();
            let mut x = prev.clone();
            let mut converged = false;
            for _ in 0..config.max_newton {
                newton_total += 1;
                let f = dae.rhs(&x, &u_g, &u_b, &w_g, config.nonlinear)?;
                let g = &e * (&x - &prev) - f;
                if g.amax() <= config.newton_tol * (1.0 + x.amax()) {
                    converged = true;
                    break;
                }
                let jac = &e - dae.rhs_jacobian(&x, config.nonlinear);
                let dx = jac.lu().solve(&(-g)).ok_or_else(|| Error::Divergence {
                    time: t,
                    msg: "singular Newton matrix".into(),
                })?;
                x += dx;
                if !x.iter().all(|v| v.is_finite()) {
                    break;
                }
            }
            if !converged {
                return Err(Error::Divergence {
                    time: t,
                    msg: format!(
                        "no convergence in {} iterations, max |omega| = {:.3e}",
                        config.max_newton,
                        x.rows(dae.n, dae.n).amax()
                    ),
                });
            }
            xg = x;
            for (l, b) in blocks.iter().enumerate() {
                let xl = Vector2::new(xb[2 * l], xb[2 * l + 1]);
                let wl = Vector3::new(w_b[3 * l], w_b[3 * l + 1], w_b[3 * l + 2]);
                let next = inverses[l] * (xl + (b.bu * u_b[l] + b.bw * wl) * tau);
                xb[2 * l] = next[0];
                xb[2 * l + 1] = next[1];
            }
        }
        out_g.push(xg.clone());
        if k % r == 0 {
            out_b.push(xb.clone());
        }
    }
    Ok(ReplayTrajectory {
        t0: run.t0,
        h_g: hz.h_g,
        h_b: hz.h_b,
        x_g: out_g,
        x_b: out_b,
        newton_iterations: newton_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{solve_lopf, HorizonConfig};
    use crate::profiles::{DayProfiles, ProfileForecast};
    use crate::qp::QpSettings;
    use crate::sim::{run_scenario, Scenario, ScenarioConfig};

    fn setup() -> (Models, ScenarioRun) {
        let models = Models::bundled("case9", 3, 1, HorizonConfig::default()).unwrap();
        let cfg = ScenarioConfig {
            scenario: Scenario::III,
            t_start: 43_200.0,
            t_final: 900.0,
            ..ScenarioConfig::default()
        };
        let run = run_scenario(&models, &cfg, &QpSettings::interior_point()).unwrap();
        (models, run)
    }

    fn exact(substeps: usize) -> ReplayConfig {
        ReplayConfig {
            substeps,
            nonlinear: false,
            noise: NoiseConfig::default(),
            ..ReplayConfig::default()
        }
    }

    fn grid_gap(a: &ReplayTrajectory, b: &[DVector<f64>]) -> f64 {
        a.x_g.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
    }

    #[test]
    fn single_substep_reproduces_gear_grid_steps() {
        let (models, run) = setup();
        let rep = replay_nonlinear(&models, &run, &exact(1)).unwrap();
        let gap = grid_gap(&rep, &run.x_g);
        assert!(gap < 1e-8, "gap {gap}");
    }

    #[test]
    fn linear_replay_converges_first_order() {
        let (models, run) = setup();
        let reference = replay_nonlinear(&models, &run, &exact(256)).unwrap();
        let reps: Vec<ReplayTrajectory> =
            [1, 2, 4, 8].iter().map(|&n| replay_nonlinear(&models, &run, &exact(n)).unwrap()).collect();
        let bldg: Vec<f64> = reps
            .iter()
            .map(|r| r.x_b.iter().zip(&reference.x_b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max))
            .collect();
        for w in bldg.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..2.2).contains(&ratio), "building errors {bldg:?}");
        }
        let grid: Vec<f64> = reps.iter().map(|r| grid_gap(r, &reference.x_g)).collect();
        assert!(grid.windows(2).all(|w| w[1] < w[0]), "grid errors {grid:?}");
    }

    #[test]
    fn equilibrium_stays_constant() {
        let (mut models, mut run) = setup();
        let t0 = run.t0;
        let p = &models.forecast.profiles;
        let hold = |s: &crate::profiles::StepSeries| crate::profiles::StepSeries::constant(s.at(t0));
        let profiles = DayProfiles {
            t_amb: hold(&p.t_amb),
            q_sol: hold(&p.q_sol),
            q_int: hold(&p.q_int),
            base_load: hold(&p.base_load),
            misc_kw: hold(&p.misc_kw),
            price: hold(&p.price),
        };
        models.forecast = ProfileForecast::new(&models.net, profiles);
        let idle = DVector::zeros(models.n_b());
        let w = models.forecast.grid(t0);
        let u = solve_lopf(&models.net, &models.ptdf, &idle, &w, &QpSettings::default()).unwrap();
        let u = DVector::from_vec(u);
        let inj = models.dae.injection(&u, &idle, &w);
        let x0 = models.dae.steady_state(&inj, models.net.slack_bus - 1, true).unwrap();
        run.x_g[0] = x0.clone();
        run.setpoints.iter_mut().for_each(|s| s.copy_from(&u));
        run.deviations.iter_mut().for_each(|d| d.fill(0.0));
        run.u_b.iter_mut().for_each(|v| v.fill(0.0));
        let cfg = ReplayConfig {
            noise: NoiseConfig::default(),
            ..ReplayConfig::default()
        };
        let rep = replay_nonlinear(&models, &run, &cfg).unwrap();
        for x in &rep.x_g {
            assert!((x - &x0).amax() < 1e-8, "drift {}", (x - &x0).amax());
        }
        assert!(rep.max_frequency_deviation_hz() < 1e-9);
    }

    #[test]
    fn same_seed_same_replay() {
        let (models, run) = setup();
        let cfg = ReplayConfig {
            seed: 5,
            ..ReplayConfig::default()
        };
        let a = replay_nonlinear(&models, &run, &cfg).unwrap();
        let b = replay_nonlinear(&models, &run, &cfg).unwrap();
        assert_eq!(a, b);
        let c = replay_nonlinear(&models, &run, &ReplayConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.x_g, c.x_g);
    }

    #[test]
    fn perturbation_is_one_draw_per_seed() {
        let (models, _) = setup();
        let blocks = &models.buildings.cluster.blocks;
        assert_eq!(perturb_blocks(blocks, 0.0, 1), blocks.to_vec());
        let a = perturb_blocks(blocks, 0.1, 1);
        assert_eq!(a, perturb_blocks(blocks, 0.1, 1));
        assert_ne!(a, perturb_blocks(blocks, 0.1, 2));
        assert_ne!(a[0].a, blocks[0].a);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ReplayConfig { substeps: 0, ..ReplayConfig::default() }.validate().is_err());
        let mut cfg = ReplayConfig::default();
        cfg.noise.load = -1.0;
        assert!(cfg.validate().is_err());
    }
}
