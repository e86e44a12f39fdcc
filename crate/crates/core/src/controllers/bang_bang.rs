//! Thermostat (bang-bang) control of the building cluster.

use nalgebra::{DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::BoundConfig;
use crate::error::{dim_check, Error, Result};
use crate::gear::DiscreteBuildingModel;
use crate::profiles::Forecast;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BangBangConfig {
    /// Zone temperature setpoint, °C.
    pub setpoint: f64,
    /// Half-width of the dead band, °C.
    pub deadband: f64,
    /// HVAC power when on, kW.
    pub u_max_kw: f64,
    /// Dead band halvings tried before giving up on the comfort bands.
    pub max_halvings: usize,
}

impl Default for BangBangConfig {
    fn default() -> Self {
        Self {
            setpoint: 22.22,
            deadband: 0.5,
            u_max_kw: 800.0,
            max_halvings: 10,
        }
    }
}

/// Closed-loop thermostat trajectory on the building time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BangBangTrajectory {
    pub t0: f64,
    pub h: f64,
    /// Dead band actually used, °C.
    pub deadband: f64,
    /// `u[k-1]` is the HVAC power (kW) held over step `k`.
    pub u_kw: Vec<DVector<f64>>,
    /// `x[k]` is the cluster state at `t0 + k h`; `x[0]` is the initial state.
    pub x: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandViolation {
    /// 1-based building index.
    pub building: usize,
    pub step: usize,
    pub t_zone: f64,
    pub band: (f64, f64),
}

impl std::fmt::Display for BandViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "building {} at step {}: T_zone = {:.3} outside [{}, {}]",
            self.building, self.step, self.t_zone, self.band.0, self.band.1
        )
    }
}

impl BangBangTrajectory {
    pub fn steps(&self) -> usize {
        self.u_kw.len()
    }

    /// Zone temperatures outside the scheduled bands, for steps `1..`.
    pub fn violations(&self, bounds: &BoundConfig) -> Vec<BandViolation> {
        let mut out = Vec::new();
        for (k, x) in self.x.iter().enumerate().skip(1) {
            let band = bounds.zone_band(self.t0 + k as f64 * self.h);
            for l in 0..x.len() / 2 {
                let tz = x[2 * l + 1];
                if tz < band.0 - 1e-9 || tz > band.1 + 1e-9 {
                    out.push(BandViolation {
                        building: l + 1,
                        step: k,
                        t_zone: tz,
                        band,
                    });
                }
            }
        }
        out
    }
}

/// Simulate the thermostat for `steps` building steps from `history`
/// (most recent first). Before each step the HVAC of building `l` turns on
/// when its zone is above `setpoint + deadband`, off when below
/// `setpoint − deadband`, and otherwise keeps its previous mode; all
/// buildings start off.
pub fn bang_bang(
    disc: &DiscreteBuildingModel,
    history: &[DVector<f64>],
    t0: f64,
    steps: usize,
    config: &BangBangConfig,
    forecast: &dyn Forecast,
) -> Result<BangBangTrajectory> {
    if !(config.deadband > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dead band must be positive, got {}",
            config.deadband
        )));
    }
    if !(config.u_max_kw >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "HVAC capacity must be nonnegative, got {}",
            config.u_max_kw
        )));
    }
    let n_b = disc.n_b();
    let s = disc.scheme.order;
    if history.len() < s {
        return Err(Error::Dimension(format!(
            "order-{s} thermostat simulation needs {s} history states, got {}",
            history.len()
        )));
    }
    for x in &history[..s] {
        dim_check("building history state", 2 * n_b, x.len())?;
    }
    let mut hist: Vec<Vec<Vector2<f64>>> = (0..n_b)
        .map(|l| history[..s].iter().map(|x| Vector2::new(x[2 * l], x[2 * l + 1])).collect())
        .collect();
    let mut on = vec![false; n_b];
    let mut xs = vec![history[0].clone()];
    let mut us = Vec::with_capacity(steps);
    for k in 1..=steps {
        let tk = t0 + k as f64 * disc.h;
        let w = forecast.buildings(tk);
        dim_check("building forecast", 3 * n_b, w.len())?;
        let mut u = DVector::zeros(n_b);
        let mut x = DVector::zeros(2 * n_b);
        for l in 0..n_b {
            let tz = hist[l][0][1];
            if tz > config.setpoint + config.deadband {
                on[l] = true;
            } else if tz < config.setpoint - config.deadband {
                on[l] = false;
            }
            u[l] = if on[l] { config.u_max_kw } else { 0.0 };
            let wl = Vector3::new(w[3 * l], w[3 * l + 1], w[3 * l + 2]);
            let next = disc.step_one(l, &hist[l], u[l], &wl);
            hist[l].rotate_right(1);
            hist[l][0] = next;
            x[2 * l] = next[0];
            x[2 * l + 1] = next[1];
        }
        us.push(u);
        xs.push(x);
    }
    Ok(BangBangTrajectory {
        t0,
        h: disc.h,
        deadband: config.deadband,
        u_kw: us,
        x: xs,
    })
}

/// Thermostat with the dead band halved until the zone temperatures stay in
/// their bands, at most `config.max_halvings` times.
pub fn bang_bang_tuned(
    disc: &DiscreteBuildingModel,
    history: &[DVector<f64>],
    t0: f64,
    steps: usize,
    config: &BangBangConfig,
    bounds: &BoundConfig,
    forecast: &dyn Forecast,
) -> Result<BangBangTrajectory> {
    let mut cfg = config.clone();
    for attempt in 0..=config.max_halvings {
        let traj = bang_bang(disc, history, t0, steps, &cfg, forecast)?;
        let v = traj.violations(bounds);
        if v.is_empty() {
            return Ok(traj);
        }
        if attempt == config.max_halvings {
            return Err(Error::Infeasible(format!(
                "thermostat leaves the comfort band after {} dead band halvings ({} violations, first: {})",
                config.max_halvings,
                v.len(),
                v[0]
            )));
        }
        cfg.deadband *= 0.5;
    }
    unreachable!("loop returns on its last attempt")
}
