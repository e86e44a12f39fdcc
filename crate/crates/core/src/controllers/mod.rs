//! Optimization problems of the building and grid operators and the
//! bang-bang building controller.
//!
//! Decision variables use physical units chosen for conditioning: generator
//! powers and deviations in p.u., angles in rad, frequency deviations in
//! rad/s, temperatures in °C and HVAC power in MW. Inputs and outputs of the
//! public API use kW for building power.

pub mod bang_bang;
pub mod decoupled;
pub mod lopf;
pub mod mpc;

pub use bang_bang::{bang_bang, bang_bang_tuned, BandViolation, BangBangConfig, BangBangTrajectory};
pub use decoupled::{compare_designs, DesignCost, HorizonComparison};
pub use lopf::{assemble_lopf, solve_lopf};
pub use mpc::{
    assemble, assemble_btg_gmpc, assemble_building_mpc, assemble_grid_mpc, HvacMode, MpcProblem, MpcRequest,
    MpcSetup, ObjectiveTerms, SetpointMode,
};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Generator, PowerNetwork, NOMINAL_FREQUENCY_HZ};
use crate::profiles::{DayProfiles, StepSeries, SECONDS_PER_DAY, SECONDS_PER_HOUR};
use crate::qp::{solve_with_hint, QpSettings, QpSolution, QpStatus, QuadraticProgram};

/// Weights of the operating cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    /// Penalty on each bus frequency deviation, $/(rad/s)².
    pub q_frequency: f64,
    /// Penalty on each bus angle, $/rad².
    pub q_angle: f64,
    /// The deviation penalty `R` is `r_scale` times the quadratic
    /// coefficients of the generator cost curves.
    pub r_scale: f64,
    /// Electricity price for building HVAC power, $/kWh.
    pub prices: StepSeries,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            q_frequency: 50_000.0,
            q_angle: 0.0,
            r_scale: 1.0,
            prices: DayProfiles::synthetic().price,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("q_frequency", self.q_frequency),
            ("q_angle", self.q_angle),
            ("r_scale", self.r_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.prices.values.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidParameter("electricity prices must be nonnegative".into()));
        }
        Ok(())
    }

    /// Diagonal of `Q` for a network with `n` buses, angles first.
    pub fn q_diag(&self, n: usize) -> Vec<f64> {
        (0..2 * n)
            .map(|i| if i < n { self.q_angle } else { self.q_frequency })
            .collect()
    }

    /// Diagonal of `R`, $/(p.u.)²h.
    pub fn r_diag(&self, net: &PowerNetwork) -> Vec<f64> {
        net.generators.iter().map(|g| self.r_scale * g.cost_quadratic).collect()
    }

    pub fn price(&self, t: f64) -> f64 {
        self.prices.at(t)
    }
}

/// Bounds on states and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConfig {
    /// Frequency band, Hz.
    pub frequency_hz: [f64; 2],
    /// Zone temperature band during the day, °C.
    pub day_zone_c: [f64; 2],
    /// Zone temperature band during the night, °C.
    pub night_zone_c: [f64; 2],
    /// Start of the day band, hours after midnight.
    pub day_start_h: f64,
    /// End of the day band, hours after midnight.
    pub day_end_h: f64,
    /// HVAC power band, kW.
    pub hvac_kw: [f64; 2],
    /// Symmetric band on the generator deviations, p.u.; the case file
    /// limits apply when unset.
    pub deviation_pu: Option<f64>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            frequency_hz: [59.0, 61.0],
            day_zone_c: [21.5, 23.0],
            night_zone_c: [22.0, 25.0],
            day_start_h: 8.0,
            day_end_h: 20.0,
            hvac_kw: [0.0, 800.0],
            deviation_pu: None,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("frequency_hz", self.frequency_hz),
            ("day_zone_c", self.day_zone_c),
            ("night_zone_c", self.night_zone_c),
            ("hvac_kw", self.hvac_kw),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} band [{lo}, {hi}] is invalid")));
            }
        }
        if !(self.frequency_hz[0] <= NOMINAL_FREQUENCY_HZ && NOMINAL_FREQUENCY_HZ <= self.frequency_hz[1]) {
            return Err(Error::InvalidParameter(format!(
                "frequency band must contain {NOMINAL_FREQUENCY_HZ} Hz"
            )));
        }
        if !(0.0 <= self.day_start_h && self.day_start_h < self.day_end_h && self.day_end_h <= 24.0) {
            return Err(Error::InvalidParameter(format!(
                "day schedule {}h to {}h must lie within one day",
                self.day_start_h, self.day_end_h
            )));
        }
        if let Some(d) = self.deviation_pu {
            if !(d >= 0.0) {
                return Err(Error::InvalidParameter(format!("deviation band {d} must be nonnegative")));
            }
        }
        Ok(())
    }

    pub fn is_day(&self, t: f64) -> bool {
        let h = t.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR + 1e-9;
        self.day_start_h <= h && h < self.day_end_h
    }

    /// Zone temperature band at time `t` (seconds after midnight of day 0).
    pub fn zone_band(&self, t: f64) -> (f64, f64) {
        let [lo, hi] = if self.is_day(t) { self.day_zone_c } else { self.night_zone_c };
        (lo, hi)
    }

    /// Band on the frequency deviation states, rad/s.
    pub fn omega_band(&self) -> (f64, f64) {
        let [lo, hi] = self.frequency_hz;
        (2.0 * PI * (lo - NOMINAL_FREQUENCY_HZ), 2.0 * PI * (hi - NOMINAL_FREQUENCY_HZ))
    }

    pub fn deviation_band(&self, g: &Generator) -> (f64, f64) {
        match self.deviation_pu {
            Some(d) => (-d, d),
            None => (g.delta_min, g.delta_max),
        }
    }

    /// HVAC band in MW.
    pub fn hvac_mw(&self) -> (f64, f64) {
        (self.hvac_kw[0] / 1000.0, self.hvac_kw[1] / 1000.0)
    }

    /// Default initial zone temperature: the middle of the band at `t`.
    pub fn mid_band(&self, t: f64) -> f64 {
        let (lo, hi) = self.zone_band(t);
        0.5 * (lo + hi)
    }
}

/// Prediction horizon and step sizes, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HorizonConfig {
    pub t_p: f64,
    pub h_g: f64,
    pub h_b: f64,
    /// Gear order.
    pub order: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            t_p: 900.0,
            h_g: 10.0,
            h_b: 300.0,
            order: 1,
        }
    }
}

/// `a / b` when it is a positive integer.
pub(crate) fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    if !(a > 0.0 && b > 0.0) {
        return None;
    }
    let r = a / b;
    let k = r.round();
    ((r - k).abs() < 1e-9 * r.max(1.0) && k >= 1.0).then_some(k as usize)
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::InvalidParameter(format!(
                "{what} must be a positive integer (T_p = {}, h_b = {}, h_g = {})",
                self.t_p, self.h_b, self.h_g
            )))
        };
        if integer_ratio(self.h_b, self.h_g).is_none() {
            return bad("h_b / h_g");
        }
        if integer_ratio(self.t_p, self.h_b).is_none() {
            return bad("T_p / h_b");
        }
        if integer_ratio(self.t_p, self.h_g).is_none() {
            return bad("T_p / h_g");
        }
        if !(1..=crate::gear::MAX_ORDER).contains(&self.order) {
            return Err(Error::InvalidParameter(format!("Gear order {} out of range", self.order)));
        }
        Ok(())
    }

    /// Grid steps per horizon.
    pub fn n_grid(&self) -> usize {
        integer_ratio(self.t_p, self.h_g).unwrap_or(0)
    }

    /// Building steps per horizon.
    pub fn n_bldg(&self) -> usize {
        integer_ratio(self.t_p, self.h_b).unwrap_or(0)
    }

    /// Grid steps per building step.
    pub fn ratio(&self) -> usize {
        integer_ratio(self.h_b, self.h_g).unwrap_or(0)
    }
}

/// Solve and turn any non-optimal status into an error naming `what` and the
/// offending constraint.
pub fn solve_checked(qp: &QuadraticProgram, settings: &QpSettings, hint: Option<&[f64]>, what: &str) -> Result<QpSolution> {
    let sol = solve_with_hint(qp, settings, hint);
    match sol.status {
        QpStatus::Optimal => Ok(sol),
        QpStatus::PrimalInfeasible => Err(Error::Infeasible(match &sol.culprit {
            Some(c) => format!("{what}: {c}"),
            None => what.to_string(),
        })),
        QpStatus::DualInfeasible => Err(Error::Solver(format!("{what}: objective unbounded below"))),
        QpStatus::IterationLimit => Err(Error::Solver(format!(
            "{what}: iteration limit after {} iterations (residuals {:.1e}, {:.1e})",
            sol.iterations, sol.prim_res, sol.dual_res
        ))),
    }
}
