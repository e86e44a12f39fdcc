//! Horizon-level comparison of the joint problem with the two decoupled
//! designs: building MPC then grid MPC, and thermostat then grid MPC.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{
    assemble_btg_gmpc, assemble_building_mpc, assemble_grid_mpc, bang_bang_tuned, solve_checked, BangBangConfig,
    MpcSetup, SetpointMode,
};
use crate::error::Result;
use crate::profiles::Forecast;
use crate::qp::QpSettings;

/// Optimal horizon costs of one design, split between the grid operator
/// (frequency, regulation and dispatch terms) and the building operator
/// (HVAC energy).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignCost {
    pub grid: f64,
    pub building: f64,
}

impl DesignCost {
    pub fn total(&self) -> f64 {
        self.grid + self.building
    }
}

/// Costs of the three designs on one horizon starting at `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonComparison {
    pub t0: f64,
    pub joint: DesignCost,
    pub building_mpc: DesignCost,
    pub thermostat: DesignCost,
    /// Dead band the thermostat needed to stay in the comfort bands, °C.
    pub deadband: f64,
}

impl HorizonComparison {
    /// Joint cost does not exceed the building-MPC design, within `tol`
    /// relative to the larger total.
    pub fn joint_beats_building_mpc(&self, tol: f64) -> bool {
        le_within(self.joint.total(), self.building_mpc.total(), tol)
    }

    /// Joint cost does not exceed the thermostat design and the building MPC
    /// spends no more on HVAC than the thermostat.
    pub fn joint_beats_thermostat(&self, tol: f64) -> bool {
        le_within(self.joint.total(), self.thermostat.total(), tol)
            && le_within(self.building_mpc.building, self.thermostat.building, tol)
    }
}

fn le_within(a: f64, b: f64, tol: f64) -> bool {
    a <= b + tol * a.abs().max(b.abs()).max(1.0)
}

/// Solve the joint problem and both decoupled designs over the horizon
/// starting at `t0` from the given state histories (most recent first).
pub fn compare_designs(
    setup: &MpcSetup<'_>,
    t0: f64,
    grid_history: &[DVector<f64>],
    bldg_history: &[DVector<f64>],
    thermostat: &BangBangConfig,
    forecast: &dyn Forecast,
    settings: &QpSettings,
) -> Result<HorizonComparison> {
    let hz = setup.horizon;
    let at = |what: &str| format!("{what} at t = {t0} s");

    let joint = assemble_btg_gmpc(setup, t0, grid_history, bldg_history, SetpointMode::Optimize, forecast)?;
    let sol = solve_checked(&joint.qp, settings, None, &at("joint MPC"))?;
    let terms = joint.terms(&sol.x)?;
    let joint_cost = DesignCost {
        grid: terms.frequency + terms.regulation + terms.lopf,
        building: terms.hvac,
    };

    let bldg = assemble_building_mpc(setup, t0, bldg_history, forecast)?;
    let sol = solve_checked(&bldg.qp, settings, None, &at("building MPC"))?;
    let mpc_hvac: Vec<DVector<f64>> = (1..=hz.n_bldg()).map(|kb| bldg.hvac_kw(&sol.x, kb)).collect::<Result<_>>()?;
    let mpc_building = bldg.terms(&sol.x)?.hvac;

    let tr = bang_bang_tuned(
        setup.buildings,
        bldg_history,
        t0,
        hz.n_bldg(),
        thermostat,
        setup.bounds,
        forecast,
    )?;
    let w_bldg = hz.h_b / hz.t_p;
    let bb_building: f64 = tr
        .u_kw
        .iter()
        .enumerate()
        .map(|(j, u)| w_bldg * setup.costs.price(t0 + (j + 1) as f64 * hz.h_b) * u.sum())
        .sum();

    let grid_cost = |hvac: &[DVector<f64>], what: &str| -> Result<f64> {
        let per_step: Vec<DVector<f64>> = (0..hz.n_grid()).map(|k| hvac[k / hz.ratio()].clone()).collect();
        let p = assemble_grid_mpc(setup, t0, grid_history, &per_step, SetpointMode::Optimize, forecast)?;
        let sol = solve_checked(&p.qp, settings, None, &at(what))?;
        let t = p.terms(&sol.x)?;
        Ok(t.frequency + t.regulation + t.lopf)
    };

    Ok(HorizonComparison {
        t0,
        joint: joint_cost,
        building_mpc: DesignCost {
            grid: grid_cost(&mpc_hvac, "grid MPC with the building MPC schedule")?,
            building: mpc_building,
        },
        thermostat: DesignCost {
            grid: grid_cost(&tr.u_kw, "grid MPC with the thermostat schedule")?,
            building: bb_building,
        },
        deadband: tr.deadband,
    })
}
