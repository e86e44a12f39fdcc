//! Moving-horizon problems over one prediction horizon `T_p`.
//!
//! The objective per horizon is
//!
//! ```text
//! J(ū_g) + (h_b/T_p) Σ_kb c_b(t_kb)ᵀ u_b(kb) + (h_g/T_p) Σ_kg [Δu_gᵀ R Δu_g + x_gᵀ Q x_g]
//! ```
//!
//! Grid and building dynamics enter as Gear rows in pencil form. Every HVAC
//! variable `u_b(l, kb)` is held over its building step and referenced by all
//! grid rows inside that step. The generator setpoint `ū_g` is a single
//! variable for the whole horizon.

use nalgebra::{DMatrix, DVector};

use super::{BoundConfig, CostConfig, HorizonConfig};
use crate::building::W_PER_KW;
use crate::error::{dim_check, Error, Result};
use crate::gear::{DiscreteBuildingModel, DiscreteGridModel};
use crate::network::PowerNetwork;
use crate::profiles::Forecast;
use crate::qp::{QpBuilder, QuadraticProgram, RowKind, RowName, VarKind, VarName};

const INF: f64 = f64::INFINITY;

/// Shared, immutable models and parameters.
#[derive(Clone, Copy)]
pub struct MpcSetup<'a> {
    pub net: &'a PowerNetwork,
    pub grid: &'a DiscreteGridModel,
    pub buildings: &'a DiscreteBuildingModel,
    /// PTDF matrix of `net`.
    pub ptdf: &'a DMatrix<f64>,
    pub costs: &'a CostConfig,
    pub bounds: &'a BoundConfig,
    pub horizon: &'a HorizonConfig,
}

impl MpcSetup<'_> {
    pub fn check(&self) -> Result<()> {
        self.horizon.validate()?;
        self.costs.validate()?;
        self.bounds.validate()?;
        let h = self.horizon;
        if (self.grid.h() - h.h_g).abs() > 1e-12 * h.h_g || self.grid.scheme().order != h.order {
            return Err(Error::InvalidParameter(format!(
                "grid model discretized with h = {}, s = {} but the horizon uses h_g = {}, s = {}",
                self.grid.h(),
                self.grid.scheme().order,
                h.h_g,
                h.order
            )));
        }
        if (self.buildings.h - h.h_b).abs() > 1e-12 * h.h_b || self.buildings.scheme.order != h.order {
            return Err(Error::InvalidParameter(format!(
                "building model discretized with h = {}, s = {} but the horizon uses h_b = {}, s = {}",
                self.buildings.h, self.buildings.scheme.order, h.h_b, h.order
            )));
        }
        dim_check("buildings attached to the network", self.net.n_buildings(), self.buildings.n_b())?;
        dim_check("PTDF rows", self.net.n_branches(), self.ptdf.nrows())?;
        dim_check("PTDF columns", self.net.n_buses(), self.ptdf.ncols())?;
        Ok(())
    }
}

/// Treatment of the generator setpoints `ū_g`.
#[derive(Debug, Clone, Copy)]
pub enum SetpointMode<'a> {
    /// Optimize `ū_g` with its cost `J`, bounds and line-flow limits.
    Optimize,
    /// Use the given setpoints (p.u.); `J` and the line limits are dropped.
    Fixed(&'a [f64]),
}

/// Treatment of the HVAC inputs.
#[derive(Debug, Clone, Copy)]
pub enum HvacMode<'a> {
    /// Optimize `U_b` and `X_b`; `history[i]` is the building state `i`
    /// building steps before `t0`.
    Optimize { history: &'a [DVector<f64>] },
    /// HVAC power in kW for each grid step `1..=N_g` of the horizon.
    Fixed(&'a [DVector<f64>]),
}

/// What to assemble at time `t0`.
#[derive(Debug, Clone, Copy)]
pub struct MpcRequest<'a> {
    pub t0: f64,
    /// Grid state history, most recent first; `None` leaves the grid out.
    pub grid_history: Option<&'a [DVector<f64>]>,
    pub setpoint: SetpointMode<'a>,
    pub hvac: HvacMode<'a>,
}

/// Terms of the horizon objective, in $/h-weighted units as in the QP.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObjectiveTerms {
    pub frequency: f64,
    pub regulation: f64,
    pub lopf: f64,
    pub hvac: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.frequency + self.regulation + self.lopf + self.hvac
    }
}

/// An assembled horizon problem with the metadata needed to read its
/// solution.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub qp: QuadraticProgram,
    pub t0: f64,
    pub n_grid_steps: usize,
    pub n_bldg_steps: usize,
    pub n_buses: usize,
    pub n_generators: usize,
    pub n_buildings: usize,
    pub has_grid: bool,
    pub hvac_free: bool,
    pub setpoint_free: bool,
    fixed_setpoint: Vec<f64>,
    w_grid: f64,
    w_bldg: f64,
    q_diag: Vec<f64>,
    r_diag: Vec<f64>,
    gen_cost: Vec<(f64, f64, f64)>,
    /// Price at each building step, $/kWh.
    prices: Vec<f64>,
}

fn var(qp: &QuadraticProgram, kind: VarKind, entity: usize, time: usize) -> Result<usize> {
    let name = VarName::new(kind, entity, time);
    qp.var_index(&name)
        .ok_or_else(|| Error::UnknownVariable(name.to_string()))
}

impl MpcProblem {
    /// Generator setpoints in p.u., solved or fixed.
    pub fn setpoints(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.setpoint_free {
            return Ok(self.fixed_setpoint.clone());
        }
        (1..=self.n_generators)
            .map(|m| var(&self.qp, VarKind::GenSetpoint, m, 0).map(|i| x[i]))
            .collect()
    }

    /// Generator deviations at grid step `k` (1-based), p.u.
    pub fn deviation(&self, x: &[f64], k: usize) -> Result<DVector<f64>> {
        let v: Result<Vec<f64>> = (1..=self.n_generators)
            .map(|m| var(&self.qp, VarKind::GenDeviation, m, k).map(|i| x[i]))
            .collect();
        Ok(DVector::from_vec(v?))
    }

    /// Grid state `[δ; ω]` at grid step `k` (1-based).
    pub fn grid_state(&self, x: &[f64], k: usize) -> Result<DVector<f64>> {
        let n = self.n_buses;
        let mut out = DVector::zeros(2 * n);
        for b in 1..=n {
            out[b - 1] = x[var(&self.qp, VarKind::Angle, b, k)?];
            out[n + b - 1] = x[var(&self.qp, VarKind::Frequency, b, k)?];
        }
        Ok(out)
    }

    /// HVAC power at building step `kb` (1-based), kW.
    pub fn hvac_kw(&self, x: &[f64], kb: usize) -> Result<DVector<f64>> {
        let v: Result<Vec<f64>> = (1..=self.n_buildings)
            .map(|l| var(&self.qp, VarKind::Hvac, l, kb).map(|i| x[i] * W_PER_KW))
            .collect();
        Ok(DVector::from_vec(v?))
    }

    /// Building state `[T_w1, T_z1, ...]` at building step `kb` (1-based).
    pub fn building_state(&self, x: &[f64], kb: usize) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(2 * self.n_buildings);
        for l in 1..=self.n_buildings {
            out[2 * (l - 1)] = x[var(&self.qp, VarKind::WallTemp, l, kb)?];
            out[2 * (l - 1) + 1] = x[var(&self.qp, VarKind::ZoneTemp, l, kb)?];
        }
        Ok(out)
    }

    /// Evaluate the objective term by term at `x`.
    pub fn terms(&self, x: &[f64]) -> Result<ObjectiveTerms> {
        let mut t = ObjectiveTerms::default();
        if self.setpoint_free && self.has_grid {
            for (m, (c2, c1, c0)) in self.gen_cost.iter().enumerate() {
                let u = x[var(&self.qp, VarKind::GenSetpoint, m + 1, 0)?];
                t.lopf += c2 * u * u + c1 * u + c0;
            }
        }
        if self.hvac_free {
            for kb in 1..=self.n_bldg_steps {
                let u = self.hvac_kw(x, kb)?;
                t.hvac += self.w_bldg * self.prices[kb - 1] * u.sum();
            }
        }
        if self.has_grid {
            for k in 1..=self.n_grid_steps {
                let xg = self.grid_state(x, k)?;
                t.frequency += self.w_grid * xg.iter().zip(&self.q_diag).map(|(v, q)| q * v * v).sum::<f64>();
                let du = self.deviation(x, k)?;
                t.regulation += self.w_grid * du.iter().zip(&self.r_diag).map(|(v, r)| r * v * v).sum::<f64>();
            }
        }
        Ok(t)
    }
}

fn check_history(what: &str, history: &[DVector<f64>], order: usize, dim: usize) -> Result<()> {
    if history.len() < order {
        return Err(Error::Dimension(format!(
            "{what}: order-{order} Gear rows need {order} history states, got {}",
            history.len()
        )));
    }
    for x in &history[..order] {
        dim_check(what, dim, x.len())?;
    }
    Ok(())
}

/// Assemble one horizon problem.
pub fn assemble(setup: &MpcSetup<'_>, req: &MpcRequest<'_>, forecast: &dyn Forecast) -> Result<MpcProblem> {
    setup.check()?;
    let hz = setup.horizon;
    let net = setup.net;
    let dae = &setup.grid.dae;
    let (n, n_g, n_b) = (dae.n, dae.n_g, dae.n_b);
    let n_grid = hz.n_grid();
    let n_bldg = hz.n_bldg();
    let ratio = hz.ratio();
    let s = hz.order;
    let t0 = req.t0;

    let has_grid = req.grid_history.is_some();
    let hvac_free = matches!(req.hvac, HvacMode::Optimize { .. });
    let setpoint_free = has_grid && matches!(req.setpoint, SetpointMode::Optimize);
    if !has_grid && !hvac_free {
        return Err(Error::InvalidParameter(
            "a problem without the grid must optimize the HVAC inputs".into(),
        ));
    }
    let steps_b = t0 / hz.h_b;
    if (hvac_free || setpoint_free) && (steps_b - steps_b.round()).abs() > 1e-9 * steps_b.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "t0 = {t0} s must be a multiple of h_b = {} s when HVAC or setpoints are optimized",
            hz.h_b
        )));
    }

    let mut b = QpBuilder::new();
    let w_grid = hz.h_g / hz.t_p;
    let w_bldg = hz.h_b / hz.t_p;
    let q_diag = setup.costs.q_diag(n);
    let r_diag = setup.costs.r_diag(net);

    // Generator setpoints.
    let mut fixed_setpoint = Vec::new();
    let mut ubar = Vec::new();
    if setpoint_free {
        for (m, g) in net.generators.iter().enumerate() {
            let i = b.add_var(VarName::new(VarKind::GenSetpoint, m + 1, 0), g.p_min, g.p_max);
            b.add_quadratic(i, i, g.cost_quadratic);
            b.add_linear(i, g.cost_linear);
            b.add_constant(g.cost_constant);
            ubar.push(i);
        }
    } else if let (true, SetpointMode::Fixed(u)) = (has_grid, req.setpoint) {
        dim_check("fixed generator setpoints", n_g, u.len())?;
        fixed_setpoint = u.to_vec();
    }

    // Building block.
    let mut hvac_vars: Vec<Vec<usize>> = Vec::new();
    let mut prices = Vec::new();
    if let HvacMode::Optimize { history } = req.hvac {
        let disc = setup.buildings;
        check_history("building history", history, s, 2 * n_b)?;
        let (u_lo, u_hi) = setup.bounds.hvac_mw();
        let hb0 = disc.h * disc.scheme.beta0;
        let mut states: Vec<Vec<(usize, usize)>> = Vec::with_capacity(n_bldg);
        for kb in 1..=n_bldg {
            let tk = t0 + kb as f64 * hz.h_b;
            let (z_lo, z_hi) = setup.bounds.zone_band(tk);
            let price = setup.costs.price(tk);
            prices.push(price);
            let w = forecast.buildings(tk);
            dim_check("building forecast", 3 * n_b, w.len())?;
            let mut us = Vec::with_capacity(n_b);
            let mut xs = Vec::with_capacity(n_b);
            for l in 0..n_b {
                let tw = b.add_var(VarName::new(VarKind::WallTemp, l + 1, kb), -INF, INF);
                let tz = b.add_var(VarName::new(VarKind::ZoneTemp, l + 1, kb), z_lo, z_hi);
                let u = b.add_var(VarName::new(VarKind::Hvac, l + 1, kb), u_lo, u_hi);
                b.add_linear(u, w_bldg * price * W_PER_KW);
                xs.push((tw, tz));
                us.push(u);
            }
            states.push(xs);
            for l in 0..n_b {
                let blk = &disc.cluster.blocks[l];
                let pencil = nalgebra::Matrix2::identity() - blk.a * hb0;
                let wl = nalgebra::Vector3::new(w[3 * l], w[3 * l + 1], w[3 * l + 2]);
                let mut rhs = blk.bw * wl * hb0;
                let (tw, tz) = states[kb - 1][l];
                let mut terms: [Vec<(usize, f64)>; 2] = [
                    vec![(tw, pencil[(0, 0)]), (tz, pencil[(0, 1)])],
                    vec![(tw, pencil[(1, 0)]), (tz, pencil[(1, 1)])],
                ];
                for r in 0..2 {
                    terms[r].push((us[l], -hb0 * blk.bu[r] * W_PER_KW));
                }
                for (i, alpha) in disc.scheme.alphas.iter().enumerate() {
                    let lag = i + 1;
                    if kb > lag {
                        let (pw, pz) = states[kb - lag - 1][l];
                        terms[0].push((pw, -alpha));
                        terms[1].push((pz, -alpha));
                    } else {
                        let h = &history[lag - kb];
                        rhs[0] += alpha * h[2 * l];
                        rhs[1] += alpha * h[2 * l + 1];
                    }
                }
                b.add_eq(RowName::new(RowKind::WallDynamics, l + 1, kb), &terms[0], rhs[0]);
                b.add_eq(RowName::new(RowKind::ZoneDynamics, l + 1, kb), &terms[1], rhs[1]);
            }
            hvac_vars.push(us);
        }
    }

    // Grid block.
    if let Some(history) = req.grid_history {
        check_history("grid history", history, s, 2 * n)?;
        if let HvacMode::Fixed(u) = req.hvac {
            if u.len() != n_grid {
                return Err(Error::Dimension(format!(
                    "fixed HVAC trajectory: expected {n_grid} grid steps, got {}",
                    u.len()
                )));
            }
            for v in u {
                dim_check("fixed HVAC input", n_b, v.len())?;
            }
        }
        let stepper = &setup.grid.stepper;
        let hb0 = stepper.h * stepper.scheme.beta0;
        let pencil = &stepper.e - &stepper.a * hb0;
        let e = &dae.e_diag;
        let (w_lo, w_hi) = setup.bounds.omega_band();
        let dev: Vec<(f64, f64)> = net.generators.iter().map(|g| setup.bounds.deviation_band(g)).collect();
        let mut xs: Vec<Vec<usize>> = Vec::with_capacity(n_grid);
        for k in 1..=n_grid {
            let tk = t0 + k as f64 * hz.h_g;
            let mut xk = Vec::with_capacity(2 * n);
            for bus in 1..=n {
                let i = b.add_var(VarName::new(VarKind::Angle, bus, k), -INF, INF);
                b.add_quadratic(i, i, w_grid * q_diag[bus - 1]);
                xk.push(i);
            }
            for bus in 1..=n {
                let i = b.add_var(VarName::new(VarKind::Frequency, bus, k), w_lo, w_hi);
                b.add_quadratic(i, i, w_grid * q_diag[n + bus - 1]);
                xk.push(i);
            }
            let mut du = Vec::with_capacity(n_g);
            for m in 0..n_g {
                let i = b.add_var(VarName::new(VarKind::GenDeviation, m + 1, k), dev[m].0, dev[m].1);
                b.add_quadratic(i, i, w_grid * r_diag[m]);
                du.push(i);
            }
            xs.push(xk);

            let wg = forecast.grid(tk);
            dim_check("grid forecast", n + n_b, wg.len())?;
            let mut rhs = &dae.b_wg * &wg * hb0;
            if !setpoint_free {
                let u = DVector::from_column_slice(&fixed_setpoint);
                rhs += &dae.b_ug * u * hb0;
            }
            if let HvacMode::Fixed(u) = req.hvac {
                rhs += &dae.a_ub * &u[k - 1] * hb0;
            }
            for r in 0..2 * n {
                let mut terms: Vec<(usize, f64)> = Vec::new();
                for c in 0..2 * n {
                    let v = pencil[(r, c)];
                    if v != 0.0 {
                        terms.push((xs[k - 1][c], v));
                    }
                }
                for (i, alpha) in stepper.scheme.alphas.iter().enumerate() {
                    let lag = i + 1;
                    if e[r] == 0.0 {
                        continue;
                    }
                    if k > lag {
                        terms.push((xs[k - lag - 1][r], -alpha * e[r]));
                    } else {
                        rhs[r] += alpha * e[r] * history[lag - k][r];
                    }
                }
                for m in 0..n_g {
                    let c = dae.b_ug[(r, m)];
                    if c != 0.0 {
                        terms.push((du[m], -hb0 * c));
                        if setpoint_free {
                            terms.push((ubar[m], -hb0 * c));
                        }
                    }
                }
                if hvac_free {
                    let kb = (k - 1) / ratio + 1;
                    for l in 0..n_b {
                        let c = dae.a_ub[(r, l)];
                        if c != 0.0 {
                            terms.push((hvac_vars[kb - 1][l], -hb0 * c * W_PER_KW));
                        }
                    }
                }
                let kind = if r < n { RowKind::AngleDynamics } else { RowKind::FrequencyDynamics };
                b.add_eq(RowName::new(kind, r % n + 1, k), &terms, rhs[r]);
            }
        }

        // Line-flow limits on the dispatch, once per building step.
        if setpoint_free {
            let limited: Vec<usize> = (0..net.n_branches())
                .filter(|&j| net.branches[j].flow_limit.is_finite())
                .collect();
            for kb in 1..=n_bldg {
                let tk = t0 + kb as f64 * hz.h_b;
                let wg = forecast.grid(tk);
                let fixed_u = match req.hvac {
                    HvacMode::Fixed(u) => Some(&u[(kb - 1) * ratio]),
                    HvacMode::Optimize { .. } => None,
                };
                for &j in &limited {
                    let row = setup.ptdf.row(j);
                    let mut terms = Vec::new();
                    for (m, &bus) in dae.generator_bus.iter().enumerate() {
                        terms.push((ubar[m], row[bus]));
                    }
                    let mut offset = 0.0;
                    for k in 0..n {
                        offset -= row[k] * wg[k];
                    }
                    for (l, &bus) in dae.building_bus.iter().enumerate() {
                        offset -= row[bus] * dae.kw_to_pu * wg[n + l];
                        match fixed_u {
                            Some(u) => offset -= row[bus] * dae.kw_to_pu * u[l],
                            None => terms.push((hvac_vars[kb - 1][l], -row[bus] * dae.kw_to_pu * W_PER_KW)),
                        }
                    }
                    let f = net.branches[j].flow_limit;
                    b.add_row(RowName::new(RowKind::LineFlow, j + 1, kb), &terms, -f - offset, f - offset);
                }
            }
        }
    }

    let expected = n_bldg * 3 * n_b * usize::from(hvac_free)
        + usize::from(has_grid) * n_grid * (2 * n + n_g)
        + usize::from(setpoint_free) * n_g;
    if b.n_vars() != expected {
        return Err(Error::Dimension(format!(
            "assembled {} variables, expected {expected}",
            b.n_vars()
        )));
    }
    let qp = b.build()?;
    Ok(MpcProblem {
        qp,
        t0,
        n_grid_steps: if has_grid { n_grid } else { 0 },
        n_bldg_steps: if hvac_free { n_bldg } else { 0 },
        n_buses: n,
        n_generators: n_g,
        n_buildings: n_b,
        has_grid,
        hvac_free,
        setpoint_free,
        fixed_setpoint,
        w_grid,
        w_bldg,
        q_diag,
        r_diag,
        gen_cost: net
            .generators
            .iter()
            .map(|g| (g.cost_quadratic, g.cost_linear, g.cost_constant))
            .collect(),
        prices,
    })
}

/// Building operator's problem: HVAC cost subject to building dynamics and
/// comfort bands.
pub fn assemble_building_mpc(
    setup: &MpcSetup<'_>,
    t0: f64,
    history: &[DVector<f64>],
    forecast: &dyn Forecast,
) -> Result<MpcProblem> {
    assemble(
        setup,
        &MpcRequest {
            t0,
            grid_history: None,
            setpoint: SetpointMode::Optimize,
            hvac: HvacMode::Optimize { history },
        },
        forecast,
    )
}

/// Grid operator's problem for a fixed HVAC trajectory (kW per grid step).
/// With [`SetpointMode::Optimize`] the dispatch `ū_g` is optimized with its
/// cost, bounds and line limits.
pub fn assemble_grid_mpc(
    setup: &MpcSetup<'_>,
    t0: f64,
    grid_history: &[DVector<f64>],
    hvac_kw: &[DVector<f64>],
    setpoint: SetpointMode<'_>,
    forecast: &dyn Forecast,
) -> Result<MpcProblem> {
    assemble(
        setup,
        &MpcRequest {
            t0,
            grid_history: Some(grid_history),
            setpoint,
            hvac: HvacMode::Fixed(hvac_kw),
        },
        forecast,
    )
}

/// Joint building and grid problem.
pub fn assemble_btg_gmpc(
    setup: &MpcSetup<'_>,
    t0: f64,
    grid_history: &[DVector<f64>],
    bldg_history: &[DVector<f64>],
    setpoint: SetpointMode<'_>,
    forecast: &dyn Forecast,
) -> Result<MpcProblem> {
    assemble(
        setup,
        &MpcRequest {
            t0,
            grid_history: Some(grid_history),
            setpoint,
            hvac: HvacMode::Optimize { history: bldg_history },
        },
        forecast,
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::building::{sample_cluster, BuildingParams};
    use crate::controllers::solve_lopf;
    use crate::gear::{discretize_buildings, discretize_grid, gear_coefficients};
    use crate::grid::assemble_dae;
    use crate::network::{attach_buildings, bundled_case, parse_case, ptdf, round_robin_assignment};
    use crate::profiles::{DayProfiles, ProfileForecast};
    use crate::qp::{solve, QpSettings, QpStatus};
    use approx::assert_relative_eq;

    /// Owned models for one test instance.
    pub(crate) struct Fixture {
        pub net: PowerNetwork,
        pub grid: DiscreteGridModel,
        pub bldg: DiscreteBuildingModel,
        pub ptdf: DMatrix<f64>,
        pub costs: CostConfig,
        pub bounds: BoundConfig,
        pub horizon: HorizonConfig,
        pub forecast: ProfileForecast,
    }

    impl Fixture {
        pub fn new(case: &str, n_b: usize, horizon: HorizonConfig, seed: u64) -> Self {
            let net = parse_case(bundled_case(case).unwrap()).unwrap();
            let assign = round_robin_assignment(&net, n_b, seed).unwrap();
            let net = attach_buildings(&net, &assign).unwrap();
            let scheme = gear_coefficients(horizon.order).unwrap();
            let grid = discretize_grid(&assemble_dae(&net), horizon.h_g, &scheme).unwrap();
            let cluster = sample_cluster(&BuildingParams::reference(), n_b, 0.1, seed).unwrap();
            let bldg = discretize_buildings(&cluster, horizon.h_b, &scheme).unwrap();
            let ptdf = ptdf(&net).unwrap();
            let forecast = ProfileForecast::new(&net, DayProfiles::synthetic());
            Self {
                net,
                grid,
                bldg,
                ptdf,
                costs: CostConfig::default(),
                bounds: BoundConfig::default(),
                horizon,
                forecast,
            }
        }

        pub fn setup(&self) -> MpcSetup<'_> {
            MpcSetup {
                net: &self.net,
                grid: &self.grid,
                buildings: &self.bldg,
                ptdf: &self.ptdf,
                costs: &self.costs,
                bounds: &self.bounds,
                horizon: &self.horizon,
            }
        }

        /// Grid equilibrium for the dispatch at `t` with idle HVAC.
        pub fn grid_equilibrium(&self, t: f64) -> DVector<f64> {
            let dae = &self.grid.dae;
            let w = self.forecast.grid(t);
            let zero = DVector::zeros(dae.n_b);
            let u = solve_lopf(&self.net, &self.ptdf, &zero, &w, &QpSettings::default()).unwrap();
            let inj = dae.injection(&DVector::from_vec(u), &zero, &w);
            dae.steady_state(&inj, self.net.slack_bus - 1, false).unwrap()
        }

        pub fn building_start(&self, t_zone: f64) -> DVector<f64> {
            DVector::from_element(2 * self.bldg.n_b(), t_zone)
        }
    }

    fn noon() -> f64 {
        12.0 * 3600.0
    }

    #[test]
    fn aliasing_counts_and_variable_budget() {
        let fx = Fixture::new("case9", 6, HorizonConfig::default(), 1);
        let xg = fx.grid_equilibrium(noon());
        let xb = fx.building_start(22.25);
        let p = assemble_btg_gmpc(&fx.setup(), noon(), &[xg], &[xb], SetpointMode::Optimize, &fx.forecast).unwrap();
        assert_eq!((p.n_grid_steps, p.n_bldg_steps), (90, 3));
        let qp = &p.qp;
        for l in 1..=6 {
            for kb in 1..=3 {
                let j = qp.var_index(&VarName::new(VarKind::Hvac, l, kb)).unwrap();
                let rows: Vec<RowName> = (qp.a.colptr[j]..qp.a.colptr[j + 1])
                    .map(|q| qp.row_names[qp.a.rowind[q]])
                    .filter(|r| r.kind == RowKind::FrequencyDynamics)
                    .collect();
                assert_eq!(rows.len(), 30, "u_b[{l}]@{kb}");
                assert!(rows.iter().all(|r| (r.time - 1) / 30 + 1 == kb));
            }
        }
        let (n, n_g, n_b) = (9, 3, 6);
        assert!(qp.n_vars() <= 90 * (3 * n_b + 2 * n + 2 * n_g));
        assert_eq!(qp.n_vars(), 90 * (2 * n + n_g) + 3 * 3 * n_b + n_g);
    }

    #[test]
    fn equal_time_scales_give_one_grid_row_per_input() {
        let h = HorizonConfig {
            t_p: 60.0,
            h_g: 10.0,
            h_b: 10.0,
            order: 1,
        };
        let fx = Fixture::new("case9", 3, h, 2);
        let xg = fx.grid_equilibrium(noon());
        let xb = fx.building_start(22.25);
        let p = assemble_btg_gmpc(&fx.setup(), noon(), &[xg], &[xb], SetpointMode::Optimize, &fx.forecast).unwrap();
        let qp = &p.qp;
        let j = qp.var_index(&VarName::new(VarKind::Hvac, 1, 4)).unwrap();
        let rows: Vec<_> = (qp.a.colptr[j]..qp.a.colptr[j + 1])
            .map(|q| qp.row_names[qp.a.rowind[q]])
            .filter(|r| r.kind == RowKind::FrequencyDynamics)
            .collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].time, 4);
        let s = solve(qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
    }

    fn short_horizon() -> HorizonConfig {
        HorizonConfig {
            t_p: 300.0,
            h_g: 10.0,
            h_b: 100.0,
            order: 1,
        }
    }

    #[test]
    fn objective_decomposes_and_dynamics_hold() {
        for order in [1, 2] {
            let h = HorizonConfig {
                order,
                ..short_horizon()
            };
            let fx = Fixture::new("case9", 8, h, 3);
            let xg = fx.grid_equilibrium(noon());
            let xb = fx.building_start(22.25);
            let hg = vec![xg; order];
            let hb = vec![xb; order];
            let p = assemble_btg_gmpc(&fx.setup(), noon(), &hg, &hb, SetpointMode::Optimize, &fx.forecast).unwrap();
            let s = solve(&p.qp, &QpSettings::default());
            assert_eq!(s.status, QpStatus::Optimal);
            let terms = p.terms(&s.x).unwrap();
            let obj = p.qp.objective(&s.x);
            assert!((terms.total() - obj).abs() <= 1e-8 * obj.abs().max(1.0), "{terms:?} vs {obj}");
            assert!(terms.lopf > 0.0 && terms.hvac > 0.0);
            let ax = p.qp.row_values(&s.x);
            for (r, name) in p.qp.row_names.iter().enumerate() {
                if name.kind != RowKind::LineFlow {
                    let res = (ax[r] - p.qp.row_lower[r]).abs();
                    assert!(res <= 1e-7, "row {name}: residual {res:.2e}");
                }
            }
        }
    }

    #[test]
    fn solution_matches_forward_simulation() {
        let fx = Fixture::new("case9", 4, short_horizon(), 4);
        let xg = fx.grid_equilibrium(noon());
        let xb = fx.building_start(22.25);
        let p = assemble_btg_gmpc(&fx.setup(), noon(), &[xg.clone()], &[xb.clone()], SetpointMode::Optimize, &fx.forecast)
            .unwrap();
        let s = solve(&p.qp, &QpSettings::default());
        let ubar = DVector::from_vec(p.setpoints(&s.x).unwrap());
        let mut hist = vec![xg];
        for k in 1..=p.n_grid_steps {
            let kb = (k - 1) / 10 + 1;
            let u_g = &ubar + p.deviation(&s.x, k).unwrap();
            let u_b = p.hvac_kw(&s.x, kb).unwrap();
            let w = fx.forecast.grid(noon() + 10.0 * k as f64);
            let x = fx.grid.step(&hist, &u_g, &u_b, &w).unwrap();
            let planned = p.grid_state(&s.x, k).unwrap();
            assert!((&x - &planned).amax() < 1e-6, "step {k}: {:.2e}", (&x - &planned).amax());
            hist[0] = planned;
        }
        let mut hb = vec![xb];
        for kb in 1..=p.n_bldg_steps {
            let u = p.hvac_kw(&s.x, kb).unwrap();
            let w = fx.forecast.buildings(noon() + 100.0 * kb as f64);
            let x = fx.bldg.step(&hb, &u, &w).unwrap();
            let planned = p.building_state(&s.x, kb).unwrap();
            assert!((&x - &planned).amax() < 1e-6);
            hb[0] = planned;
        }
    }

    #[test]
    fn building_mpc_zero_prices() {
        let mut fx = Fixture::new("case9", 3, short_horizon(), 5);
        fx.costs.prices = crate::profiles::StepSeries::constant(0.0);
        let xb = fx.building_start(22.25);
        let p = assemble_building_mpc(&fx.setup(), noon(), &[xb], &fx.forecast).unwrap();
        assert!(!p.has_grid);
        let s = solve(&p.qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.objective.abs() < 1e-9);
        assert!(p.qp.max_violation(&s.x) < 1e-7);
    }

    #[test]
    fn building_mpc_expensive_power_idles() {
        let mut fx = Fixture::new("case9", 3, short_horizon(), 6);
        fx.costs.prices = crate::profiles::StepSeries::constant(100.0);
        fx.bounds.day_zone_c = [10.0, 40.0];
        let xb = fx.building_start(22.25);
        let p = assemble_building_mpc(&fx.setup(), noon(), &[xb], &fx.forecast).unwrap();
        let s = solve(&p.qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        for kb in 1..=3 {
            assert!(p.hvac_kw(&s.x, kb).unwrap().amax() < 1e-6);
        }
    }

    #[test]
    fn building_mpc_pins_zone_at_upper_bound() {
        let h = HorizonConfig {
            t_p: 300.0,
            h_g: 300.0,
            h_b: 300.0,
            order: 1,
        };
        let mut fx = Fixture::new("case9", 1, h, 7);
        let start = 22.9;
        fx.bounds.day_zone_c = [21.5, start];
        let xb = fx.building_start(start);
        let p = assemble_building_mpc(&fx.setup(), noon(), &[xb.clone()], &fx.forecast).unwrap();
        let s = solve(&p.qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        // Solve (I − hA) x = x0 + h (B_u u + B_w w) for u with T_zone = start.
        let blk = &fx.bldg.cluster.blocks[0];
        let m = nalgebra::Matrix2::identity() - blk.a * 300.0;
        let inv = m.try_inverse().unwrap();
        let w = fx.forecast.buildings(noon() + 300.0);
        let wl = nalgebra::Vector3::new(w[0], w[1], w[2]);
        let x0 = nalgebra::Vector2::new(xb[0], xb[1]);
        let free = inv * (x0 + blk.bw * wl * 300.0);
        let per_kw = inv * (blk.bu * 300.0);
        let u = (start - free[1]) / per_kw[1];
        assert!(u > 0.0);
        assert_relative_eq!(p.hvac_kw(&s.x, 1).unwrap()[0], u, epsilon = 1e-4);
    }

    #[test]
    fn grid_mpc_equilibrium_at_rest() {
        let mut fx = Fixture::new("case9", 2, short_horizon(), 8);
        fx.forecast.nominal_loads.fill(0.0);
        fx.forecast.profiles.misc_kw = crate::profiles::StepSeries::constant(0.0);
        let n = fx.net.n_buses();
        let x0 = DVector::zeros(2 * n);
        let u_b = vec![DVector::zeros(2); 30];
        let ubar = vec![0.0; 3];
        let p = assemble_grid_mpc(&fx.setup(), noon(), &[x0], &u_b, SetpointMode::Fixed(&ubar), &fx.forecast).unwrap();
        let s = solve(&p.qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.x.iter().all(|v| v.abs() < 1e-8));
        assert!(s.objective.abs() < 1e-10);
    }

    #[test]
    fn grid_mpc_without_penalties_is_dispatch_cost() {
        let mut fx = Fixture::new("case9", 2, short_horizon(), 9);
        fx.costs.q_frequency = 0.0;
        fx.costs.r_scale = 0.0;
        let xg = fx.grid_equilibrium(noon());
        let u_b = vec![DVector::from_element(2, 200.0); 30];
        let p = assemble_grid_mpc(&fx.setup(), noon(), &[xg], &u_b, SetpointMode::Optimize, &fx.forecast).unwrap();
        let s = solve(&p.qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        let t = p.terms(&s.x).unwrap();
        assert_eq!(t.frequency, 0.0);
        assert_eq!(t.regulation, 0.0);
        assert_relative_eq!(s.objective, t.lopf, max_relative = 1e-10);
    }

    const ONE_BUS: &str = "\
[case]
name one_bus
base_mva 100
units mw
slack 1

[bus]
1 0

[gen]
1 1 0 200 -20 20

[gencost]
1 0.01 10 0

[dynamics]
1 0.5 2.0 0
";

    #[test]
    fn step_load_matches_hand_iteration() {
        let net = parse_case(ONE_BUS).unwrap();
        let h = HorizonConfig {
            t_p: 100.0,
            h_g: 1.0,
            h_b: 10.0,
            order: 1,
        };
        let scheme = gear_coefficients(1).unwrap();
        let grid = discretize_grid(&assemble_dae(&net), h.h_g, &scheme).unwrap();
        let cluster = crate::building::BuildingCluster::new(vec![]).unwrap();
        let bldg = discretize_buildings(&cluster, h.h_b, &scheme).unwrap();
        let ptdf = ptdf(&net).unwrap();
        let costs = CostConfig::default();
        let bounds = BoundConfig {
            deviation_pu: Some(0.0),
            ..Default::default()
        };
        let setup = MpcSetup {
            net: &net,
            grid: &grid,
            buildings: &bldg,
            ptdf: &ptdf,
            costs: &costs,
            bounds: &bounds,
            horizon: &h,
        };
        let load = 0.1;
        let forecast = crate::profiles::ConstantForecast {
            grid: DVector::from_element(1, load),
            buildings: DVector::zeros(0),
        };
        let ubar = [0.0];
        let x0 = DVector::zeros(2);
        let u_b = vec![DVector::zeros(0); 100];
        let p = assemble_grid_mpc(&setup, 0.0, &[x0], &u_b, SetpointMode::Fixed(&ubar), &forecast).unwrap();
        let s = solve(&p.qp, &QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        let (m, d) = (0.5, 2.0);
        let (mut delta, mut omega) = (0.0, 0.0);
        for k in 1..=100 {
            omega = (m * omega - h.h_g * load) / (m + h.h_g * d);
            delta += h.h_g * omega;
            let x = p.grid_state(&s.x, k).unwrap();
            assert_relative_eq!(x[1], omega, epsilon = 1e-9);
            assert_relative_eq!(x[0], delta, epsilon = 1e-7);
        }
        assert_relative_eq!(omega, -load / d, epsilon = 1e-9);
    }

    #[test]
    fn misaligned_start_rejected() {
        let fx = Fixture::new("case9", 2, short_horizon(), 10);
        let xg = fx.grid_equilibrium(noon());
        let xb = fx.building_start(22.25);
        let err = assemble_btg_gmpc(&fx.setup(), noon() + 10.0, &[xg], &[xb], SetpointMode::Optimize, &fx.forecast)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn short_history_rejected() {
        let h = HorizonConfig {
            order: 2,
            ..short_horizon()
        };
        let fx = Fixture::new("case9", 2, h, 11);
        let xg = fx.grid_equilibrium(noon());
        let xb = fx.building_start(22.25);
        let err = assemble_btg_gmpc(&fx.setup(), noon(), &[xg], &[xb.clone(), xb], SetpointMode::Optimize, &fx.forecast)
            .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
