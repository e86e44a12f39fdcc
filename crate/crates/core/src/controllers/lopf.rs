//! Linearized (DC) optimal power flow.

use nalgebra::{DMatrix, DVector};

use super::solve_checked;
use crate::error::{dim_check, Result};
use crate::network::PowerNetwork;
use crate::qp::{QpBuilder, QpSettings, QuadraticProgram, RowKind, RowName, VarKind, VarName};

/// Dispatch problem: minimize `Σ J_m(ū_m)` subject to generator limits, the
/// system power balance and PTDF line-flow limits, for fixed building loads
/// `hvac_kw` and disturbances `w_g = [P_BL (p.u.); P_misc (kW)]`.
pub fn assemble_lopf(
    net: &PowerNetwork,
    ptdf: &DMatrix<f64>,
    hvac_kw: &DVector<f64>,
    w_g: &DVector<f64>,
) -> Result<QuadraticProgram> {
    let n = net.n_buses();
    let n_b = net.n_buildings();
    dim_check("HVAC input", n_b, hvac_kw.len())?;
    dim_check("grid disturbance", n + n_b, w_g.len())?;
    dim_check("PTDF rows", net.n_branches(), ptdf.nrows())?;
    let kw_to_pu = 1.0 / (crate::building::W_PER_KW * net.base_mva);

    // Net withdrawal per bus.
    let mut load = DVector::zeros(n);
    for k in 0..n {
        load[k] = w_g[k];
    }
    for (l, &bus) in net.building_bus.iter().enumerate() {
        load[bus - 1] += kw_to_pu * (hvac_kw[l] + w_g[n + l]);
    }

    let mut b = QpBuilder::new();
    let mut u = Vec::with_capacity(net.n_generators());
    for (m, g) in net.generators.iter().enumerate() {
        let i = b.add_var(VarName::new(VarKind::GenSetpoint, m + 1, 0), g.p_min, g.p_max);
        b.add_quadratic(i, i, g.cost_quadratic);
        b.add_linear(i, g.cost_linear);
        b.add_constant(g.cost_constant);
        u.push(i);
    }
    let all: Vec<(usize, f64)> = u.iter().map(|&i| (i, 1.0)).collect();
    b.add_eq(RowName::new(RowKind::PowerBalance, 0, 0), &all, load.sum());
    for (j, br) in net.branches.iter().enumerate() {
        if !br.flow_limit.is_finite() {
            continue;
        }
        let row = ptdf.row(j);
        let terms: Vec<(usize, f64)> = net
            .generators
            .iter()
            .enumerate()
            .map(|(m, g)| (u[m], row[g.bus - 1]))
            .collect();
        let offset: f64 = -(0..n).map(|k| row[k] * load[k]).sum::<f64>();
        b.add_row(
            RowName::new(RowKind::LineFlow, j + 1, 0),
            &terms,
            -br.flow_limit - offset,
            br.flow_limit - offset,
        );
    }
    b.build()
}

/// Solve the dispatch problem and return the setpoints in p.u.
pub fn solve_lopf(
    net: &PowerNetwork,
    ptdf: &DMatrix<f64>,
    hvac_kw: &DVector<f64>,
    w_g: &DVector<f64>,
    settings: &QpSettings,
) -> Result<Vec<f64>> {
    let qp = assemble_lopf(net, ptdf, hvac_kw, w_g)?;
    Ok(solve_checked(&qp, settings, None, "dispatch")?.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::network::{fixtures, parse_case, ptdf};
    use approx::assert_relative_eq;

    const TWO_GEN: &str = "\
[case]
name twogen
base_mva 100
units mw
slack 1

[bus]
1 0
2 0
3 120

[gen]
1 1 0 100 -10 10
2 2 0 100 -10 10

[branch]
1 3 0.1 0
2 3 0.1 0

[gencost]
1 0.1 2 0
2 0.1 2 0

[dynamics]
1 0.1 0.1 0
2 0.1 0.1 0
";

    fn settings() -> QpSettings {
        QpSettings::default()
    }

    #[test]
    fn single_generator_meets_demand() {
        let net = parse_case(fixtures::TWO_BUS).unwrap();
        let p = ptdf(&net).unwrap();
        let w = net.base_loads();
        let u = solve_lopf(&net, &p, &DVector::zeros(0), &w, &settings()).unwrap();
        assert_relative_eq!(u[0], w.sum(), epsilon = 1e-8);
    }

    #[test]
    fn identical_generators_split_evenly() {
        let net = parse_case(TWO_GEN).unwrap();
        let p = ptdf(&net).unwrap();
        let u = solve_lopf(&net, &p, &DVector::zeros(0), &net.base_loads(), &settings()).unwrap();
        assert_relative_eq!(u[0], 0.6, epsilon = 1e-8);
        assert_relative_eq!(u[1], 0.6, epsilon = 1e-8);
    }

    #[test]
    fn demand_above_capacity_is_infeasible() {
        let net = parse_case(TWO_GEN).unwrap();
        let p = ptdf(&net).unwrap();
        let w = net.base_loads() * 2.0;
        let err = solve_lopf(&net, &p, &DVector::zeros(0), &w, &settings()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
    }

    #[test]
    fn line_limit_shifts_dispatch() {
        let net = parse_case(fixtures::TWO_BUS).unwrap();
        let p = ptdf(&net).unwrap();
        // The single line is rated 80 MW; a load of 100 MW at the remote bus
        // cannot be served.
        let mut w = DVector::zeros(2);
        let remote = (0..2).find(|&k| !net.buses[k].is_generator_bus).unwrap();
        w[remote] = 1.0;
        let qp = assemble_lopf(&net, &p, &DVector::zeros(0), &w).unwrap();
        let sol = crate::qp::solve(&qp, &settings());
        assert_eq!(sol.status, crate::qp::QpStatus::PrimalInfeasible);
    }
}
