//! Swing-equation descriptor model of the power network.
//!
//! State `x_g = [δ_1..δ_n, ω_1..ω_n]`: bus angles in rad and frequency
//! deviations from the synchronous frequency in rad/s. Rows of the frequency
//! block read
//!
//! ```text
//! M_k ω̇_k = Γ_k u_g − P_BL,k − Π_k (u_b + P_misc) − (D_k + D'_k) ω_k − Σ_j b_kj sin(δ_k − δ_j)
//! ```
//!
//! with the sine replaced by its linearization in the linear model. Buses
//! without a machine have `M_k = 0` and become algebraic power-balance rows.

use nalgebra::{DMatrix, DVector};

use crate::building::W_PER_KW;
use crate::error::{dim_check, Error, Result};
use crate::network::PowerNetwork;

#[derive(Debug, Clone, PartialEq)]
pub struct GridDae {
    pub n: usize,
    pub n_g: usize,
    pub n_b: usize,
    /// Diagonal of `E_g`.
    pub e_diag: DVector<f64>,
    /// Linearized state matrix `A_g`.
    pub a_linear: DMatrix<f64>,
    /// HVAC input matrix, per kW.
    pub a_ub: DMatrix<f64>,
    /// Generator input matrix `[0; Γ]`.
    pub b_ug: DMatrix<f64>,
    /// Disturbance matrix for `w_g = [P_BL (p.u.); P_misc (kW)]`.
    pub b_wg: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    /// `(from, to, b)` with 0-based bus indices.
    pub edges: Vec<(usize, usize, f64)>,
    /// Conversion from building kW to p.u.
    pub kw_to_pu: f64,
    /// Bus hosting each building, 0-based.
    pub building_bus: Vec<usize>,
    /// Bus of each generator, 0-based.
    pub generator_bus: Vec<usize>,
}

/// Assemble the descriptor model of `net`, including its attached buildings.
pub fn assemble_dae(net: &PowerNetwork) -> GridDae {
    let n = net.n_buses();
    let n_g = net.n_generators();
    let n_b = net.n_buildings();
    let kw_to_pu = 1.0 / (W_PER_KW * net.base_mva);
    let lap = net.laplacian();

    let mut e_diag = DVector::zeros(2 * n);
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for (k, bus) in net.buses.iter().enumerate() {
        e_diag[k] = 1.0;
        e_diag[n + k] = bus.inertia;
        a[(k, n + k)] = 1.0;
        a[(n + k, n + k)] = -(bus.damping + bus.load_damping);
        for j in 0..n {
            a[(n + k, j)] = -lap[(k, j)];
        }
    }

    let mut a_ub = DMatrix::zeros(2 * n, n_b);
    let mut b_wg = DMatrix::zeros(2 * n, n + n_b);
    for k in 0..n {
        b_wg[(n + k, k)] = -1.0;
    }
    for (l, &bus) in net.building_bus.iter().enumerate() {
        a_ub[(n + bus - 1, l)] = -kw_to_pu;
        b_wg[(n + bus - 1, n + l)] = -kw_to_pu;
    }
    let mut b_ug = DMatrix::zeros(2 * n, n_g);
    for (m, g) in net.generators.iter().enumerate() {
        b_ug[(n + g.bus - 1, m)] = 1.0;
    }

    GridDae {
        n,
        n_g,
        n_b,
        e_diag,
        a_linear: a,
        a_ub,
        b_ug,
        b_wg,
        laplacian: lap,
        edges: net
            .branches
            .iter()
            .map(|b| (b.from - 1, b.to - 1, b.susceptance))
            .collect(),
        kw_to_pu,
        building_bus: net.building_bus.iter().map(|b| b - 1).collect(),
        generator_bus: net.generators.iter().map(|g| g.bus - 1).collect(),
    }
}

impl GridDae {
    pub fn n_states(&self) -> usize {
        2 * self.n
    }

    pub fn e_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.e_diag)
    }

    /// Number of algebraic rows (zero diagonal entries of `E_g`).
    pub fn n_algebraic(&self) -> usize {
        self.e_diag.iter().filter(|v| **v == 0.0).count()
    }

    /// Nonlinear flow term: zero on angles, `-Σ_j b_kj sin(δ_k − δ_j)` on the
    /// frequency rows.
    pub fn phi(&self, delta: &[f64]) -> DVector<f64> {
        let n = self.n;
        let mut out = DVector::zeros(2 * n);
        for &(f, t, b) in &self.edges {
            let s = b * (delta[f] - delta[t]).sin();
            out[n + f] -= s;
            out[n + t] += s;
        }
        out
    }

    /// Net nodal injection in p.u. from the inputs, excluding line flows.
    pub fn injection(&self, u_g: &DVector<f64>, u_b_kw: &DVector<f64>, w_g: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut p = DVector::zeros(n);
        for (m, &bus) in self.generator_bus.iter().enumerate() {
            p[bus] += u_g[m];
        }
        for k in 0..n {
            p[k] -= w_g[k];
        }
        for (l, &bus) in self.building_bus.iter().enumerate() {
            p[bus] -= self.kw_to_pu * (u_b_kw[l] + w_g[n + l]);
        }
        p
    }

    /// Right-hand side `A_g x + Φ(δ) + A_ub u_b + B_ug u_g + B_wg w_g`, with
    /// the sine flows used when `nonlinear` is set.
    pub fn rhs(
        &self,
        x: &DVector<f64>,
        u_g: &DVector<f64>,
        u_b_kw: &DVector<f64>,
        w_g: &DVector<f64>,
        nonlinear: bool,
    ) -> Result<DVector<f64>> {
        let n = self.n;
        dim_check("grid state", 2 * n, x.len())?;
        dim_check("generator input", self.n_g, u_g.len())?;
        dim_check("HVAC input", self.n_b, u_b_kw.len())?;
        dim_check("grid disturbance", n + self.n_b, w_g.len())?;
        let mut f = &self.a_linear * x;
        if nonlinear {
            let delta = x.rows(0, n);
            let ld = &self.laplacian * delta;
            for k in 0..n {
                f[n + k] += ld[k];
            }
            f += self.phi(delta.as_slice());
        }
        let p = self.injection(u_g, u_b_kw, w_g);
        for k in 0..n {
            f[n + k] += p[k];
        }
        Ok(f)
    }

    /// Residual `E_g ẋ − rhs`; zero iff `(x, ẋ)` satisfies the DAE.
    #[allow(clippy::too_many_arguments)]
    pub fn residual(
        &self,
        x: &DVector<f64>,
        xdot: &DVector<f64>,
        u_g: &DVector<f64>,
        u_b_kw: &DVector<f64>,
        w_g: &DVector<f64>,
        nonlinear: bool,
    ) -> Result<DVector<f64>> {
        dim_check("grid state derivative", 2 * self.n, xdot.len())?;
        let f = self.rhs(x, u_g, u_b_kw, w_g, nonlinear)?;
        Ok(self.e_diag.component_mul(xdot) - f)
    }

    /// Jacobian of the right-hand side with respect to `x`.
    pub fn rhs_jacobian(&self, x: &DVector<f64>, nonlinear: bool) -> DMatrix<f64> {
        let mut j = self.a_linear.clone();
        if nonlinear {
            let n = self.n;
            for k in 0..n {
                for i in 0..n {
                    j[(n + k, i)] = 0.0;
                }
            }
            for &(f, t, b) in &self.edges {
                let c = b * (x[f] - x[t]).cos();
                j[(n + f, f)] -= c;
                j[(n + f, t)] += c;
                j[(n + t, t)] -= c;
                j[(n + t, f)] += c;
            }
        }
        j
    }

    /// Steady state for a balanced injection: `ω = 0` and angles solving the
    /// flow equations with angle zero at `slack` (0-based).
    pub fn steady_state(&self, injection: &DVector<f64>, slack: usize, nonlinear: bool) -> Result<DVector<f64>> {
        let n = self.n;
        dim_check("injection", n, injection.len())?;
        let total: f64 = injection.sum();
        let scale = injection.amax().max(1.0);
        if total.abs() > 1e-9 * scale {
            return Err(Error::InvalidParameter(format!(
                "steady state needs a balanced injection, mismatch {total:.3e} p.u."
            )));
        }
        let keep: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
        let reduced = DMatrix::from_fn(n - 1, n - 1, |i, j| self.laplacian[(keep[i], keep[j])]);
        let rhs = DVector::from_iterator(n - 1, keep.iter().map(|&k| injection[k]));
        let lu = reduced.clone().lu();
        let mut theta_r = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("reduced susceptance matrix".into()))?;
        if nonlinear {
            let expand = |tr: &DVector<f64>| {
                let mut th = DVector::zeros(n);
                for (i, &k) in keep.iter().enumerate() {
                    th[k] = tr[i];
                }
                th
            };
            let mut converged = false;
            for _ in 0..50 {
                let th = expand(&theta_r);
                let mut flow = DVector::<f64>::zeros(n);
                let mut jac = DMatrix::<f64>::zeros(n, n);
                for &(f, t, b) in &self.edges {
                    let s = b * (th[f] - th[t]).sin();
                    let c = b * (th[f] - th[t]).cos();
                    flow[f] += s;
                    flow[t] -= s;
                    jac[(f, f)] += c;
                    jac[(f, t)] -= c;
                    jac[(t, t)] += c;
                    jac[(t, f)] -= c;
                }
                let res = DVector::from_iterator(n - 1, keep.iter().map(|&k| flow[k] - injection[k]));
                if res.amax() < 1e-13 * scale {
                    converged = true;
                    break;
                }
                let jr = DMatrix::from_fn(n - 1, n - 1, |i, j| jac[(keep[i], keep[j])]);
                let step = jr
                    .lu()
                    .solve(&res)
                    .ok_or_else(|| Error::Singular("nonlinear power-flow Jacobian".into()))?;
                theta_r -= step;
            }
            if !converged {
                return Err(Error::Divergence {
                    time: 0.0,
                    msg: "nonlinear steady-state power flow did not converge".into(),
                });
            }
        }
        let mut x = DVector::zeros(2 * n);
        for (i, &k) in keep.iter().enumerate() {
            x[k] = theta_r[i];
        }
        Ok(x)
    }
}
