//! Gear (backward differentiation) discretization of descriptor systems.
//!
//! For `E ẋ = A x + f` an order-`s` step reads
//!
//! ```text
//! (E − h β0 A) x_k = Σ_{i=1..s} α_i E x_{k−i} + h β0 f_k
//! ```
//!
//! The pencil `E − h β0 A` is factorized once per `(h, s)` and reused.
//! Inputs for the step from `t_{k−1}` to `t_k` are the values held over that
//! interval.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3, LU};
use nalgebra::Dyn;

use crate::building::BuildingCluster;
use crate::error::{dim_check, Error, Result};
use crate::grid::GridDae;

pub const MAX_ORDER: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GearScheme {
    pub order: usize,
    pub beta0: f64,
    /// `α_1..α_s`; `alphas[i]` multiplies `x_{k−1−i}`.
    pub alphas: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// BDF coefficients of order `s` from the closed form
/// `β0 = 1 / Σ 1/i` and `α_i = (−1)^{i+1} β0 Σ_{j=i..s} C(j, i) / j`.
pub fn gear_coefficients(s: usize) -> Result<GearScheme> {
    if !(1..=MAX_ORDER).contains(&s) {
        return Err(Error::InvalidParameter(format!(
            "Gear order must be in 1..={MAX_ORDER}, got {s}"
        )));
    }
    let beta0 = 1.0 / (1..=s).map(|i| 1.0 / i as f64).sum::<f64>();
    let alphas = (1..=s)
        .map(|i| {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            let sum: f64 = (i..=s).map(|j| binomial(j, i) / j as f64).sum();
            sign * beta0 * sum
        })
        .collect();
    Ok(GearScheme { order: s, beta0, alphas })
}

/// Gear stepper for a general dense descriptor system `E ẋ = A x + f`.
#[derive(Debug, Clone)]
pub struct DescriptorStepper {
    pub h: f64,
    pub scheme: GearScheme,
    pub e: DMatrix<f64>,
    pub a: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
}

impl DescriptorStepper {
    pub fn new(e: DMatrix<f64>, a: DMatrix<f64>, h: f64, scheme: GearScheme) -> Result<Self> {
        if e.shape() != a.shape() || !e.is_square() {
            return Err(Error::Dimension(format!(
                "E is {:?} but A is {:?}",
                e.shape(),
                a.shape()
            )));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("step h = {h} must be positive")));
        }
        let pencil = &e - &a * (h * scheme.beta0);
        let lu = pencil.lu();
        let n = e.nrows();
        let diag_max = (0..n).map(|i| lu.u()[(i, i)].abs()).fold(0.0, f64::max);
        let diag_min = (0..n).map(|i| lu.u()[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if n > 0 && (diag_min == 0.0 || diag_min < 1e-14 * diag_max) {
            return Err(Error::Singular(format!(
                "pencil E - h*beta0*A is singular for h = {h}"
            )));
        }
        Ok(Self { h, scheme, e, a, lu })
    }

    pub fn dim(&self) -> usize {
        self.e.nrows()
    }

    /// Advance one step. `history[0]` is `x_{k−1}`, `history[1]` is
    /// `x_{k−2}`, and so on; `forcing` is the input term `f` held over the
    /// step.
    pub fn step(&self, history: &[DVector<f64>], forcing: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.scheme.order;
        if history.len() < s {
            return Err(Error::Dimension(format!(
                "order-{s} step needs {s} history points, got {}",
                history.len()
            )));
        }
        dim_check("forcing", self.dim(), forcing.len())?;
        let mut acc = DVector::zeros(self.dim());
        for (alpha, x) in self.scheme.alphas.iter().zip(history) {
            dim_check("history state", self.dim(), x.len())?;
            acc.axpy(*alpha, x, 1.0);
        }
        let mut rhs = &self.e * acc;
        rhs.axpy(self.h * self.scheme.beta0, forcing, 1.0);
        Ok(self.lu.solve(&rhs).expect("pencil checked nonsingular"))
    }

    /// Simulate `steps` steps from a constant history equal to `x0`, with a
    /// forcing supplied per step index (1-based).
    pub fn simulate<F>(&self, x0: &DVector<f64>, steps: usize, mut forcing: F) -> Result<Vec<DVector<f64>>>
    where
        F: FnMut(usize) -> DVector<f64>,
    {
        let mut hist = vec![x0.clone(); self.scheme.order];
        let mut out = vec![x0.clone()];
        for k in 1..=steps {
            let x = self.step(&hist, &forcing(k))?;
            hist.rotate_right(1);
            hist[0] = x.clone();
            out.push(x);
        }
        Ok(out)
    }
}

/// Gear-discretized linear grid model.
#[derive(Debug, Clone)]
pub struct DiscreteGridModel {
    pub dae: GridDae,
    pub stepper: DescriptorStepper,
}

pub fn discretize_grid(dae: &GridDae, h_g: f64, scheme: &GearScheme) -> Result<DiscreteGridModel> {
    let stepper = DescriptorStepper::new(dae.e_dense(), dae.a_linear.clone(), h_g, scheme.clone())
        .map_err(|e| match e {
            Error::Singular(_) => Error::Singular(format!(
                "grid pencil E_g - h_g*beta0*A_g is singular for h_g = {h_g}"
            )),
            other => other,
        })?;
    Ok(DiscreteGridModel {
        dae: dae.clone(),
        stepper,
    })
}

impl DiscreteGridModel {
    pub fn h(&self) -> f64 {
        self.stepper.h
    }

    pub fn scheme(&self) -> &GearScheme {
        &self.stepper.scheme
    }

    /// Input term `A_ub u_b + B_ug u_g + B_wg w_g`.
    pub fn forcing(&self, u_g: &DVector<f64>, u_b_kw: &DVector<f64>, w_g: &DVector<f64>) -> Result<DVector<f64>> {
        let z = DVector::zeros(2 * self.dae.n);
        self.dae.rhs(&z, u_g, u_b_kw, w_g, false)
    }

    pub fn step(
        &self,
        history: &[DVector<f64>],
        u_g: &DVector<f64>,
        u_b_kw: &DVector<f64>,
        w_g: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let f = self.forcing(u_g, u_b_kw, w_g)?;
        self.stepper.step(history, &f)
    }
}

/// Gear-discretized building cluster, solved with independent 2x2 blocks.
#[derive(Debug, Clone)]
pub struct DiscreteBuildingModel {
    pub h: f64,
    pub scheme: GearScheme,
    pub cluster: BuildingCluster,
    /// `(I − h β0 A_l)^{-1}` per building.
    pub abar: Vec<Matrix2<f64>>,
}

pub fn discretize_buildings(cluster: &BuildingCluster, h_b: f64, scheme: &GearScheme) -> Result<DiscreteBuildingModel> {
    if !(h_b > 0.0) {
        return Err(Error::InvalidParameter(format!("step h_b = {h_b} must be positive")));
    }
    let abar = cluster
        .blocks
        .iter()
        .enumerate()
        .map(|(l, b)| {
            (Matrix2::identity() - b.a * (h_b * scheme.beta0))
                .try_inverse()
                .ok_or_else(|| {
                    Error::Singular(format!(
                        "building {} pencil is singular for h_b = {h_b}",
                        l + 1
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscreteBuildingModel {
        h: h_b,
        scheme: scheme.clone(),
        cluster: cluster.clone(),
        abar,
    })
}

impl DiscreteBuildingModel {
    pub fn n_b(&self) -> usize {
        self.cluster.n_b()
    }

    /// One step for building `l`.
    pub fn step_one(&self, l: usize, history: &[Vector2<f64>], u_kw: f64, w: &Vector3<f64>) -> Vector2<f64> {
        let b = &self.cluster.blocks[l];
        let mut acc = Vector2::zeros();
        for (alpha, x) in self.scheme.alphas.iter().zip(history) {
            acc += *alpha * x;
        }
        let f = b.bu * u_kw + b.bw * w;
        self.abar[l] * (acc + f * (self.h * self.scheme.beta0))
    }

    /// One step for the whole cluster. States are stacked as in
    /// [`BuildingCluster`].
    pub fn step(&self, history: &[DVector<f64>], u_kw: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.scheme.order;
        let n = self.n_b();
        if history.len() < s {
            return Err(Error::Dimension(format!(
                "order-{s} step needs {s} history points, got {}",
                history.len()
            )));
        }
        for x in &history[..s] {
            dim_check("building history state", 2 * n, x.len())?;
        }
        dim_check("HVAC input", n, u_kw.len())?;
        dim_check("building disturbance", 3 * n, w.len())?;
        let mut out = DVector::zeros(2 * n);
        let mut hist = vec![Vector2::zeros(); s];
        for l in 0..n {
            for (i, x) in history[..s].iter().enumerate() {
                hist[i] = Vector2::new(x[2 * l], x[2 * l + 1]);
            }
            let wl = Vector3::new(w[3 * l], w[3 * l + 1], w[3 * l + 2]);
            let x = self.step_one(l, &hist, u_kw[l], &wl);
            out[2 * l] = x[0];
            out[2 * l + 1] = x[1];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::building::{sample_cluster, BuildingParams};
    use crate::grid::assemble_dae;
    use crate::network::{bundled_case, parse_case};
    use approx::assert_relative_eq;

    fn scalar(e: f64, a: f64, h: f64, s: usize) -> DescriptorStepper {
        DescriptorStepper::new(
            DMatrix::from_element(1, 1, e),
            DMatrix::from_element(1, 1, a),
            h,
            gear_coefficients(s).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn backward_euler_coefficients() {
        let g = gear_coefficients(1).unwrap();
        assert_eq!(g.beta0, 1.0);
        assert_eq!(g.alphas, vec![1.0]);
    }

    #[test]
    fn bdf2_coefficients() {
        let g = gear_coefficients(2).unwrap();
        assert_relative_eq!(g.beta0, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(g.alphas[0], 4.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(g.alphas[1], -1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn bdf3_coefficients() {
        let g = gear_coefficients(3).unwrap();
        assert_relative_eq!(g.beta0, 6.0 / 11.0, epsilon = 1e-15);
        assert_relative_eq!(g.alphas[0], 18.0 / 11.0, epsilon = 1e-15);
        assert_relative_eq!(g.alphas[1], -9.0 / 11.0, epsilon = 1e-15);
        assert_relative_eq!(g.alphas[2], 2.0 / 11.0, epsilon = 1e-15);
    }

    #[test]
    fn alphas_sum_to_one() {
        for s in 1..=MAX_ORDER {
            let g = gear_coefficients(s).unwrap();
            assert_relative_eq!(g.alphas.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn order_out_of_range() {
        assert!(gear_coefficients(0).is_err());
        assert!(gear_coefficients(7).is_err());
    }

    #[test]
    fn scalar_backward_euler_step() {
        let st = scalar(1.0, -1.0, 0.1, 1);
        let x = st.step(&[DVector::from_element(1, 1.0)], &DVector::zeros(1)).unwrap();
        assert_relative_eq!(x[0], 1.0 / 1.1, epsilon = 1e-15);
        assert_relative_eq!(x[0], 0.90909, epsilon = 1e-5);
    }

    #[test]
    fn identity_descriptor_is_backward_euler() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.2, -2.0]);
        let h = 0.05;
        let st = DescriptorStepper::new(DMatrix::identity(2, 2), a.clone(), h, gear_coefficients(1).unwrap()).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -2.0]);
        let bu = DVector::from_vec(vec![0.5, 0.7]);
        let x1 = st.step(&[x0.clone()], &bu).unwrap();
        let expected = (DMatrix::identity(2, 2) - &a * h).try_inverse().unwrap() * (x0 + bu * h);
        assert_relative_eq!(x1, expected, epsilon = 1e-14);
    }

    #[test]
    fn algebraic_row_solved_exactly() {
        for h in [0.01, 1.0, 100.0] {
            let st = scalar(0.0, -1.0, h, 1);
            let x = st.step(&[DVector::from_element(1, 7.0)], &DVector::from_element(1, 2.5)).unwrap();
            assert_relative_eq!(x[0], 2.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn singular_pencil_names_step() {
        let err = DescriptorStepper::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            0.5,
            gear_coefficients(1).unwrap(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("0.5"), "{err}");
    }

    fn error_at_one(s: usize, h: f64) -> f64 {
        let st = scalar(1.0, -1.0, h, s);
        let steps = (1.0 / h).round() as usize;
        // Exact starting values at t = 0, -h, ..., -(s-1)h.
        let mut hist: Vec<DVector<f64>> = (0..s).map(|i| DVector::from_element(1, (i as f64 * h).exp())).collect();
        let zero = DVector::zeros(1);
        for _ in 0..steps {
            let x = st.step(&hist, &zero).unwrap();
            hist.rotate_right(1);
            hist[0] = x;
        }
        (hist[0][0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn global_order_of_accuracy() {
        for s in 1..=3 {
            let ratio = error_at_one(s, 0.02) / error_at_one(s, 0.01);
            let target = 2f64.powi(s as i32);
            assert!((ratio / target - 1.0).abs() < 0.15, "s={s} ratio={ratio}");
        }
    }

    #[test]
    fn bdf2_exact_on_linear_solution() {
        let st = scalar(1.0, 0.0, 0.1, 2);
        let mut hist = vec![DVector::from_element(1, 0.0), DVector::from_element(1, -0.1)];
        let one = DVector::from_element(1, 1.0);
        for k in 1..=50 {
            let x = st.step(&hist, &one).unwrap();
            assert!((x[0] - 0.1 * k as f64).abs() < 1e-12);
            hist.rotate_right(1);
            hist[0] = x;
        }
    }

    fn descriptor_test_system() -> (DMatrix<f64>, DMatrix<f64>) {
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
        (e, a)
    }

    #[test]
    fn wrong_history_converges() {
        let (e, a) = descriptor_test_system();
        let st = DescriptorStepper::new(e, a, 0.5, gear_coefficients(2).unwrap()).unwrap();
        let forcing = DVector::from_vec(vec![0.2, 0.0, 0.1, 0.4]);
        let x0 = DVector::from_vec(vec![1.0, -1.0, 0.5, 1.4]);
        let mut good = vec![x0.clone(), x0.clone()];
        let mut bad = vec![x0.clone(), DVector::from_vec(vec![5.0, 3.0, -4.0, 2.0])];
        let mut hit = None;
        for k in 1..=50 {
            let g = st.step(&good, &forcing).unwrap();
            let b = st.step(&bad, &forcing).unwrap();
            good.rotate_right(1);
            good[0] = g;
            bad.rotate_right(1);
            bad[0] = b;
            if hit.is_none() && (&good[0] - &bad[0]).amax() < 1e-8 {
                hit = Some(k);
            }
        }
        assert!(hit.is_some());
        assert!((&good[0] - &bad[0]).amax() < 1e-8);
    }

    #[test]
    fn algebraic_constraint_holds_every_step() {
        let (e, a) = descriptor_test_system();
        for s in 1..=3 {
            let st = DescriptorStepper::new(e.clone(), a.clone(), 0.2, gear_coefficients(s).unwrap()).unwrap();
            let x0 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
            let traj = st
                .simulate(&x0, 30, |k| DVector::from_vec(vec![0.0, 0.1, 0.0, (k as f64 * 0.3).sin()]))
                .unwrap();
            for (k, x) in traj.iter().enumerate().skip(1) {
                let u = (k as f64 * 0.3).sin();
                assert!((x[0] - x[3] + u).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn zero_building_dynamics_accumulates() {
        let cluster = BuildingCluster::new(vec![BuildingParams::reference()]).unwrap();
        let mut blocks = cluster.blocks.clone();
        blocks[0].a = Matrix2::zeros();
        let zero = BuildingCluster::from_blocks(cluster.params.clone(), blocks).unwrap();
        let d = discretize_buildings(&zero, 300.0, &gear_coefficients(1).unwrap()).unwrap();
        let x0 = DVector::from_vec(vec![25.0, 22.0]);
        let u = DVector::from_element(1, 100.0);
        let w = DVector::from_vec(vec![30.0, 1e5, 2e5]);
        let x1 = d.step(&[x0.clone()], &u, &w).unwrap();
        let b = &zero.blocks[0];
        let f = b.bu * 100.0 + b.bw * Vector3::new(30.0, 1e5, 2e5);
        assert_relative_eq!(x1[0], 25.0 + 300.0 * f[0], epsilon = 1e-12);
        assert_relative_eq!(x1[1], 22.0 + 300.0 * f[1], epsilon = 1e-12);
    }

    #[test]
    fn building_converges_to_steady_state() {
        let cluster = sample_cluster(&BuildingParams::reference(), 3, 0.1, 1).unwrap();
        let d = discretize_buildings(&cluster, 3600.0, &gear_coefficients(1).unwrap()).unwrap();
        let u = DVector::from_vec(vec![200.0, 300.0, 0.0]);
        let w = DVector::from_vec(vec![30.0, 1e5, 2e5, 32.0, 0.0, 1e5, 28.0, 5e4, 0.0]);
        let mut x = DVector::from_element(6, 22.0);
        for _ in 0..20_000 {
            x = d.step(&[x], &u, &w).unwrap();
        }
        for l in 0..3 {
            let wl = Vector3::new(w[3 * l], w[3 * l + 1], w[3 * l + 2]);
            let ss = cluster.blocks[l].steady_state(u[l], &wl).unwrap();
            assert_relative_eq!(x[2 * l], ss[0], max_relative = 1e-6);
            assert_relative_eq!(x[2 * l + 1], ss[1], max_relative = 1e-6);
        }
    }

    #[test]
    fn blockwise_matches_dense_stepper() {
        let cluster = sample_cluster(&BuildingParams::reference(), 2, 0.1, 4).unwrap();
        let scheme = gear_coefficients(2).unwrap();
        let d = discretize_buildings(&cluster, 300.0, &scheme).unwrap();
        let dense = DescriptorStepper::new(DMatrix::identity(4, 4), cluster.a_dense(), 300.0, scheme).unwrap();
        let hist = vec![
            DVector::from_vec(vec![25.0, 22.0, 24.0, 23.0]),
            DVector::from_vec(vec![25.5, 22.5, 24.2, 23.1]),
        ];
        let u = DVector::from_vec(vec![100.0, 50.0]);
        let w = DVector::from_vec(vec![30.0, 1e5, 2e5, 32.0, 0.0, 1e5]);
        let a = d.step(&hist, &u, &w).unwrap();
        let f = cluster.bu_dense() * &u + cluster.bw_dense() * &w;
        let b = dense.step(&hist, &f).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-13);
    }

    #[test]
    fn grid_pencil_nonsingular_for_bundled_cases() {
        let scheme = gear_coefficients(1).unwrap();
        for name in crate::network::BUNDLED_CASES {
            let net = parse_case(bundled_case(name).unwrap()).unwrap();
            let dae = assemble_dae(&net);
            assert!(discretize_grid(&dae, 10.0, &scheme).is_ok(), "{name}");
        }
    }

    #[test]
    fn grid_equilibrium_is_fixed_point() {
        let net = parse_case(bundled_case("case9").unwrap()).unwrap();
        let dae = assemble_dae(&net);
        let disc = discretize_grid(&dae, 10.0, &gear_coefficients(1).unwrap()).unwrap();
        let w = net.base_loads();
        let total = w.sum();
        let u_g = DVector::from_vec(vec![total / 3.0; 3]);
        let p = dae.injection(&u_g, &DVector::zeros(0), &w);
        let x0 = dae.steady_state(&p, 0, false).unwrap();
        let x1 = disc.step(&[x0.clone()], &u_g, &DVector::zeros(0), &w).unwrap();
        assert!((x1 - x0).amax() < 1e-12);
    }
}
