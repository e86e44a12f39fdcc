//! 3R-2C building thermal models and block-diagonal cluster dynamics.
//!
//! Each building has two states, wall temperature and zone temperature in
//! degrees Celsius. The controllable input is the HVAC electric power in kW,
//! which removes `mu_hvac` times that much heat from the zone. Disturbances are
//! ambient temperature (°C), solar gain on the wall (W) and internal gain in
//! the zone (W).

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};

/// Watts per kW.
pub const W_PER_KW: f64 = 1000.0;

/// Number of disturbance channels per building.
pub const N_DISTURBANCES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingParams {
    /// Wall-to-zone resistance, °C/W.
    pub r1: f64,
    /// Ambient-to-wall resistance, °C/W.
    pub r2: f64,
    /// Window resistance between ambient and zone, °C/W.
    pub r_win: f64,
    /// Lumped wall capacitance, J/°C.
    pub c_wall: f64,
    /// Zone air capacitance, J/°C.
    pub c_zone: f64,
    /// Coefficient of performance of the chiller.
    pub mu_hvac: f64,
}

impl BuildingParams {
    /// The reference building around which clusters are sampled.
    pub fn reference() -> Self {
        Self {
            r1: 1.16e-4,
            r2: 1.16e-4,
            r_win: 6.55e-3,
            c_wall: 1.133e9,
            c_zone: 7.033e9,
            mu_hvac: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r1", self.r1),
            ("r2", self.r2),
            ("r_win", self.r_win),
            ("c_wall", self.c_wall),
            ("c_zone", self.c_zone),
            ("mu_hvac", self.mu_hvac),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "building parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 6] {
        [self.r1, self.r2, self.r_win, self.c_wall, self.c_zone, self.mu_hvac]
    }

    fn from_array(v: [f64; 6]) -> Self {
        Self {
            r1: v[0],
            r2: v[1],
            r_win: v[2],
            c_wall: v[3],
            c_zone: v[4],
            mu_hvac: v[5],
        }
    }
}

/// State-space blocks of one building: `A` (2x2), `B_u` (2x1, per kW) and
/// `B_w` (2x3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildingBlock {
    pub a: Matrix2<f64>,
    pub bu: Vector2<f64>,
    pub bw: Matrix2x3<f64>,
}

impl BuildingBlock {
    pub fn derivative(&self, x: &Vector2<f64>, u_kw: f64, w: &Vector3<f64>) -> Vector2<f64> {
        self.a * x + self.bu * u_kw + self.bw * w
    }

    /// Steady state `-A^-1 (B_u u + B_w w)` for constant inputs.
    pub fn steady_state(&self, u_kw: f64, w: &Vector3<f64>) -> Option<Vector2<f64>> {
        let rhs = -(self.bu * u_kw + self.bw * w);
        self.a.lu().solve(&rhs)
    }
}

/// Continuous-time matrices of one building. The HVAC column is per kW.
pub fn building_matrices(p: &BuildingParams) -> BuildingBlock {
    let a = Matrix2::new(
        -(1.0 / p.c_wall) * (1.0 / p.r1 + 1.0 / p.r2),
        1.0 / (p.c_wall * p.r1),
        1.0 / (p.c_zone * p.r1),
        -(1.0 / p.c_zone) * (1.0 / p.r1 + 1.0 / p.r_win),
    );
    let bu = Vector2::new(0.0, -W_PER_KW * p.mu_hvac / p.c_zone);
    let bw = Matrix2x3::new(
        1.0 / (p.c_wall * p.r2),
        1.0 / p.c_wall,
        0.0,
        1.0 / (p.c_zone * p.r_win),
        0.0,
        1.0 / p.c_zone,
    );
    BuildingBlock { a, bu, bw }
}

/// A cluster of independent buildings. State layout is
/// `[T_wall_1, T_zone_1, T_wall_2, T_zone_2, ...]`; disturbance layout is
/// `[T_amb_1, Q_sol_1, Q_int_1, T_amb_2, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingCluster {
    pub params: Vec<BuildingParams>,
    pub blocks: Vec<BuildingBlock>,
}

impl BuildingCluster {
    pub fn new(params: Vec<BuildingParams>) -> Result<Self> {
        for p in &params {
            p.validate()?;
        }
        let blocks = params.iter().map(building_matrices).collect();
        Ok(Self { params, blocks })
    }

    /// Build a cluster from explicit blocks, e.g. perturbed matrices used to
    /// model parameter misidentification. `params` is kept for reporting.
    pub fn from_blocks(params: Vec<BuildingParams>, blocks: Vec<BuildingBlock>) -> Result<Self> {
        dim_check("building blocks", params.len(), blocks.len())?;
        Ok(Self { params, blocks })
    }

    pub fn n_b(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_states(&self) -> usize {
        2 * self.n_b()
    }

    pub fn a_dense(&self) -> DMatrix<f64> {
        let n = self.n_b();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for (l, b) in self.blocks.iter().enumerate() {
            a.fixed_view_mut::<2, 2>(2 * l, 2 * l).copy_from(&b.a);
        }
        a
    }

    pub fn bu_dense(&self) -> DMatrix<f64> {
        let n = self.n_b();
        let mut m = DMatrix::zeros(2 * n, n);
        for (l, b) in self.blocks.iter().enumerate() {
            m.fixed_view_mut::<2, 1>(2 * l, l).copy_from(&b.bu);
        }
        m
    }

    pub fn bw_dense(&self) -> DMatrix<f64> {
        let n = self.n_b();
        let mut m = DMatrix::zeros(2 * n, 3 * n);
        for (l, b) in self.blocks.iter().enumerate() {
            m.fixed_view_mut::<2, 3>(2 * l, 3 * l).copy_from(&b.bw);
        }
        m
    }

    /// `A_b x + B_ub u + B_wb w`, evaluated block by block.
    pub fn derivative(&self, x: &DVector<f64>, u_kw: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n_b();
        dim_check("building state", 2 * n, x.len())?;
        dim_check("HVAC input", n, u_kw.len())?;
        dim_check("building disturbance", 3 * n, w.len())?;
        let mut dx = DVector::zeros(2 * n);
        for (l, b) in self.blocks.iter().enumerate() {
            let xl = Vector2::new(x[2 * l], x[2 * l + 1]);
            let wl = Vector3::new(w[3 * l], w[3 * l + 1], w[3 * l + 2]);
            let d = b.derivative(&xl, u_kw[l], &wl);
            dx[2 * l] = d[0];
            dx[2 * l + 1] = d[1];
        }
        Ok(dx)
    }
}

/// Draw `n_b` buildings with every parameter independently Gaussian around
/// the reference, relative standard deviation `spread`. Draws below 1% of the
/// reference value are redrawn.
pub fn sample_cluster(reference: &BuildingParams, n_b: usize, spread: f64, seed: u64) -> Result<BuildingCluster> {
    reference.validate()?;
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "parameter spread must be nonnegative, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = reference.as_array();
    let mut params = Vec::with_capacity(n_b);
    for _ in 0..n_b {
        let mut v = base;
        if spread > 0.0 {
            for (k, mean) in base.iter().enumerate() {
                let dist = Normal::new(*mean, spread * mean).expect("finite positive std");
                v[k] = loop {
                    let draw = dist.sample(&mut rng);
                    if draw >= 0.01 * mean {
                        break draw;
                    }
                };
            }
        }
        params.push(BuildingParams::from_array(v));
    }
    BuildingCluster::new(params)
}

/// Disturbance series of one building, sampled every `step` seconds and held
/// constant between samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingDisturbance {
    pub step: f64,
    /// Ambient temperature, °C.
    pub t_amb: Vec<f64>,
    /// Solar heat gain on the wall, W.
    pub q_sol: Vec<f64>,
    /// Internal heat gain in the zone, W.
    pub q_int: Vec<f64>,
}

impl BuildingDisturbance {
    pub fn new(step: f64, t_amb: Vec<f64>, q_sol: Vec<f64>, q_int: Vec<f64>) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::InvalidParameter("disturbance step must be positive".into()));
        }
        dim_check("solar gain series", t_amb.len(), q_sol.len())?;
        dim_check("internal gain series", t_amb.len(), q_int.len())?;
        if t_amb.is_empty() {
            return Err(Error::InvalidParameter("empty disturbance series".into()));
        }
        if t_amb.iter().chain(&q_sol).chain(&q_int).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite disturbance value".into()));
        }
        Ok(Self { step, t_amb, q_sol, q_int })
    }

    pub fn len(&self) -> usize {
        self.t_amb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_amb.is_empty()
    }

    /// Sample index holding at time `t`; times past the end hold the last
    /// sample.
    pub fn index_at(&self, t: f64) -> usize {
        let k = (t / self.step + 1e-9).floor().max(0.0) as usize;
        k.min(self.len() - 1)
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        let k = self.index_at(t);
        Vector3::new(self.t_amb[k], self.q_sol[k], self.q_int[k])
    }
}

/// Stacked cluster disturbance vector `w_b` at time `t`.
pub fn cluster_disturbance(series: &[BuildingDisturbance], t: f64) -> DVector<f64> {
    let mut w = DVector::zeros(3 * series.len());
    for (l, s) in series.iter().enumerate() {
        w.fixed_rows_mut::<3>(3 * l).copy_from(&s.at(t));
    }
    w
}
