//! Quadratic programs with named variables and constraint rows.
//!
//! The objective is `½ xᵀ P x + qᵀ x + c` with `P` stored as its upper
//! triangle. Constraints are general rows `l ≤ A x ≤ u` (equalities have
//! `l = u`) and per-variable box bounds.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::csc::CscMatrix;
use super::ldl::LdlFactor;
use crate::error::{Error, Result};

/// Physical quantity carried by a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VarKind {
    /// Dispatch setpoint `ū_g` of a generator, p.u.
    GenSetpoint,
    /// Real-time deviation `Δu_g` of a generator, p.u.
    GenDeviation,
    /// Bus angle, rad.
    Angle,
    /// Bus frequency deviation, rad/s.
    Frequency,
    /// Building wall temperature, °C.
    WallTemp,
    /// Building zone temperature, °C.
    ZoneTemp,
    /// Building HVAC power, MW.
    Hvac,
    Slack,
    Generic,
}

/// Kind of a constraint row, used for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RowKind {
    AngleDynamics,
    FrequencyDynamics,
    WallDynamics,
    ZoneDynamics,
    PowerBalance,
    LineFlow,
    Generic,
}

/// `(kind, entity, time)`: entity ids are 1-based (bus, generator, building
/// or branch), time is the step index within the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarName {
    pub kind: VarKind,
    pub entity: usize,
    pub time: usize,
}

impl VarName {
    pub fn new(kind: VarKind, entity: usize, time: usize) -> Self {
        Self { kind, entity, time }
    }
}

impl fmt::Display for VarName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}[{}]@{}", self.kind, self.entity, self.time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowName {
    pub kind: RowKind,
    pub entity: usize,
    pub time: usize,
}

impl RowName {
    pub fn new(kind: RowKind, entity: usize, time: usize) -> Self {
        Self { kind, entity, time }
    }
}

impl fmt::Display for RowName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}[{}]@{}", self.kind, self.entity, self.time)
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    /// Upper triangle of the Hessian.
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub constant: f64,
    pub a: CscMatrix,
    pub row_lower: Vec<f64>,
    pub row_upper: Vec<f64>,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
    pub var_names: Vec<VarName>,
    pub row_names: Vec<RowName>,
    index: HashMap<VarName, usize>,
}

impl QuadraticProgram {
    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn n_rows(&self) -> usize {
        self.row_lower.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.sym_upper_mul_vec(x);
        let quad: f64 = px.iter().zip(x).map(|(a, b)| a * b).sum();
        let lin: f64 = self.q.iter().zip(x).map(|(a, b)| a * b).sum();
        0.5 * quad + lin + self.constant
    }

    pub fn var_index(&self, name: &VarName) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ax = self.a.mul_vec(x);
        let rows = ax
            .iter()
            .zip(self.row_lower.iter().zip(&self.row_upper))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0));
        let vars = x
            .iter()
            .zip(self.var_lower.iter().zip(&self.var_upper))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0));
        rows.chain(vars).fold(0.0, f64::max)
    }

    /// Residuals of the rows at `x`, signed as `A x − l` for equalities.
    pub fn row_values(&self, x: &[f64]) -> Vec<f64> {
        self.a.mul_vec(x)
    }

    /// Write the problem in a plain-text triplet format:
    ///
    /// ```text
    /// qp <n> <m>
    /// P <nnz>            followed by "i j v" lines (upper triangle)
    /// q                  followed by n values
    /// c <value>
    /// A <nnz>            followed by "i j v" lines
    /// l / u              followed by m values each
    /// lb / ub            followed by n values each
    /// ```
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "qp {} {}", self.n_vars(), self.n_rows())?;
        writeln!(w, "P {}", self.p.nnz())?;
        for (i, j, v) in self.p.triplets() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        writeln!(w, "q")?;
        for v in &self.q {
            writeln!(w, "{v:e}")?;
        }
        writeln!(w, "c {:e}", self.constant)?;
        writeln!(w, "A {}", self.a.nnz())?;
        for (i, j, v) in self.a.triplets() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        for (label, vals) in [
            ("l", &self.row_lower),
            ("u", &self.row_upper),
            ("lb", &self.var_lower),
            ("ub", &self.var_upper),
        ] {
            writeln!(w, "{label}")?;
            for v in vals {
                writeln!(w, "{v:e}")?;
            }
        }
        Ok(())
    }
}

/// Incremental QP construction with named variables.
#[derive(Debug, Clone, Default)]
pub struct QpBuilder {
    lower: Vec<f64>,
    upper: Vec<f64>,
    names: Vec<VarName>,
    index: HashMap<VarName, usize>,
    p_trips: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
    constant: f64,
    a_trips: Vec<(usize, usize, f64)>,
    row_lower: Vec<f64>,
    row_upper: Vec<f64>,
    row_names: Vec<RowName>,
}

impl QpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn n_rows(&self) -> usize {
        self.row_names.len()
    }

    /// Add a variable with box bounds (use infinities for free sides).
    /// Panics on a duplicate name, which is a bug in the caller.
    pub fn add_var(&mut self, name: VarName, lb: f64, ub: f64) -> usize {
        let i = self.names.len();
        let prev = self.index.insert(name, i);
        assert!(prev.is_none(), "duplicate variable {name}");
        self.names.push(name);
        self.lower.push(lb);
        self.upper.push(ub);
        self.q.push(0.0);
        i
    }

    pub fn var(&self, name: &VarName) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn set_bounds(&mut self, i: usize, lb: f64, ub: f64) {
        self.lower[i] = lb;
        self.upper[i] = ub;
    }

    /// Add `coef · x_i · x_j` to the objective.
    pub fn add_quadratic(&mut self, i: usize, j: usize, coef: f64) {
        if coef == 0.0 {
            return;
        }
        if i == j {
            self.p_trips.push((i, i, 2.0 * coef));
        } else {
            self.p_trips.push((i.min(j), i.max(j), coef));
        }
    }

    pub fn add_linear(&mut self, i: usize, coef: f64) {
        self.q[i] += coef;
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    /// Add the row `lb ≤ Σ coef·x ≤ ub` and return its index.
    pub fn add_row(&mut self, name: RowName, terms: &[(usize, f64)], lb: f64, ub: f64) -> usize {
        let r = self.row_names.len();
        for &(i, c) in terms {
            if c != 0.0 {
                self.a_trips.push((r, i, c));
            }
        }
        self.row_lower.push(lb);
        self.row_upper.push(ub);
        self.row_names.push(name);
        r
    }

    pub fn add_eq(&mut self, name: RowName, terms: &[(usize, f64)], rhs: f64) -> usize {
        self.add_row(name, terms, rhs, rhs)
    }

    pub fn build(self) -> Result<QuadraticProgram> {
        let n = self.names.len();
        let m = self.row_names.len();
        for i in 0..n {
            let (l, u) = (self.lower[i], self.upper[i]);
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::InvalidParameter(format!(
                    "variable {} has bounds [{l}, {u}]",
                    self.names[i]
                )));
            }
        }
        for r in 0..m {
            let (l, u) = (self.row_lower[r], self.row_upper[r]);
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::InvalidParameter(format!(
                    "row {} has bounds [{l}, {u}]",
                    self.row_names[r]
                )));
            }
        }
        if self.q.iter().any(|v| !v.is_finite()) || !self.constant.is_finite() {
            return Err(Error::InvalidParameter("non-finite objective coefficient".into()));
        }
        let p = CscMatrix::from_triplets(n, n, &self.p_trips);
        let a = CscMatrix::from_triplets(m, n, &self.a_trips);
        if p.values.iter().chain(&a.values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite matrix entry".into()));
        }
        check_psd(&p)?;
        Ok(QuadraticProgram {
            p,
            q: self.q,
            constant: self.constant,
            a,
            row_lower: self.row_lower,
            row_upper: self.row_upper,
            var_lower: self.lower,
            var_upper: self.upper,
            var_names: self.names,
            row_names: self.row_names,
            index: self.index,
        })
    }
}

/// Reject Hessians that are not positive semidefinite: `P + εI` must factor
/// with all pivots positive.
fn check_psd(p: &CscMatrix) -> Result<()> {
    let n = p.ncols;
    if p.nnz() == 0 {
        return Ok(());
    }
    let scale = p.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut trips: Vec<_> = p.triplets().collect();
    trips.extend((0..n).map(|i| (i, i, 1e-9 * scale)));
    let shifted = CscMatrix::from_triplets(n, n, &trips);
    let mut f = LdlFactor::analyze(&shifted).map_err(|_| Error::InvalidParameter("Hessian is not upper triangular".into()))?;
    let ok = f.factor().is_ok() && f.positive_pivots() == n;
    if !ok {
        return Err(Error::InvalidParameter("Hessian is not positive semidefinite".into()));
    }
    Ok(())
}
