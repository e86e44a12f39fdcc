//! Power network data: case-file parsing, incidence matrices and PTDF.
//!
//! Case files are plain text with `[case]`, `[bus]`, `[gen]`, `[branch]`,
//! `[gencost]` and `[dynamics]` sections. Columns are whitespace separated and
//! `#` starts a comment. See `docs/case-format.md` for the column schemas.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_BASE_MVA: f64 = 100.0;
pub const NOMINAL_FREQUENCY_HZ: f64 = 60.0;

/// A network bus. Ids are 1-based and contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    /// Inertia M_k in p.u. s^2/rad.
    pub inertia: f64,
    /// Generator damping D_k in p.u./(rad/s).
    pub damping: f64,
    /// Frequency sensitivity D'_k of the uncontrollable load, p.u./(rad/s).
    pub load_damping: f64,
    /// Nominal base load in p.u.; used to shape default load profiles.
    pub base_load: f64,
    pub is_generator_bus: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series susceptance b_kj = 1/x in p.u.
    pub susceptance: f64,
    /// Thermal limit in p.u.; `f64::INFINITY` when the case leaves it unset.
    pub flow_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    /// $/p.u.^2 h
    pub cost_quadratic: f64,
    /// $/p.u. h
    pub cost_linear: f64,
    /// $/h
    pub cost_constant: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Bounds on the real-time deviation from the dispatch setpoint, p.u.
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Generator {
    /// Generation cost J(p) for this unit.
    pub fn cost(&self, p: f64) -> f64 {
        self.cost_quadratic * p * p + self.cost_linear * p + self.cost_constant
    }
}

/// A validated power network. Immutable once built; `attach_buildings`
/// returns a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetwork {
    pub name: String,
    pub base_mva: f64,
    /// Synchronous frequency in rad/s. Stored for reporting only; all states
    /// are deviations from it.
    pub omega0: f64,
    pub slack_bus: usize,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    /// Bus (1-based) hosting each building, in building order.
    pub building_bus: Vec<usize>,
    /// Generator-to-bus incidence, n x n_g.
    pub gen_incidence: DMatrix<f64>,
    /// Building-to-bus incidence, n x n_b.
    pub bldg_incidence: DMatrix<f64>,
}

impl PowerNetwork {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn n_buildings(&self) -> usize {
        self.building_bus.len()
    }

    /// Buses carrying a nonzero nominal base load, in id order.
    pub fn load_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .filter(|b| b.base_load > 0.0)
            .map(|b| b.id)
            .collect()
    }

    /// Weighted graph Laplacian of the branch susceptances.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_buses();
        let mut l = DMatrix::zeros(n, n);
        for br in &self.branches {
            let (f, t) = (br.from - 1, br.to - 1);
            l[(f, f)] += br.susceptance;
            l[(t, t)] += br.susceptance;
            l[(f, t)] -= br.susceptance;
            l[(t, f)] -= br.susceptance;
        }
        l
    }

    /// Nominal base load vector in p.u.
    pub fn base_loads(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_buses(), self.buses.iter().map(|b| b.base_load))
    }

    /// Bus frequency in Hz for a deviation `omega` in rad/s.
    pub fn frequency_hz(&self, omega: f64) -> f64 {
        self.omega0 / (2.0 * std::f64::consts::PI) + omega / (2.0 * std::f64::consts::PI)
    }

    fn rebuild_incidence(&mut self) {
        let n = self.n_buses();
        self.gen_incidence = DMatrix::zeros(n, self.generators.len());
        for (m, g) in self.generators.iter().enumerate() {
            self.gen_incidence[(g.bus - 1, m)] = 1.0;
        }
        self.bldg_incidence = DMatrix::zeros(n, self.building_bus.len());
        for (l, &bus) in self.building_bus.iter().enumerate() {
            self.bldg_incidence[(bus - 1, l)] = 1.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Case,
    Bus,
    Gen,
    Branch,
    GenCost,
    Dynamics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Units {
    Mw,
    Pu,
}

struct Row<'a> {
    line: usize,
    cols: Vec<&'a str>,
}

impl Row<'_> {
    fn expect_cols(&self, n: usize, section: &str) -> Result<()> {
        if self.cols.len() != n {
            return Err(Error::Syntax {
                line: self.line,
                msg: format!(
                    "[{section}] expects {n} columns, found {}",
                    self.cols.len()
                ),
            });
        }
        Ok(())
    }

    fn float(&self, i: usize) -> Result<f64> {
        let s = self.cols[i];
        let v: f64 = s.parse().map_err(|_| Error::Syntax {
            line: self.line,
            msg: format!("expected a number, found `{s}`"),
        })?;
        if !v.is_finite() {
            return Err(Error::Syntax {
                line: self.line,
                msg: format!("non-finite value `{s}`"),
            });
        }
        Ok(v)
    }

    fn index(&self, i: usize) -> Result<usize> {
        let s = self.cols[i];
        match s.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::Syntax {
                line: self.line,
                msg: format!("expected a positive integer id, found `{s}`"),
            }),
        }
    }
}

/// Parse a case file into a validated network with no buildings attached.
pub fn parse_case(text: &str) -> Result<PowerNetwork> {
    let mut section = Section::None;
    let mut name = String::from("unnamed");
    let mut base_mva = DEFAULT_BASE_MVA;
    let mut units = Units::Mw;
    let mut slack: Option<(usize, usize)> = None;
    let mut frequency = NOMINAL_FREQUENCY_HZ;

    let mut bus_rows = Vec::new();
    let mut gen_rows = Vec::new();
    let mut branch_rows = Vec::new();
    let mut cost_rows = Vec::new();
    let mut dyn_rows = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            section = match content {
                "[case]" => Section::Case,
                "[bus]" => Section::Bus,
                "[gen]" => Section::Gen,
                "[branch]" => Section::Branch,
                "[gencost]" => Section::GenCost,
                "[dynamics]" => Section::Dynamics,
                other => {
                    return Err(Error::Syntax {
                        line,
                        msg: format!("unknown section {other}"),
                    })
                }
            };
            continue;
        }
        let row = Row {
            line,
            cols: content.split_whitespace().collect(),
        };
        match section {
            Section::None => {
                return Err(Error::Syntax {
                    line,
                    msg: "data outside of any section".into(),
                })
            }
            Section::Case => {
                row.expect_cols(2, "case")?;
                match row.cols[0] {
                    "name" => name = row.cols[1].to_string(),
                    "base_mva" => {
                        base_mva = row.float(1)?;
                        if base_mva <= 0.0 {
                            return Err(Error::Syntax {
                                line,
                                msg: "base_mva must be positive".into(),
                            });
                        }
                    }
                    "units" => {
                        units = match row.cols[1] {
                            "mw" => Units::Mw,
                            "pu" => Units::Pu,
                            other => {
                                return Err(Error::Syntax {
                                    line,
                                    msg: format!("units must be `mw` or `pu`, found `{other}`"),
                                })
                            }
                        }
                    }
                    "slack" => slack = Some((row.index(1)?, line)),
                    "frequency" => frequency = row.float(1)?,
                    other => {
                        return Err(Error::Syntax {
                            line,
                            msg: format!("unknown case key `{other}`"),
                        })
                    }
                }
            }
            Section::Bus => {
                row.expect_cols(2, "bus")?;
                bus_rows.push((row.line, row.index(0)?, row.float(1)?));
            }
            Section::Gen => {
                row.expect_cols(6, "gen")?;
                gen_rows.push((
                    row.line,
                    row.index(0)?,
                    row.index(1)?,
                    [row.float(2)?, row.float(3)?, row.float(4)?, row.float(5)?],
                ));
            }
            Section::Branch => {
                row.expect_cols(4, "branch")?;
                branch_rows.push((
                    row.line,
                    row.index(0)?,
                    row.index(1)?,
                    row.float(2)?,
                    row.float(3)?,
                ));
            }
            Section::GenCost => {
                row.expect_cols(4, "gencost")?;
                cost_rows.push((
                    row.line,
                    row.index(0)?,
                    [row.float(1)?, row.float(2)?, row.float(3)?],
                ));
            }
            Section::Dynamics => {
                row.expect_cols(4, "dynamics")?;
                dyn_rows.push((
                    row.line,
                    row.index(0)?,
                    [row.float(1)?, row.float(2)?, row.float(3)?],
                ));
            }
        }
    }

    // Power quantities are converted to p.u. here; `units pu` files are read
    // verbatim.
    let p_scale = match units {
        Units::Mw => 1.0 / base_mva,
        Units::Pu => 1.0,
    };
    let c2_scale = match units {
        Units::Mw => base_mva * base_mva,
        Units::Pu => 1.0,
    };
    let c1_scale = match units {
        Units::Mw => base_mva,
        Units::Pu => 1.0,
    };

    let n = bus_rows.len();
    if n == 0 {
        return Err(Error::Network("case has no buses".into()));
    }
    let mut buses: Vec<Option<Bus>> = vec![None; n];
    for &(line, id, pd) in &bus_rows {
        if id > n {
            return Err(Error::Network(format!(
                "line {line}: bus id {id} exceeds bus count {n}; ids must be 1..{n}"
            )));
        }
        if buses[id - 1].is_some() {
            return Err(Error::Network(format!("line {line}: duplicate bus id {id}")));
        }
        if pd < 0.0 {
            return Err(Error::Network(format!("line {line}: negative base load at bus {id}")));
        }
        buses[id - 1] = Some(Bus {
            id,
            inertia: 0.0,
            damping: 0.0,
            load_damping: 0.0,
            base_load: pd * p_scale,
            is_generator_bus: false,
        });
    }
    let mut buses: Vec<Bus> = buses.into_iter().map(|b| b.expect("ids checked")).collect();

    let bus_ref = |line: usize, what: &str, id: usize| -> Result<usize> {
        if id == 0 || id > n {
            Err(Error::Network(format!(
                "line {line}: {what} references bus {id}, which does not exist"
            )))
        } else {
            Ok(id)
        }
    };

    let mut costs: HashMap<usize, [f64; 3]> = HashMap::new();
    for &(line, id, c) in &cost_rows {
        if costs.insert(id, c).is_some() {
            return Err(Error::Network(format!("line {line}: duplicate gencost for generator {id}")));
        }
    }

    let mut generators = Vec::with_capacity(gen_rows.len());
    for (k, &(line, id, bus, [pmin, pmax, dmin, dmax])) in gen_rows.iter().enumerate() {
        if id != k + 1 {
            return Err(Error::Network(format!(
                "line {line}: generator ids must be 1..n_g in order, found {id}"
            )));
        }
        let bus = bus_ref(line, "generator", bus)?;
        if pmin > pmax {
            return Err(Error::Network(format!("line {line}: generator {id} has pmin > pmax")));
        }
        if dmin > dmax {
            return Err(Error::Network(format!("line {line}: generator {id} has dmin > dmax")));
        }
        let [c2, c1, c0] = costs.remove(&id).ok_or_else(|| {
            Error::Network(format!("line {line}: generator {id} has no gencost row"))
        })?;
        if c2 < 0.0 {
            return Err(Error::Network(format!(
                "line {line}: generator {id} has a negative quadratic cost"
            )));
        }
        buses[bus - 1].is_generator_bus = true;
        generators.push(Generator {
            id,
            bus,
            cost_quadratic: c2 * c2_scale,
            cost_linear: c1 * c1_scale,
            cost_constant: c0,
            p_min: pmin * p_scale,
            p_max: pmax * p_scale,
            delta_min: dmin * p_scale,
            delta_max: dmax * p_scale,
        });
    }
    if generators.is_empty() {
        return Err(Error::Network("case has no generators".into()));
    }
    if let Some(id) = costs.keys().min() {
        return Err(Error::Network(format!("gencost row for unknown generator {id}")));
    }

    let mut seen = HashSet::new();
    let mut branches = Vec::with_capacity(branch_rows.len());
    for &(line, from, to, x, rate) in &branch_rows {
        let from = bus_ref(line, "branch", from)?;
        let to = bus_ref(line, "branch", to)?;
        if from == to {
            return Err(Error::Network(format!("line {line}: branch connects bus {from} to itself")));
        }
        if !seen.insert((from.min(to), from.max(to))) {
            return Err(Error::Network(format!(
                "line {line}: duplicate branch between buses {from} and {to}"
            )));
        }
        if x <= 0.0 {
            return Err(Error::Network(format!("line {line}: branch reactance must be positive")));
        }
        if rate < 0.0 {
            return Err(Error::Network(format!("line {line}: negative flow limit")));
        }
        branches.push(Branch {
            from,
            to,
            susceptance: 1.0 / x,
            flow_limit: if rate == 0.0 { f64::INFINITY } else { rate * p_scale },
        });
    }

    let mut dyn_seen = HashSet::new();
    for &(line, bus, [m, d, dp]) in &dyn_rows {
        let bus = bus_ref(line, "dynamics row", bus)?;
        if !dyn_seen.insert(bus) {
            return Err(Error::Network(format!("line {line}: duplicate dynamics row for bus {bus}")));
        }
        if m < 0.0 || d < 0.0 || dp < 0.0 {
            return Err(Error::Network(format!(
                "line {line}: inertia and damping must be nonnegative"
            )));
        }
        let b = &mut buses[bus - 1];
        b.inertia = m;
        b.damping = d;
        b.load_damping = dp;
    }
    for b in &buses {
        let has_machine = b.inertia > 0.0 && b.damping > 0.0;
        if b.is_generator_bus && !has_machine {
            return Err(Error::Network(format!(
                "generator bus {} needs positive inertia and damping in [dynamics]",
                b.id
            )));
        }
        if !b.is_generator_bus && (b.inertia != 0.0 || b.damping != 0.0) {
            return Err(Error::Network(format!(
                "bus {} has no generator but nonzero inertia or damping",
                b.id
            )));
        }
    }

    let slack_bus = match slack {
        Some((id, line)) => bus_ref(line, "slack", id)?,
        None => generators[0].bus,
    };

    let mut net = PowerNetwork {
        name,
        base_mva,
        omega0: 2.0 * std::f64::consts::PI * frequency,
        slack_bus,
        buses,
        branches,
        generators,
        building_bus: Vec::new(),
        gen_incidence: DMatrix::zeros(0, 0),
        bldg_incidence: DMatrix::zeros(0, 0),
    };
    check_connected(&net)?;
    net.rebuild_incidence();
    Ok(net)
}

fn check_connected(net: &PowerNetwork) -> Result<()> {
    let n = net.n_buses();
    let mut adj = vec![Vec::new(); n];
    for br in &net.branches {
        adj[br.from - 1].push(br.to - 1);
        adj[br.to - 1].push(br.from - 1);
    }
    let mut visited = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    while let Some(k) = queue.pop_front() {
        for &j in &adj[k] {
            if !visited[j] {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    if let Some(k) = visited.iter().position(|v| !v) {
        return Err(Error::Network(format!(
            "network graph is disconnected: bus {} is unreachable from bus 1",
            k + 1
        )));
    }
    Ok(())
}

/// Serialize in p.u. units. Values are written with round-trip float
/// formatting, so `parse_case(&serialize_case(net))` reproduces `net`
/// (without buildings).
pub fn serialize_case(net: &PowerNetwork) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[case]");
    let _ = writeln!(s, "name {}", net.name);
    let _ = writeln!(s, "base_mva {}", net.base_mva);
    let _ = writeln!(s, "units pu");
    let _ = writeln!(s, "slack {}", net.slack_bus);
    let _ = writeln!(s, "frequency {}", net.omega0 / (2.0 * std::f64::consts::PI));
    let _ = writeln!(s, "\n[bus]");
    for b in &net.buses {
        let _ = writeln!(s, "{} {}", b.id, b.base_load);
    }
    let _ = writeln!(s, "\n[gen]");
    for g in &net.generators {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            g.id, g.bus, g.p_min, g.p_max, g.delta_min, g.delta_max
        );
    }
    let _ = writeln!(s, "\n[branch]");
    for br in &net.branches {
        let rate = if br.flow_limit.is_finite() { br.flow_limit } else { 0.0 };
        let _ = writeln!(s, "{} {} {} {}", br.from, br.to, 1.0 / br.susceptance, rate);
    }
    let _ = writeln!(s, "\n[gencost]");
    for g in &net.generators {
        let _ = writeln!(
            s,
            "{} {} {} {}",
            g.id, g.cost_quadratic, g.cost_linear, g.cost_constant
        );
    }
    let _ = writeln!(s, "\n[dynamics]");
    for b in &net.buses {
        if b.inertia != 0.0 || b.damping != 0.0 || b.load_damping != 0.0 {
            let _ = writeln!(s, "{} {} {} {}", b.id, b.inertia, b.damping, b.load_damping);
        }
    }
    s
}

/// Attach buildings to buses. `assignment` holds (building id, bus id) pairs
/// with building ids covering 1..n_b exactly once.
pub fn attach_buildings(net: &PowerNetwork, assignment: &[(usize, usize)]) -> Result<PowerNetwork> {
    let n_b = assignment.len();
    let mut building_bus = vec![0usize; n_b];
    for &(bldg, bus) in assignment {
        if bldg == 0 || bldg > n_b {
            return Err(Error::InvalidParameter(format!(
                "building id {bldg} outside 1..{n_b}"
            )));
        }
        if bus == 0 || bus > net.n_buses() {
            return Err(Error::InvalidParameter(format!(
                "building {bldg} assigned to bus {bus}, outside 1..{}",
                net.n_buses()
            )));
        }
        if building_bus[bldg - 1] != 0 {
            return Err(Error::InvalidParameter(format!(
                "building {bldg} assigned more than once"
            )));
        }
        building_bus[bldg - 1] = bus;
    }
    let mut out = net.clone();
    out.building_bus = building_bus;
    out.rebuild_incidence();
    Ok(out)
}

/// Deterministic round-robin assignment of `n_b` buildings over the load
/// buses, visiting the buses in an order shuffled by `seed`.
pub fn round_robin_assignment(net: &PowerNetwork, n_b: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let mut hosts = net.load_buses();
    if hosts.is_empty() {
        return Err(Error::InvalidParameter("network has no load buses".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    hosts.shuffle(&mut rng);
    Ok((0..n_b).map(|l| (l + 1, hosts[l % hosts.len()])).collect())
}

/// Power transfer distribution factors (n_l x n). Column k holds the branch
/// flows for a unit injection at bus k withdrawn at the slack bus.
pub fn ptdf(net: &PowerNetwork) -> Result<DMatrix<f64>> {
    let n = net.n_buses();
    let slack = net.slack_bus - 1;
    let keep: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let lap = net.laplacian();
    let reduced = DMatrix::from_fn(n - 1, n - 1, |i, j| lap[(keep[i], keep[j])]);
    let chol = reduced.cholesky().ok_or_else(|| {
        Error::Singular("reduced susceptance matrix is not positive definite".into())
    })?;
    let reduced_inv = chol.inverse();
    // Angle sensitivities with the slack row and column left at zero.
    let mut theta = DMatrix::zeros(n, n);
    for (i, &ki) in keep.iter().enumerate() {
        for (j, &kj) in keep.iter().enumerate() {
            theta[(ki, kj)] = reduced_inv[(i, j)];
        }
    }
    let mut out = DMatrix::zeros(net.n_branches(), n);
    for (r, br) in net.branches.iter().enumerate() {
        for k in 0..n {
            out[(r, k)] = br.susceptance * (theta[(br.from - 1, k)] - theta[(br.to - 1, k)]);
        }
    }
    Ok(out)
}

/// DC power-flow angles (slack angle zero) for a balanced injection vector.
pub fn dc_angles(net: &PowerNetwork, injection: &DVector<f64>) -> Result<DVector<f64>> {
    let n = net.n_buses();
    crate::error::dim_check("injection", n, injection.len())?;
    let slack = net.slack_bus - 1;
    let keep: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let lap = net.laplacian();
    let reduced = DMatrix::from_fn(n - 1, n - 1, |i, j| lap[(keep[i], keep[j])]);
    let rhs = DVector::from_iterator(n - 1, keep.iter().map(|&k| injection[k]));
    let chol = reduced.cholesky().ok_or_else(|| {
        Error::Singular("reduced susceptance matrix is not positive definite".into())
    })?;
    let sol = chol.solve(&rhs);
    let mut theta = DVector::zeros(n);
    for (i, &k) in keep.iter().enumerate() {
        theta[k] = sol[i];
    }
    Ok(theta)
}

/// The bundled cases, by name.
pub fn bundled_case(name: &str) -> Option<&'static str> {
    match name {
        "case9" => Some(include_str!("../data/case9.case")),
        "case14" => Some(include_str!("../data/case14.case")),
        "case30" => Some(include_str!("../data/case30.case")),
        "case57" => Some(include_str!("../data/case57.case")),
        _ => None,
    }
}

pub const BUNDLED_CASES: [&str; 4] = ["case9", "case14", "case30", "case57"];

#[cfg(test)]
pub(crate) mod fixtures {
    pub const TWO_BUS: &str = "\
[case]
name two_bus
base_mva 100
slack 2

[bus]
1 0
2 50

[gen]
1 1 0 100 -10 10

[branch]
1 2 0.1 80

[gencost]
1 0.01 10 0

[dynamics]
1 0.1 0.05 0
";

    pub const TRIANGLE: &str = "\
[case]
name triangle
slack 2

[bus]
1 0
2 0
3 30

[gen]
1 1 0 200 -20 20

[branch]
1 2 0.1 0
2 3 0.1 0
1 3 0.1 0

[gencost]
1 0.01 10 0

[dynamics]
1 0.1 0.05 0
";
}
