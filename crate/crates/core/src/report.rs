//! Cost breakdowns, percent reductions and run artifacts.
//!
//! Costs are accumulated in dollars with the horizon averaging weights
//! `h/T_p` and reported in thousands of dollars. Trajectories are written in
//! long format, one value per row; control rows carry the time at the end of
//! the step they are held over, the same time as the state they produce.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controllers::{BoundConfig, CostConfig, HorizonConfig};
use crate::error::{Error, Result};
use crate::network::{PowerNetwork, NOMINAL_FREQUENCY_HZ};
use crate::sim::{band_violations, max_frequency_deviation_hz, ScenarioRun, SolveStats};

/// Dollars per reported unit.
pub const DOLLARS_PER_KDOLLAR: f64 = 1000.0;

/// Closed-loop cost by category, k$.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub frequency: f64,
    pub regulation: f64,
    pub lopf: f64,
    pub hvac: f64,
}

impl CostBreakdown {
    pub fn total_grid(&self) -> f64 {
        self.frequency + self.regulation + self.lopf
    }

    pub fn total(&self) -> f64 {
        self.total_grid() + self.hvac
    }

    /// `(label, value)` pairs in reporting order, totals included.
    pub fn rows(&self) -> [(&'static str, f64); 6] {
        [
            ("frequency", self.frequency),
            ("regulation", self.regulation),
            ("lopf", self.lopf),
            ("total_grid", self.total_grid()),
            ("hvac", self.hvac),
            ("total", self.total()),
        ]
    }
}

/// Inputs of a breakdown, independent of where they were read from.
struct CostInputs<'a> {
    t0: f64,
    horizon: &'a HorizonConfig,
    x_g: &'a [DVector<f64>],
    deviations: &'a [DVector<f64>],
    setpoints: &'a [DVector<f64>],
    u_b: &'a [DVector<f64>],
}

fn breakdown(inputs: &CostInputs<'_>, net: &PowerNetwork, costs: &CostConfig) -> CostBreakdown {
    let hz = inputs.horizon;
    let w_g = hz.h_g / hz.t_p;
    let w_b = hz.h_b / hz.t_p;
    let q = costs.q_diag(net.n_buses());
    let r = costs.r_diag(net);
    let mut out = CostBreakdown::default();
    for x in inputs.x_g.iter().skip(1) {
        out.frequency += w_g * x.iter().zip(&q).map(|(v, c)| c * v * v).sum::<f64>();
    }
    for du in inputs.deviations {
        out.regulation += w_g * du.iter().zip(&r).map(|(v, c)| c * v * v).sum::<f64>();
    }
    for u in inputs.setpoints {
        out.lopf += net
            .generators
            .iter()
            .zip(u.iter())
            .map(|(g, v)| g.cost_quadratic * v * v + g.cost_linear * v + g.cost_constant)
            .sum::<f64>();
    }
    for (kb, u) in inputs.u_b.iter().enumerate() {
        let t = inputs.t0 + (kb + 1) as f64 * hz.h_b;
        out.hvac += w_b * costs.price(t) * u.sum();
    }
    out.frequency /= DOLLARS_PER_KDOLLAR;
    out.regulation /= DOLLARS_PER_KDOLLAR;
    out.lopf /= DOLLARS_PER_KDOLLAR;
    out.hvac /= DOLLARS_PER_KDOLLAR;
    out
}

/// Cost of the realized closed-loop trajectories of `run`.
pub fn cost_breakdown(run: &ScenarioRun, net: &PowerNetwork, costs: &CostConfig) -> CostBreakdown {
    breakdown(
        &CostInputs {
            t0: run.t0,
            horizon: &run.horizon,
            x_g: &run.x_g,
            deviations: &run.deviations,
            setpoints: &run.setpoints,
            u_b: &run.u_b,
        },
        net,
        costs,
    )
}

/// Relative reduction `(x − y)/x` of cost `y` against baseline `x`.
pub fn percent_reduction(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "percent reduction needs a positive baseline, got {x}"
        )));
    }
    Ok((x - y) / x)
}

/// Write one row per category per labelled breakdown.
pub fn write_costs_csv<W: Write>(writer: W, rows: &[(String, CostBreakdown)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "category", "kdollars"])?;
    for (label, b) in rows {
        for (cat, v) in b.rows() {
            w.write_record([label.as_str(), cat, &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parse a file written by [`write_costs_csv`]; totals are recomputed and
/// checked against the stored ones.
pub fn read_costs_csv<R: Read>(reader: R) -> Result<Vec<(String, CostBreakdown)>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut parts: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::InvalidParameter(format!("cost row with {} fields", rec.len())));
        }
        let label = rec[0].to_string();
        let value: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("bad cost value {:?}", &rec[2])))?;
        if !parts.contains_key(&label) {
            order.push(label.clone());
        }
        parts.entry(label).or_default().insert(rec[1].to_string(), value);
    }
    order
        .into_iter()
        .map(|label| {
            let p = &parts[&label];
            let get = |k: &str| {
                p.get(k)
                    .copied()
                    .ok_or_else(|| Error::InvalidParameter(format!("scenario {label}: missing category {k}")))
            };
            let b = CostBreakdown {
                frequency: get("frequency")?,
                regulation: get("regulation")?,
                lopf: get("lopf")?,
                hvac: get("hvac")?,
            };
            for (k, v) in [("total_grid", b.total_grid()), ("total", b.total())] {
                if let Some(stored) = p.get(k) {
                    if (stored - v).abs() > 1e-9 * v.abs().max(1.0) {
                        return Err(Error::InvalidParameter(format!(
                            "scenario {label}: stored {k} {stored} differs from the sum of parts {v}"
                        )));
                    }
                }
            }
            Ok((label, b))
        })
        .collect()
}

/// Long-format trajectories: `time_s, kind, entity, value` with kinds
/// `angle` and `omega` (per bus, rad and rad/s), `setpoint` (per generator
/// at block start, p.u.), `deviation` (per generator, p.u.), `t_wall`,
/// `t_zone` (per building, °C) and `hvac_kw` (per building).
pub fn write_trajectories_csv<W: Write>(writer: W, run: &ScenarioRun) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time_s", "kind", "entity", "value"])?;
    let mut put = |t: f64, kind: &str, entity: usize, v: f64| {
        w.write_record([t.to_string(), kind.to_string(), entity.to_string(), v.to_string()])
    };
    for (k, x) in run.x_g.iter().enumerate() {
        let t = run.grid_time(k);
        let n = x.len() / 2;
        for b in 0..n {
            put(t, "angle", b + 1, x[b])?;
        }
        for b in 0..n {
            put(t, "omega", b + 1, x[n + b])?;
        }
    }
    for (blk, u) in run.setpoints.iter().enumerate() {
        let t = run.t0 + blk as f64 * run.horizon.t_p;
        for (m, v) in u.iter().enumerate() {
            put(t, "setpoint", m + 1, *v)?;
        }
    }
    for (k, du) in run.deviations.iter().enumerate() {
        for (m, v) in du.iter().enumerate() {
            put(run.grid_time(k + 1), "deviation", m + 1, *v)?;
        }
    }
    for (kb, x) in run.x_b.iter().enumerate() {
        let t = run.bldg_time(kb);
        for l in 0..x.len() / 2 {
            put(t, "t_wall", l + 1, x[2 * l])?;
            put(t, "t_zone", l + 1, x[2 * l + 1])?;
        }
    }
    for (kb, u) in run.u_b.iter().enumerate() {
        for (l, v) in u.iter().enumerate() {
            put(run.bldg_time(kb + 1), "hvac_kw", l + 1, *v)?;
        }
    }
    drop(put);
    w.flush()?;
    Ok(())
}

/// Recompute the breakdown of a run from its trajectories file.
pub fn breakdown_from_trajectories<R: Read>(
    reader: R,
    t0: f64,
    horizon: &HorizonConfig,
    net: &PowerNetwork,
    costs: &CostConfig,
) -> Result<CostBreakdown> {
    let mut series: BTreeMap<String, BTreeMap<i64, BTreeMap<usize, f64>>> = BTreeMap::new();
    let key = |t: f64| (t * 1000.0).round() as i64;
    let mut r = csv::Reader::from_reader(reader);
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad trajectory field {:?}", &rec[i])))
        };
        let (t, v) = (parse(0)?, parse(3)?);
        let entity = parse(2)? as usize;
        series
            .entry(rec[1].to_string())
            .or_default()
            .entry(key(t))
            .or_default()
            .insert(entity, v);
    }
    let collect = |kind: &str| -> Vec<DVector<f64>> {
        series
            .get(kind)
            .map(|m| {
                m.values()
                    .map(|row| DVector::from_iterator(row.len(), row.values().copied()))
                    .collect()
            })
            .unwrap_or_default()
    };
    let angles = collect("angle");
    let omegas = collect("omega");
    let x_g: Vec<DVector<f64>> = angles
        .iter()
        .zip(&omegas)
        .map(|(a, w)| DVector::from_iterator(a.len() + w.len(), a.iter().chain(w.iter()).copied()))
        .collect();
    let deviations = collect("deviation");
    let setpoints = collect("setpoint");
    let u_b = collect("hvac_kw");
    Ok(breakdown(
        &CostInputs {
            t0,
            horizon,
            x_g: &x_g,
            deviations: &deviations,
            setpoints: &setpoints,
            u_b: &u_b,
        },
        net,
        costs,
    ))
}

/// Minimum, mean and maximum over entities at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub time_s: f64,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Envelope of `values[k]` (all entities at `times[k]`); empty rows are
/// skipped.
pub fn envelope(times: &[f64], values: &[Vec<f64>]) -> Vec<EnvelopePoint> {
    times
        .iter()
        .zip(values)
        .filter(|(_, v)| !v.is_empty())
        .map(|(&t, v)| {
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = (v.iter().sum::<f64>() / v.len() as f64).clamp(min, max);
            EnvelopePoint { time_s: t, min, mean, max }
        })
        .collect()
}

pub fn write_envelope_csv<W: Write>(writer: W, points: &[EnvelopePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time_s", "min", "mean", "max"])?;
    for p in points {
        w.write_record([p.time_s.to_string(), p.min.to_string(), p.mean.to_string(), p.max.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Envelopes of bus frequency (Hz), zone temperature (°C), HVAC power (kW)
/// and generator output (MW) over a run.
pub fn run_envelopes(run: &ScenarioRun, base_mva: f64) -> BTreeMap<&'static str, Vec<EnvelopePoint>> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = BTreeMap::new();
    let gt: Vec<f64> = (0..run.x_g.len()).map(|k| run.grid_time(k)).collect();
    let freq: Vec<Vec<f64>> = run
        .x_g
        .iter()
        .map(|x| {
            let n = x.len() / 2;
            x.rows(n, n).iter().map(|w| NOMINAL_FREQUENCY_HZ + w / two_pi).collect()
        })
        .collect();
    out.insert("frequency_hz", envelope(&gt, &freq));
    let bt: Vec<f64> = (0..run.x_b.len()).map(|k| run.bldg_time(k)).collect();
    let zone: Vec<Vec<f64>> = run
        .x_b
        .iter()
        .map(|x| (0..x.len() / 2).map(|l| x[2 * l + 1]).collect())
        .collect();
    out.insert("zone_temperature_c", envelope(&bt, &zone));
    let ut: Vec<f64> = (1..=run.u_b.len()).map(|k| run.bldg_time(k)).collect();
    let hvac: Vec<Vec<f64>> = run.u_b.iter().map(|u| u.iter().copied().collect()).collect();
    out.insert("hvac_kw", envelope(&ut, &hvac));
    let dt: Vec<f64> = (1..=run.deviations.len()).map(|k| run.grid_time(k)).collect();
    let gen: Vec<Vec<f64>> = (1..=run.deviations.len())
        .map(|k| run.generation(k).iter().map(|v| v * base_mva).collect())
        .collect();
    out.insert("generation_mw", envelope(&dt, &gen));
    out
}

/// Structured summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub case: String,
    pub t_start_s: f64,
    pub t_final_s: f64,
    pub n_buses: usize,
    pub n_buildings: usize,
    pub costs_kdollars: CostBreakdown,
    pub total_grid_kdollars: f64,
    pub total_kdollars: f64,
    pub max_frequency_deviation_hz: f64,
    pub zone_band_violations: usize,
    pub thermostat_deadband_c: Option<f64>,
    pub stats: SolveStats,
}

impl RunSummary {
    pub fn new(run: &ScenarioRun, net: &PowerNetwork, bounds: &BoundConfig, costs: CostBreakdown) -> Self {
        Self {
            scenario: run.scenario.to_string(),
            case: net.name.clone(),
            t_start_s: run.t0,
            t_final_s: run.n_grid_steps() as f64 * run.horizon.h_g,
            n_buses: net.n_buses(),
            n_buildings: net.n_buildings(),
            costs_kdollars: costs,
            total_grid_kdollars: costs.total_grid(),
            total_kdollars: costs.total(),
            max_frequency_deviation_hz: max_frequency_deviation_hz(run, net.n_buses()),
            zone_band_violations: band_violations(run, bounds, 1e-6).len(),
            thermostat_deadband_c: run.deadband,
            stats: run.stats.clone(),
        }
    }
}

/// Write `costs.csv`, `trajectories.csv`, `summary.json` and the
/// `plot_*.csv` envelopes of one run into `outdir`.
pub fn emit(
    run: &ScenarioRun,
    breakdown: &CostBreakdown,
    net: &PowerNetwork,
    bounds: &BoundConfig,
    outdir: &Path,
) -> Result<RunSummary> {
    fs::create_dir_all(outdir)?;
    write_costs_csv(
        fs::File::create(outdir.join("costs.csv"))?,
        &[(run.scenario.to_string(), *breakdown)],
    )?;
    write_trajectories_csv(fs::File::create(outdir.join("trajectories.csv"))?, run)?;
    for (name, points) in run_envelopes(run, net.base_mva) {
        write_envelope_csv(fs::File::create(outdir.join(format!("plot_{name}.csv")))?, &points)?;
    }
    let summary = RunSummary::new(run, net, bounds, *breakdown);
    serde_json::to_writer_pretty(fs::File::create(outdir.join("summary.json"))?, &summary)?;
    Ok(summary)
}

/// Side-by-side comparison of scenarios against the first one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenarios: Vec<String>,
    pub costs_kdollars: Vec<CostBreakdown>,
    /// Reductions of each scenario against the first, per category, as
    /// fractions; `None` where the baseline is zero.
    pub reductions: Vec<BTreeMap<String, Option<f64>>>,
}

impl Comparison {
    pub fn new(rows: &[(String, CostBreakdown)]) -> Self {
        let base = rows.first().map(|r| r.1).unwrap_or_default();
        let reductions = rows
            .iter()
            .map(|(_, b)| {
                b.rows()
                    .iter()
                    .zip(base.rows())
                    .map(|((cat, y), (_, x))| (cat.to_string(), percent_reduction(x, *y).ok()))
                    .collect()
            })
            .collect();
        Self {
            scenarios: rows.iter().map(|r| r.0.clone()).collect(),
            costs_kdollars: rows.iter().map(|r| r.1).collect(),
            reductions,
        }
    }
}

/// Table-shaped cost comparison: one row per category, one column per
/// scenario.
pub fn write_comparison_csv<W: Write>(writer: W, rows: &[(String, CostBreakdown)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["category".to_string()];
    header.extend(rows.iter().map(|r| r.0.clone()));
    w.write_record(&header)?;
    for (i, (cat, _)) in CostBreakdown::default().rows().iter().enumerate() {
        let mut rec = vec![cat.to_string()];
        rec.extend(rows.iter().map(|r| r.1.rows()[i].1.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
