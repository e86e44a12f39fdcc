//! Daily disturbance, load and price profiles, and the forecasts built on
//! them.
//!
//! Every profile is a zero-order-hold series: the value at `t` is the last
//! sample at or before `t`. Daily profiles repeat with a 24 h period, so a
//! run may start at any time of day and extend past midnight.

use std::io::{Read, Write};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::PowerNetwork;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const SECONDS_PER_HOUR: f64 = 3_600.0;

/// Piecewise-constant series with an optional period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub period: Option<f64>,
}

impl StepSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, period: Option<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "series needs matching non-empty times and values, got {} and {}",
                times.len(),
                values.len()
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite series entry".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("series times must be strictly increasing".into()));
        }
        if let Some(p) = period {
            if !(p > *times.last().unwrap() - times[0]) {
                return Err(Error::InvalidParameter(format!(
                    "period {p} s does not cover the series"
                )));
            }
        }
        Ok(Self { times, values, period })
    }

    /// One value per hour, repeating every `values.len()` hours.
    pub fn hourly(values: &[f64]) -> Self {
        let times = (0..values.len()).map(|h| h as f64 * SECONDS_PER_HOUR).collect();
        Self {
            times,
            values: values.to_vec(),
            period: Some(values.len() as f64 * SECONDS_PER_HOUR),
        }
    }

    pub fn constant(v: f64) -> Self {
        Self {
            times: vec![0.0],
            values: vec![v],
            period: None,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let t = match self.period {
            Some(p) => self.times[0] + (t - self.times[0]).rem_euclid(p),
            None => t,
        };
        let k = self.times.partition_point(|&s| s <= t + 1e-9);
        self.values[k.saturating_sub(1)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Deserialize)]
struct PriceRecord {
    time_s: f64,
    #[serde(rename = "price_dollars_per_kWh")]
    price: f64,
}

/// Read a price CSV with columns `time_s, price_dollars_per_kWh`. The series
/// repeats daily when it spans less than a day.
pub fn read_price_csv<R: Read>(reader: R) -> Result<StepSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.deserialize() {
        let r: PriceRecord = rec?;
        if r.price < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "negative electricity price {} at t = {} s",
                r.price, r.time_s
            )));
        }
        times.push(r.time_s);
        values.push(r.price);
    }
    let period = match times.last() {
        Some(&last) if last < SECONDS_PER_DAY => Some(SECONDS_PER_DAY),
        _ => None,
    };
    StepSeries::new(times, values, period)
}

/// Daily profiles shared by all buildings and buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfiles {
    /// Ambient temperature, °C.
    pub t_amb: StepSeries,
    /// Solar gain on the wall of one building, W.
    pub q_sol: StepSeries,
    /// Internal gain in the zone of one building, W.
    pub q_int: StepSeries,
    /// Multiplier on the nominal bus loads of the case.
    pub base_load: StepSeries,
    /// Miscellaneous (non-HVAC) load of one building, kW.
    pub misc_kw: StepSeries,
    /// Electricity price for building loads, $/kWh.
    pub price: StepSeries,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRecord {
    time_s: f64,
    t_amb_c: f64,
    q_sol_w: f64,
    q_int_w: f64,
    base_load_factor: f64,
    misc_kw: f64,
    #[serde(rename = "price_dollars_per_kWh")]
    price: f64,
}

impl DayProfiles {
    /// Hourly summer-day profiles for a mid-size commercial building.
    pub fn synthetic() -> Self {
        let t_amb = [
            20.5, 20.0, 19.5, 19.0, 19.0, 19.0, 19.5, 20.5, 22.5, 24.5, 26.5, 28.5, 30.0, 31.0, 32.0, 32.5,
            32.0, 31.0, 29.0, 27.0, 25.0, 23.5, 22.0, 21.0,
        ];
        let q_sol_kw = [
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 25.0, 55.0, 85.0, 110.0, 130.0, 145.0, 150.0, 145.0, 130.0,
            110.0, 80.0, 45.0, 15.0, 0.0, 0.0, 0.0, 0.0,
        ];
        let q_int_kw = [
            20.0, 20.0, 20.0, 20.0, 20.0, 20.0, 40.0, 120.0, 220.0, 260.0, 270.0, 270.0, 250.0, 260.0, 270.0,
            270.0, 250.0, 200.0, 120.0, 60.0, 30.0, 20.0, 20.0, 20.0,
        ];
        let base_load = [
            0.70, 0.67, 0.65, 0.64, 0.65, 0.68, 0.74, 0.82, 0.88, 0.92, 0.95, 0.97, 0.98, 0.99, 1.00, 1.00,
            0.99, 0.97, 0.94, 0.90, 0.86, 0.81, 0.76, 0.72,
        ];
        let misc_kw = [
            40.0, 40.0, 40.0, 40.0, 40.0, 45.0, 60.0, 90.0, 120.0, 130.0, 130.0, 130.0, 125.0, 130.0, 130.0,
            130.0, 125.0, 110.0, 90.0, 70.0, 55.0, 45.0, 40.0, 40.0,
        ];
        let price = [
            0.030, 0.028, 0.027, 0.027, 0.028, 0.031, 0.038, 0.048, 0.058, 0.066, 0.075, 0.090, 0.105, 0.118,
            0.125, 0.125, 0.118, 0.100, 0.082, 0.066, 0.052, 0.042, 0.036, 0.032,
        ];
        let kw = |v: &[f64]| v.iter().map(|x| x * 1000.0).collect::<Vec<_>>();
        Self {
            t_amb: StepSeries::hourly(&t_amb),
            q_sol: StepSeries::hourly(&kw(&q_sol_kw)),
            q_int: StepSeries::hourly(&kw(&q_int_kw)),
            base_load: StepSeries::hourly(&base_load),
            misc_kw: StepSeries::hourly(&misc_kw),
            price: StepSeries::hourly(&price),
        }
    }

    /// Read profiles from a CSV with columns `time_s, t_amb_c, q_sol_w,
    /// q_int_w, base_load_factor, misc_kw, price_dollars_per_kWh`. Series
    /// shorter than a day repeat daily.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut cols: [Vec<f64>; 7] = Default::default();
        for rec in rdr.deserialize() {
            let r: ProfileRecord = rec?;
            for (c, v) in cols.iter_mut().zip([
                r.time_s,
                r.t_amb_c,
                r.q_sol_w,
                r.q_int_w,
                r.base_load_factor,
                r.misc_kw,
                r.price,
            ]) {
                c.push(v);
            }
        }
        let [times, t_amb, q_sol, q_int, base_load, misc_kw, price] = cols;
        if price.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidParameter("negative electricity price in profiles".into()));
        }
        let period = match times.last() {
            Some(&last) if last < SECONDS_PER_DAY => Some(SECONDS_PER_DAY),
            _ => None,
        };
        let mk = |v: Vec<f64>| StepSeries::new(times.clone(), v, period);
        Ok(Self {
            t_amb: mk(t_amb)?,
            q_sol: mk(q_sol)?,
            q_int: mk(q_int)?,
            base_load: mk(base_load)?,
            misc_kw: mk(misc_kw)?,
            price: mk(price)?,
        })
    }

    /// Write the profiles sampled at `times` in the format read by
    /// [`DayProfiles::read_csv`].
    pub fn write_csv<W: Write>(&self, writer: W, times: &[f64]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for &t in times {
            w.serialize(ProfileRecord {
                time_s: t,
                t_amb_c: self.t_amb.at(t),
                q_sol_w: self.q_sol.at(t),
                q_int_w: self.q_int.at(t),
                base_load_factor: self.base_load.at(t),
                misc_kw: self.misc_kw.at(t),
                price: self.price.at(t),
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Disturbance forecasts seen by the controllers.
pub trait Forecast {
    /// `w_g = [P_BL per bus (p.u.); P_misc per building (kW)]` at `t`.
    fn grid(&self, t: f64) -> DVector<f64>;
    /// `w_b = [T_amb, Q_sol, Q_int]` per building at `t`.
    fn buildings(&self, t: f64) -> DVector<f64>;
}

/// Forecast from daily profiles: bus loads are the nominal case loads
/// scaled by the base-load factor, every building sees the same weather and
/// gains.
#[derive(Debug, Clone)]
pub struct ProfileForecast {
    pub profiles: DayProfiles,
    pub nominal_loads: DVector<f64>,
    pub n_b: usize,
}

impl ProfileForecast {
    pub fn new(net: &PowerNetwork, profiles: DayProfiles) -> Self {
        Self {
            profiles,
            nominal_loads: net.base_loads(),
            n_b: net.n_buildings(),
        }
    }
}

impl Forecast for ProfileForecast {
    fn grid(&self, t: f64) -> DVector<f64> {
        let n = self.nominal_loads.len();
        let f = self.profiles.base_load.at(t);
        let misc = self.profiles.misc_kw.at(t);
        DVector::from_fn(n + self.n_b, |i, _| if i < n { f * self.nominal_loads[i] } else { misc })
    }

    fn buildings(&self, t: f64) -> DVector<f64> {
        let w = [
            self.profiles.t_amb.at(t),
            self.profiles.q_sol.at(t),
            self.profiles.q_int.at(t),
        ];
        DVector::from_fn(3 * self.n_b, |i, _| w[i % 3])
    }
}

/// Fixed disturbances, mostly for tests.
#[derive(Debug, Clone)]
pub struct ConstantForecast {
    pub grid: DVector<f64>,
    pub buildings: DVector<f64>,
}

impl Forecast for ConstantForecast {
    fn grid(&self, _t: f64) -> DVector<f64> {
        self.grid.clone()
    }

    fn buildings(&self, _t: f64) -> DVector<f64> {
        self.buildings.clone()
    }
}

/// Realized disturbances: a forecast with multiplicative zero-mean Gaussian
/// noise `v (1 + σ ξ)`, redrawn every `interval` seconds. The draw for an
/// interval depends only on the seed and the interval index, so repeated
/// queries are consistent.
#[derive(Debug, Clone)]
pub struct NoisyForecast<F> {
    pub inner: F,
    pub std_fraction: f64,
    pub interval: f64,
    pub seed: u64,
}

impl<F: Forecast> NoisyForecast<F> {
    pub fn new(inner: F, std_fraction: f64, interval: f64, seed: u64) -> Result<Self> {
        if !(std_fraction >= 0.0 && std_fraction.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise fraction must be nonnegative, got {std_fraction}"
            )));
        }
        if !(interval > 0.0) {
            return Err(Error::InvalidParameter("noise interval must be positive".into()));
        }
        Ok(Self {
            inner,
            std_fraction,
            interval,
            seed,
        })
    }

    fn perturb(&self, mut v: DVector<f64>, t: f64, stream: u64) -> DVector<f64> {
        if self.std_fraction == 0.0 {
            return v;
        }
        let k = (t / self.interval + 1e-9).floor() as i64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(self.seed, stream), k as u64));
        for x in v.iter_mut() {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *x *= 1.0 + self.std_fraction * xi;
        }
        v
    }
}

/// SplitMix64 combination of two words.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl<F: Forecast> Forecast for NoisyForecast<F> {
    fn grid(&self, t: f64) -> DVector<f64> {
        self.perturb(self.inner.grid(t), t, 1)
    }

    fn buildings(&self, t: f64) -> DVector<f64> {
        self.perturb(self.inner.buildings(t), t, 2)
    }
}

impl<F: Forecast + ?Sized> Forecast for &F {
    fn grid(&self, t: f64) -> DVector<f64> {
        (**self).grid(t)
    }

    fn buildings(&self, t: f64) -> DVector<f64> {
        (**self).buildings(t)
    }
}
