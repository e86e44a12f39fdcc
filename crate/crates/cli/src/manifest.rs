//! Run manifest: the TOML file given with `--config`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use btg_core::building::{sample_cluster, BuildingParams};
use btg_core::controllers::{BangBangConfig, BoundConfig, CostConfig, HorizonConfig};
use btg_core::network::{attach_buildings, bundled_case, parse_case, round_robin_assignment, PowerNetwork};
use btg_core::profiles::{DayProfiles, StepSeries};
use btg_core::qp::QpSettings;
use btg_core::sim::{Models, NoiseConfig, ReplayConfig, Scenario, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    /// Bundled case name or path to a case file, relative to the manifest.
    pub case: String,
    pub scenario: Scenario,
    /// Start of the run, seconds after midnight.
    pub t_start_s: f64,
    /// Length of the run, s.
    pub t_final_s: f64,
    /// Profile CSV; the synthetic day when unset.
    pub profiles: Option<PathBuf>,
    pub initial_zone_c: Option<f64>,
    pub solver: SolverChoice,
    pub buildings: BuildingSection,
    pub horizon: HorizonConfig,
    pub bounds: BoundConfig,
    pub costs: CostSection,
    pub noise: NoiseConfig,
    pub seeds: SeedSection,
    pub bang_bang: BangBangConfig,
    pub replay: ReplaySection,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            case: "case9".into(),
            scenario: Scenario::III,
            t_start_s: 43_200.0,
            t_final_s: 3_600.0,
            profiles: None,
            initial_zone_c: None,
            solver: SolverChoice::InteriorPoint,
            buildings: BuildingSection::default(),
            horizon: HorizonConfig::default(),
            bounds: BoundConfig::default(),
            costs: CostSection::default(),
            noise: NoiseConfig::default(),
            seeds: SeedSection::default(),
            bang_bang: BangBangConfig::default(),
            replay: ReplaySection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    InteriorPoint,
    Admm,
}

impl SolverChoice {
    pub fn settings(&self) -> QpSettings {
        match self {
            SolverChoice::InteriorPoint => QpSettings::interior_point(),
            SolverChoice::Admm => QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingSection {
    pub count: usize,
    /// Relative standard deviation of the sampled parameters.
    pub spread: f64,
    pub seed: u64,
    pub reference: BuildingParams,
    /// Explicit `[building, bus]` pairs, 1-based; round-robin over the load
    /// buses when empty.
    pub assignment: Vec<(usize, usize)>,
}

impl Default for BuildingSection {
    fn default() -> Self {
        Self {
            count: 10,
            spread: 0.1,
            seed: 7,
            reference: BuildingParams::reference(),
            assignment: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub q_frequency: f64,
    pub q_angle: f64,
    pub r_scale: f64,
    /// Hourly prices, $/kWh; the price column of the profiles when empty.
    pub hourly_prices: Vec<f64>,
}

impl Default for CostSection {
    fn default() -> Self {
        let d = CostConfig::default();
        Self {
            q_frequency: d.q_frequency,
            q_angle: d.q_angle,
            r_scale: d.r_scale,
            hourly_prices: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    /// Seed of the realized disturbance noise of a run.
    pub run: u64,
    /// Seeds of the replays performed by `validate`.
    pub replay: Vec<u64>,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self { run: 0, replay: vec![0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub substeps: usize,
    pub nonlinear: bool,
    /// Noise of the replay; the run noise is not reused.
    pub noise: NoiseConfig,
}

impl Default for ReplaySection {
    fn default() -> Self {
        let d = ReplayConfig::default();
        Self {
            substeps: d.substeps,
            nonlinear: d.nonlinear,
            noise: d.noise,
        }
    }
}

impl Manifest {
    /// Parse a manifest and resolve its relative paths against the
    /// directory holding it.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut m: Manifest = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if bundled_case(&m.case).is_none() {
            m.case = base.join(&m.case).to_string_lossy().into_owned();
        }
        if let Some(p) = m.profiles.take() {
            m.profiles = Some(base.join(p));
        }
        Ok(m)
    }

    pub fn scenario_config(&self, scenario: Scenario) -> ScenarioConfig {
        ScenarioConfig {
            scenario,
            t_start: self.t_start_s,
            t_final: self.t_final_s,
            horizon: self.horizon.clone(),
            noise: self.noise,
            seed: self.seeds.run,
            initial_zone_c: self.initial_zone_c,
            bang_bang: self.bang_bang.clone(),
        }
    }

    pub fn replay_config(&self, seed: u64) -> ReplayConfig {
        ReplayConfig {
            substeps: self.replay.substeps,
            nonlinear: self.replay.nonlinear,
            noise: self.replay.noise,
            seed,
            ..ReplayConfig::default()
        }
    }

    pub fn network(&self) -> anyhow::Result<PowerNetwork> {
        let net = match bundled_case(&self.case) {
            Some(text) => parse_case(text)?,
            None => {
                let text = fs::read_to_string(&self.case).with_context(|| format!("reading case {}", self.case))?;
                parse_case(&text).with_context(|| format!("parsing case {}", self.case))?
            }
        };
        let b = &self.buildings;
        let assignment = if b.assignment.is_empty() {
            round_robin_assignment(&net, b.count, b.seed)?
        } else {
            if b.assignment.len() != b.count {
                bail!("{} building assignments for {} buildings", b.assignment.len(), b.count);
            }
            b.assignment.clone()
        };
        Ok(attach_buildings(&net, &assignment)?)
    }

    pub fn models(&self) -> anyhow::Result<Models> {
        let net = self.network()?;
        let b = &self.buildings;
        let cluster = sample_cluster(&b.reference, b.count, b.spread, b.seed)?;
        let profiles = match &self.profiles {
            Some(p) => {
                let f = fs::File::open(p).with_context(|| format!("opening profiles {}", p.display()))?;
                DayProfiles::read_csv(f).with_context(|| format!("reading profiles {}", p.display()))?
            }
            None => DayProfiles::synthetic(),
        };
        let c = &self.costs;
        let prices = if c.hourly_prices.is_empty() {
            profiles.price.clone()
        } else {
            StepSeries::hourly(&c.hourly_prices)
        };
        let costs = CostConfig {
            q_frequency: c.q_frequency,
            q_angle: c.q_angle,
            r_scale: c.r_scale,
            prices,
        };
        Ok(Models::new(net, cluster, profiles, costs, self.bounds.clone(), self.horizon.clone())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_takes_defaults() {
        let m: Manifest = toml::from_str("").unwrap();
        assert_eq!(m, Manifest::default());
    }

    #[test]
    fn sections_override_defaults() {
        let m: Manifest = toml::from_str(
            r#"
            case = "case14"
            scenario = "II"
            t_final_s = 1800
            solver = "admm"
            [buildings]
            count = 4
            assignment = [[1, 2], [2, 3], [3, 4], [4, 5]]
            [horizon]
            h_b = 100
            [noise]
            load = 0.05
            [seeds]
            replay = [1, 2, 3]
            "#,
        )
        .unwrap();
        assert_eq!(m.scenario, Scenario::II);
        assert_eq!(m.solver, SolverChoice::Admm);
        assert_eq!(m.buildings.count, 4);
        assert_eq!(m.horizon.h_b, 100.0);
        assert_eq!(m.horizon.h_g, 10.0);
        assert_eq!(m.noise.load, 0.05);
        assert_eq!(m.seeds.replay, vec![1, 2, 3]);
        let net = m.network().unwrap();
        assert_eq!(net.n_buildings(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Manifest>("cases = \"case9\"").is_err());
        assert!(toml::from_str::<Manifest>("[horizon]\nt_p = \"long\"").is_err());
    }

    #[test]
    fn assignment_count_must_match() {
        let mut m = Manifest::default();
        m.buildings.count = 3;
        m.buildings.assignment = vec![(1, 5)];
        assert!(m.network().is_err());
    }

    #[test]
    fn hourly_prices_override_profiles() {
        let mut m = Manifest::default();
        m.buildings.count = 2;
        m.costs.hourly_prices = vec![0.5; 24];
        let models = m.models().unwrap();
        assert_eq!(models.costs.price(3_600.0 * 13.0), 0.5);
    }
}
