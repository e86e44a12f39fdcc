//! `btg`: command-line entry points of the buildings-to-grid toolkit.

mod manifest;
mod selftest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use btg_core::report::{cost_breakdown, emit, write_comparison_csv, write_costs_csv, Comparison, CostBreakdown};
use btg_core::sim::{replay_nonlinear, run_scenario, Models, Scenario, ScenarioRun};
use btg_core::Error;

use manifest::Manifest;

const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "btg", version, about = "Buildings-to-grid multi-timescale MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its results.
    Run(Common),
    /// Simulate scenarios I, II and III and compare their costs.
    Compare(Common),
    /// Simulate one scenario and replay its controls on the nonlinear model.
    Validate(Common),
    /// Run the built-in property checks.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// Bundled case name (case9, case14, case30, case57) or case file.
    #[arg(long, value_name = "PATH")]
    case: Option<String>,
    /// Run manifest (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Scenario: I (thermostat), II (building MPC) or III (joint MPC).
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "btg-out")]
    out: PathBuf,
    /// Noise seed; for `validate`, the only replay seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Relative standard deviation of the disturbance noise.
    #[arg(long, value_name = "F")]
    noise_load: Option<f64>,
    /// Relative standard deviation of the building matrix noise.
    #[arg(long, value_name = "F")]
    noise_model: Option<f64>,
}

/// Failure of a command, classified for the exit code.
#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Run(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => EXIT_INPUT,
            Failure::Run(e) => match e.downcast_ref::<Error>() {
                Some(Error::Infeasible(_)) => EXIT_INFEASIBLE,
                Some(Error::InvalidParameter(_) | Error::Dimension(_)) => EXIT_INPUT,
                _ => EXIT_FAILURE,
            },
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Run(e) => e,
        }
    }
}

fn input<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Input(e.into()))
}

fn running<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Run(e.into()))
}

/// Where a command writes and how it replays, after flags override the
/// manifest.
struct Study {
    manifest: Manifest,
    models: Models,
    out: PathBuf,
    replay_seeds: Vec<u64>,
}

impl Study {
    fn prepare(c: &Common, replay_noise: bool) -> Result<Self, Failure> {
        let mut m = match &c.config {
            Some(path) => input(Manifest::load(path))?,
            None => Manifest::default(),
        };
        if let Some(case) = &c.case {
            m.case = case.clone();
        }
        if let Some(s) = c.scenario {
            m.scenario = s;
        }
        let noise = if replay_noise { &mut m.replay.noise } else { &mut m.noise };
        if let Some(v) = c.noise_load {
            noise.load = v;
        }
        if let Some(v) = c.noise_model {
            noise.model = v;
        }
        let mut replay_seeds = m.seeds.replay.clone();
        if let Some(seed) = c.seed {
            if replay_noise {
                replay_seeds = vec![seed];
            } else {
                m.seeds.run = seed;
            }
        }
        input(m.scenario_config(m.scenario).validate())?;
        let models = input(m.models())?;
        Ok(Self {
            manifest: m,
            models,
            out: c.out.clone(),
            replay_seeds,
        })
    }

    fn simulate(&self, scenario: Scenario) -> Result<(ScenarioRun, CostBreakdown), Failure> {
        let config = self.manifest.scenario_config(scenario);
        let run = running(
            run_scenario(&self.models, &config, &self.manifest.solver.settings())
                .with_context(|| format!("scenario {scenario}")),
        )?;
        let breakdown = cost_breakdown(&run, &self.models.net, &self.models.costs);
        Ok((run, breakdown))
    }

    fn emit(&self, run: &ScenarioRun, breakdown: &CostBreakdown, dir: &Path) -> Result<(), Failure> {
        let summary = running(emit(run, breakdown, &self.models.net, &self.models.bounds, dir))?;
        println!(
            "scenario {:>3}: total {:.4} k$ (grid {:.4}, HVAC {:.4}), max |df| {:.5} Hz, {} band violations -> {}",
            summary.scenario,
            summary.total_kdollars,
            summary.total_grid_kdollars,
            breakdown.hvac,
            summary.max_frequency_deviation_hz,
            summary.zone_band_violations,
            dir.display()
        );
        Ok(())
    }
}

fn cmd_run(c: &Common) -> Result<(), Failure> {
    let study = Study::prepare(c, false)?;
    let (run, breakdown) = study.simulate(study.manifest.scenario)?;
    study.emit(&run, &breakdown, &study.out)
}

fn cmd_compare(c: &Common) -> Result<(), Failure> {
    let study = Study::prepare(c, false)?;
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = Scenario::ALL
            .iter()
            .map(|&sc| {
                let study = &study;
                s.spawn(move || study.simulate(sc))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    });
    let mut rows = Vec::new();
    for (sc, result) in Scenario::ALL.iter().zip(results) {
        let (run, breakdown) = result?;
        study.emit(&run, &breakdown, &study.out.join(format!("scenario-{sc}")))?;
        rows.push((sc.to_string(), breakdown));
    }
    running(fs::create_dir_all(&study.out))?;
    let file = |name: &str| running(fs::File::create(study.out.join(name)));
    running(write_costs_csv(file("costs.csv")?, &rows))?;
    running(write_comparison_csv(file("comparison.csv")?, &rows))?;
    let comparison = Comparison::new(&rows);
    running(serde_json::to_writer_pretty(file("comparison.json")?, &comparison))?;
    for (name, red) in comparison.scenarios.iter().zip(&comparison.reductions).skip(1) {
        if let Some(Some(r)) = red.get("total") {
            println!("total cost reduction I -> {name}: {:.2}%", 100.0 * r);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ReplayReport {
    seed: u64,
    noise_load: f64,
    noise_model: f64,
    substeps: usize,
    nonlinear: bool,
    max_frequency_deviation_hz: f64,
    max_band_excursion_c: f64,
    newton_iterations: usize,
}

fn cmd_validate(c: &Common) -> Result<(), Failure> {
    let study = Study::prepare(c, true)?;
    let (run, breakdown) = study.simulate(study.manifest.scenario)?;
    study.emit(&run, &breakdown, &study.out)?;
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = study
            .replay_seeds
            .iter()
            .map(|&seed| {
                let (study, run) = (&study, &run);
                s.spawn(move || {
                    let config = study.manifest.replay_config(seed);
                    replay_nonlinear(&study.models, run, &config).map(|tr| ReplayReport {
                        seed,
                        noise_load: config.noise.load,
                        noise_model: config.noise.model,
                        substeps: config.substeps,
                        nonlinear: config.nonlinear,
                        max_frequency_deviation_hz: tr.max_frequency_deviation_hz(),
                        max_band_excursion_c: tr.max_band_excursion(&study.models.bounds),
                        newton_iterations: tr.newton_iterations,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("replay thread panicked")).collect()
    });
    let reports: Vec<ReplayReport> = running(results.into_iter().collect::<Result<_, _>>())?;
    for r in &reports {
        println!(
            "replay seed {}: max |df| {:.5} Hz, worst band excursion {:.4} C",
            r.seed, r.max_frequency_deviation_hz, r.max_band_excursion_c
        );
    }
    let file = running(fs::File::create(study.out.join("replay.json")))?;
    running(serde_json::to_writer_pretty(file, &reports))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Compare(c) => cmd_compare(c),
        Command::Validate(c) => cmd_validate(c),
        Command::Selftest => {
            return if selftest::run_all() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILURE) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
