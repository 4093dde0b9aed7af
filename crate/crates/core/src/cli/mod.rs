//! `epictrl simulate|optimize|compare|r0`.
//!
//! Exit codes: 0 on success, 1 on any error, 2 when a sweep stops without
//! converging (its outputs are still written).

pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::control::{fbsm_solve, optimize_terminal_time, total_cost, OptimalSolution};
use crate::error::{Error, Result};
use crate::integrator::integrate_forward;
use crate::model::{basic_reproduction_number, ControlSignal};
use crate::scenarios::{load_config, preset_for, Disease, RunConfig};

use output::{write_adjoints, write_comparison, write_controls, write_trajectory, RunSummary};

/// Reproduction number commonly reported for the covid19 scenario.
pub const REPORTED_COVID19_R0: f64 = 1.52;

pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "epictrl",
    version,
    about = "Optimal vaccination and treatment control for the VS-EIAR epidemic model"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Use a disease preset instead of a config file.
    #[arg(long, global = true, conflicts_with = "config")]
    pub preset: Option<String>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Add the default impulse schedule when the config has none.
    #[arg(long, global = true)]
    pub impulsive: bool,

    /// Reserved; the solver is deterministic.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the model under fixed controls.
    Simulate {
        #[arg(long, value_enum, default_value_t = ControlMode::None)]
        controls: ControlMode,
        /// `t,u,v` CSV used with `--controls file`.
        #[arg(long)]
        controls_file: Option<PathBuf>,
    },
    /// Solve for optimal controls with the forward-backward sweep.
    Optimize {
        /// Also optimize the horizon over `[MIN, MAX]` days.
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
        free_tau: Option<Vec<f64>>,
    },
    /// Optimize several disease presets and merge the trajectories.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "covid19,ebola,influenza")]
        diseases: Vec<String>,
    },
    /// Print the basic reproduction number.
    R0,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ControlMode {
    /// `u = v = 0`.
    None,
    /// `u = 1`, `v = 1/gamma_1`.
    Max,
    /// Samples read from `--controls-file`.
    File,
}

pub fn run(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate {
            controls,
            controls_file,
        } => {
            let config = resolve_config(g)?;
            cmd_simulate(&config, *controls, controls_file.as_deref(), &g.out)
        }
        Command::Optimize { free_tau } => {
            let config = resolve_config(g)?;
            let range = free_tau.as_ref().map(|r| (r[0], r[1]));
            cmd_optimize(&config, range, &g.out)
        }
        Command::Compare { diseases } => {
            let base = match (&g.config, &g.preset) {
                (None, None) => None,
                _ => Some(resolve_config(g)?),
            };
            cmd_compare(diseases, base.as_ref(), g.impulsive, &g.out)
        }
        Command::R0 => {
            let config = resolve_config(g)?;
            let (value, note) = cmd_r0(&config)?;
            println!("R0 = {}", output::format_g(value));
            if let Some(note) = note {
                println!("{note}");
            }
            Ok(EXIT_OK)
        }
    }
}

fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let config = match (&g.config, &g.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => {
            return Err(Error::Parse("one of --config or --preset is required".into()));
        }
    };
    Ok(if g.impulsive && config.impulses().is_none() {
        config.with_default_impulses()
    } else {
        config
    })
}

/// Runs fixed controls and writes `trajectory.csv` and `summary.json`.
pub fn cmd_simulate(
    config: &RunConfig,
    mode: ControlMode,
    controls_file: Option<&Path>,
    out: &Path,
) -> Result<u8> {
    let params = config.model_params();
    let grid = config.time_grid()?;
    let controls = match mode {
        ControlMode::None => ControlSignal::zeros(grid.nodes())?,
        ControlMode::Max => ControlSignal::constant(grid.nodes(), params.v_max(), 1.0)?,
        ControlMode::File => {
            let path = controls_file
                .ok_or_else(|| Error::Parse("--controls file needs --controls-file PATH".into()))?;
            output::read_controls(path)?
        }
    };
    let traj = integrate_forward(&config.initial, &controls, &params, &grid, config.impulses())?;
    let cost = total_cost(&traj, &controls, &config.weights, &params)?;

    std::fs::create_dir_all(out)?;
    write_trajectory(&out.join("trajectory.csv"), &traj, &controls)?;
    RunSummary::from_trajectory(&traj, cost).write(&out.join("summary.json"))?;
    log::info!("simulated {} samples into {}", traj.len(), out.display());
    Ok(EXIT_OK)
}

fn solve(config: &RunConfig, free_tau: Option<(f64, f64)>) -> Result<OptimalSolution> {
    let params = config.model_params();
    let options = config.sweep_options();
    match free_tau {
        None => fbsm_solve(
            &config.initial,
            &params,
            &config.weights,
            &config.time_grid()?,
            config.impulses(),
            &options,
        ),
        Some(range) => {
            let (_, sol) = optimize_terminal_time(
                &config.initial,
                &params,
                &config.weights,
                config.impulses(),
                range,
                config.grid.h,
                &options,
            )?;
            Ok(sol)
        }
    }
}

fn write_solution(sol: &OptimalSolution, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_controls(&out.join("controls.csv"), &sol.controls)?;
    write_trajectory(&out.join("trajectory.csv"), &sol.state_traj, &sol.controls)?;
    write_adjoints(&out.join("adjoints.csv"), &sol.adjoint_traj)?;
    RunSummary::from_solution(sol).write(&out.join("summary.json"))
}

/// Solves the optimality system and writes controls, states, adjoints and summary.
pub fn cmd_optimize(config: &RunConfig, free_tau: Option<(f64, f64)>, out: &Path) -> Result<u8> {
    let sol = solve(config, free_tau)?;
    write_solution(&sol, out)?;
    if sol.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "warning: sweep did not converge after {} iterations",
            sol.iterations
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

/// Optimizes each named preset under the same weights, grid and solver settings.
///
/// `base`, when given, supplies everything except the disease parameters and
/// initial state.
pub fn cmd_compare(names: &[String], base: Option<&RunConfig>, impulsive: bool, out: &Path) -> Result<u8> {
    let diseases = names
        .iter()
        .map(|n| n.parse())
        .collect::<Result<Vec<Disease>>>()?;
    let configs: Vec<RunConfig> = diseases
        .iter()
        .map(|&d| {
            let (params, initial) = preset_for(d);
            let mut cfg = match base {
                Some(b) => RunConfig {
                    params,
                    initial,
                    ..b.clone()
                },
                None => RunConfig::for_disease(d),
            };
            if impulsive && cfg.impulses().is_none() {
                cfg = cfg.with_default_impulses();
            }
            cfg
        })
        .collect();

    let solutions = configs
        .par_iter()
        .map(|cfg| solve(cfg, None))
        .collect::<Result<Vec<_>>>()?;

    std::fs::create_dir_all(out)?;
    for (d, sol) in diseases.iter().zip(&solutions) {
        write_solution(sol, &out.join(d.name()))?;
    }
    let doses = configs[0].params.doses();
    write_comparison(
        &out.join("comparison.csv"),
        diseases
            .iter()
            .zip(&solutions)
            .map(|(d, s)| (d.name(), &s.state_traj, &s.controls)),
        doses,
    )?;
    let all_converged = solutions.iter().all(|s| s.converged);
    Ok(if all_converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

/// `R0` for the config's parameters with `N0` the initial total population.
///
/// For the covid19 preset parameters the returned note points out that the
/// closed form disagrees with the commonly reported value.
pub fn cmd_r0(config: &RunConfig) -> Result<(f64, Option<String>)> {
    let n0 = config.initial.total_population();
    let r0 = basic_reproduction_number(&config.params, n0)?;
    let note = (config.params == preset_for(Disease::Covid19).0).then(|| {
        format!(
            "note: the reference value reported for the covid19 scenario is R0 = {REPORTED_COVID19_R0}; \
             the closed-form expression gives {} for the same inputs (N0 = {})",
            output::format_g(r0),
            output::format_g(n0)
        )
    });
    Ok((r0, note))
}
