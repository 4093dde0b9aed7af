//! Disease presets and JSON run configurations.
//!
//! A config file has exactly the top-level keys `params`, `initial`, `weights`,
//! `grid`, `schedule`, `solver` and `flags`; unknown keys anywhere are rejected.
//! Loading reports every invariant violation at once instead of stopping at the
//! first one.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::{CostWeights, SweepOptions};
use crate::error::{Error, Result};
use crate::integrator::{AdjointImpulse, AdjointOptions, StateInterpolation, TimeGrid};
use crate::model::{ImpulseSchedule, ModelParams, StateRecord, StateVector, V0};

/// Period of the demonstration impulse schedule, in days.
pub const DEFAULT_IMPULSE_PERIOD: f64 = 7.0;
/// Arrival rates of the demonstration impulse schedule.
pub const DEFAULT_IMPULSE_RATES: [f64; 4] = [0.05; 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Disease {
    Covid19,
    Ebola,
    Influenza,
}

impl Disease {
    pub const ALL: [Disease; 3] = [Disease::Covid19, Disease::Ebola, Disease::Influenza];

    pub fn name(&self) -> &'static str {
        match self {
            Disease::Covid19 => "covid19",
            Disease::Ebola => "ebola",
            Disease::Influenza => "influenza",
        }
    }
}

impl fmt::Display for Disease {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Disease {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "covid19" | "covid-19" | "covid" => Ok(Disease::Covid19),
            "ebola" => Ok(Disease::Ebola),
            "influenza" | "flu" => Ok(Disease::Influenza),
            _ => Err(Error::UnknownPreset(s.to_string())),
        }
    }
}

/// Parameters and initial state of a named disease.
///
/// Ebola and influenza share the COVID-19 breakthrough rates, second-dose uptake
/// and initial state; only their disease-progression rates differ.
pub fn preset(disease: &str) -> Result<(ModelParams, StateVector)> {
    Ok(preset_for(disease.parse()?))
}

pub fn preset_for(disease: Disease) -> (ModelParams, StateVector) {
    let covid = ModelParams {
        beta: 5e-4,
        epsilon: 0.0,
        q: 0.5,
        mu: 1.0,
        k: 0.54,
        z: 0.1,
        p: 0.02,
        eta: 0.3,
        alpha: 0.995,
        f: 0.3,
        gamma: vec![1.0, 1.0],
        delta: vec![5e-4, 0.0],
        include_delta_n: false,
    };
    let params = match disease {
        Disease::Covid19 => covid,
        Disease::Ebola => ModelParams {
            z: 0.76,
            eta: 0.178,
            k: 0.0023,
            alpha: 0.26,
            p: 0.02,
            f: 0.178,
            ..covid
        },
        Disease::Influenza => ModelParams {
            z: 0.667,
            eta: 0.244,
            k: 0.526,
            alpha: 0.98,
            p: 0.9,
            f: 0.244,
            ..covid
        },
    };
    let initial = StateVector::new(8000.0, 1000.0, 500.0, 500.0, 0.0, 0.0, vec![0.0, 0.0])
        .expect("preset initial state is valid");
    (params, initial)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub tau: f64,
    #[serde(default = "default_step")]
    pub h: f64,
}

fn default_step() -> f64 {
    0.01
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { tau: 35.0, h: 0.01 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub relaxation: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub interpolation: StateInterpolation,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SweepOptions::default();
        SolverSpec {
            relaxation: d.relaxation,
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            interpolation: StateInterpolation::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub adjoint_impulse: AdjointImpulse,
    /// Route the last dose compartment's breakthrough `delta_n V_n` into `E`.
    pub include_delta_n: bool,
}

/// One failed invariant, tagged with the config field it concerns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Violation {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Everything needed for a simulation or optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ModelParams,
    pub initial: StateVector,
    pub weights: CostWeights,
    pub grid: GridSpec,
    #[serde(default)]
    pub schedule: Option<ImpulseSchedule>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub flags: Flags,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    params: ModelParams,
    initial: StateRecord,
    weights: CostWeights,
    grid: GridSpec,
    #[serde(default)]
    schedule: Option<ImpulseSchedule>,
    #[serde(default)]
    solver: SolverSpec,
    #[serde(default)]
    flags: Flags,
}

impl RunConfig {
    /// Default run for a disease: 35 days, `h = 0.01`, default weights, no impulses.
    pub fn for_disease(disease: Disease) -> Self {
        let (params, initial) = preset_for(disease);
        RunConfig {
            weights: CostWeights::default_for(params.doses()),
            params,
            initial,
            grid: GridSpec::default(),
            schedule: None,
            solver: SolverSpec::default(),
            flags: Flags::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(Self::for_disease(name.parse()?))
    }

    /// Adds the demonstration schedule: impulses every 7 days at 5% arrivals.
    pub fn with_default_impulses(mut self) -> Self {
        self.schedule = Some(ImpulseSchedule::periodic(
            DEFAULT_IMPULSE_PERIOD,
            self.grid.tau,
            DEFAULT_IMPULSE_RATES,
        ));
        self
    }

    /// Parameters with the config flags applied.
    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            include_delta_n: self.flags.include_delta_n,
            ..self.params.clone()
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.tau, self.grid.h)
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            relaxation: self.solver.relaxation,
            tolerance: self.solver.tolerance,
            max_iterations: self.solver.max_iterations,
            adjoint: AdjointOptions {
                impulse: self.flags.adjoint_impulse,
                interpolation: self.solver.interpolation,
            },
        }
    }

    /// Schedule, with an empty event list treated as none.
    pub fn impulses(&self) -> Option<&ImpulseSchedule> {
        self.schedule.as_ref().filter(|s| !s.is_empty())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let violations = collect_violations(
            &raw.params,
            &raw.initial.values(),
            &raw.weights,
            &raw.grid,
            raw.schedule.as_ref(),
            &raw.solver,
        );
        if !violations.is_empty() {
            return Err(Error::InvalidConfig(violations));
        }
        Ok(RunConfig {
            params: raw.params,
            initial: StateVector::from_values(raw.initial.values())?,
            weights: raw.weights,
            grid: raw.grid,
            schedule: raw.schedule,
            solver: raw.solver,
            flags: raw.flags,
        })
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_json(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_config(config: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    let mut text = config.to_json();
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Every invariant the config breaks; empty when valid.
pub fn validate_config(config: &RunConfig) -> Vec<Violation> {
    collect_violations(
        &config.params,
        config.initial.as_slice(),
        &config.weights,
        &config.grid,
        config.schedule.as_ref(),
        &config.solver,
    )
}

fn collect_violations(
    params: &ModelParams,
    initial: &[f64],
    weights: &CostWeights,
    grid: &GridSpec,
    schedule: Option<&ImpulseSchedule>,
    solver: &SolverSpec,
) -> Vec<Violation> {
    let mut out: Vec<Violation> = params
        .violations()
        .into_iter()
        .map(|m| Violation::new("params", m))
        .collect();

    for (idx, &x) in initial.iter().enumerate() {
        if !(x >= 0.0 && x.is_finite()) {
            let name = crate::model::compartment_name(idx);
            out.push(Violation::new(
                "initial",
                format!("{name} = {x} must be a non-negative count"),
            ));
        }
    }
    let doses = initial.len().saturating_sub(V0);
    if doses == 0 {
        out.push(Violation::new(
            "initial",
            "V must list at least one dose compartment",
        ));
    } else if doses != params.doses() {
        out.push(Violation::new(
            "initial",
            format!(
                "V has {doses} entries but gamma describes {} doses",
                params.doses()
            ),
        ));
    }

    if !params.gamma.is_empty() {
        out.extend(
            weights
                .violations(params)
                .into_iter()
                .map(|m| Violation::new("weights", m)),
        );
    }

    let grid_ok = grid.h > 0.0 && grid.h.is_finite() && grid.tau > 0.0 && grid.tau.is_finite();
    if !(grid.h > 0.0 && grid.h.is_finite()) {
        out.push(Violation::new("grid", format!("h = {} must be positive", grid.h)));
    }
    if !(grid.tau > 0.0 && grid.tau.is_finite()) {
        out.push(Violation::new(
            "grid",
            format!("tau = {} must be positive", grid.tau),
        ));
    }

    if let Some(schedule) = schedule {
        let tau = if grid_ok {
            (grid.tau / grid.h).round() * grid.h
        } else {
            grid.tau
        };
        out.extend(
            schedule
                .violations(tau)
                .into_iter()
                .map(|m| Violation::new("schedule", m)),
        );
        if grid_ok {
            let tg = TimeGrid::new(grid.tau, grid.h).expect("grid checked above");
            for (k, ev) in schedule.events.iter().enumerate() {
                if tg.node_index(ev.t).is_none() {
                    out.push(Violation::new(
                        "schedule",
                        format!("impulse {k} at t = {} is not on the h = {} grid", ev.t, grid.h),
                    ));
                }
            }
        }
    }

    let opts = SweepOptions {
        relaxation: solver.relaxation,
        tolerance: solver.tolerance,
        max_iterations: solver.max_iterations,
        adjoint: AdjointOptions::default(),
    };
    out.extend(opts.violations().into_iter().map(|m| Violation::new("solver", m)));
    out
}
