//! Simulation and optimal vaccination/treatment control of the VS-EIAR epidemic
//! model with `n` dose compartments and optional immigration impulses.
//!
//! * [`model`]: state, parameters, vector field, impulse jumps, `R0`.
//! * [`integrator`]: fixed-step RK4 forward and adjoint-backward marching.
//! * [`control`]: cost functional, Hamiltonian, forward-backward sweep, free horizon.
//! * [`oracle`]: brute-force control search and finite-difference gradients.
//! * [`scenarios`]: disease presets and JSON run configs.
//! * [`cli`]: the `epictrl` command line.

// Input checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod error;
pub mod integrator;
pub mod model;
pub mod oracle;
pub mod scenarios;

pub use control::{
    adjoint_rhs, control_update, fbsm_solve, hamiltonian, optimize_terminal_time, running_cost, total_cost,
    CostWeights, OptimalSolution, SweepOptions, TerminalCost,
};
pub use error::{Error, Result};
pub use integrator::{
    integrate_adjoint_backward, integrate_forward, AdjointImpulse, AdjointOptions, AdjointTrajectory,
    AdjointVector, StateInterpolation, TimeGrid,
};
pub use model::{
    apply_impulse, basic_reproduction_number, total_population, transmissibility_force, vector_field,
    ControlSignal, Impulse, ImpulseSchedule, ModelParams, StateDerivative, StateVector, Trajectory,
};
pub use scenarios::{load_config, preset, save_config, validate_config, Disease, RunConfig};
