//! Independent checks of the sweep: exhaustive search over piecewise-constant
//! controls, and central finite differences of the cost.
//!
//! Neither routine touches the adjoint system; both only integrate forward and
//! evaluate [`total_cost`].

use rayon::prelude::*;

use crate::control::{total_cost, CostWeights};
use crate::error::{Error, Result};
use crate::integrator::{integrate_forward, TimeGrid};
use crate::model::{ControlSignal, ImpulseSchedule, ModelParams, StateVector};

/// Largest number of control combinations the oracle will enumerate.
pub const MAX_CANDIDATES: f64 = 1e7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    /// Horizon in days.
    pub horizon: f64,
    /// Number of equal-length intervals with constant controls.
    pub segments: usize,
    /// Evenly spaced treatment levels covering `[0, 1]`.
    pub u_levels: usize,
    /// Evenly spaced vaccination levels covering `[0, 1/gamma_1]`.
    pub v_levels: usize,
    /// Integration step.
    pub h: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            horizon: 5.0,
            segments: 5,
            u_levels: 3,
            v_levels: 3,
            h: 0.01,
        }
    }
}

impl OracleConfig {
    pub fn candidates(&self) -> f64 {
        ((self.u_levels * self.v_levels) as f64).powi(self.segments as i32)
    }
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub cost: f64,
    pub controls: ControlSignal,
    /// Chosen `(u, v)` level per segment.
    pub segments: Vec<(f64, f64)>,
    pub evaluated: usize,
}

fn levels(count: usize, hi: f64) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count).map(|i| hi * i as f64 / (count - 1) as f64).collect()
}

/// Node samples of a piecewise-constant control on `grid`.
fn piecewise(grid: &TimeGrid, pieces: &[(f64, f64)]) -> Result<ControlSignal> {
    let seg_len = grid.tau() / pieces.len() as f64;
    let nodes = grid.nodes();
    let (mut u, mut v) = (Vec::with_capacity(nodes.len()), Vec::with_capacity(nodes.len()));
    for &t in &nodes {
        let seg = ((t / seg_len + 1e-9) as usize).min(pieces.len() - 1);
        u.push(pieces[seg].0);
        v.push(pieces[seg].1);
    }
    ControlSignal::new(nodes, v, u)
}

/// Minimum cost over every piecewise-constant `(u, v)` on the level grid.
pub fn brute_force_optimum(
    initial: &StateVector,
    params: &ModelParams,
    weights: &CostWeights,
    config: &OracleConfig,
) -> Result<OracleResult> {
    let candidates = config.candidates();
    if config.segments == 0 || config.u_levels == 0 || config.v_levels == 0 {
        return Err(Error::Range(
            "oracle needs at least one segment and one level".into(),
        ));
    }
    if candidates > MAX_CANDIDATES {
        return Err(Error::ExplosionGuard {
            candidates,
            limit: MAX_CANDIDATES,
        });
    }
    params.validate()?;
    let grid = TimeGrid::new(config.horizon, config.h)?;
    let us = levels(config.u_levels, 1.0);
    let vs = levels(config.v_levels, params.v_max());
    let per_segment = config.u_levels * config.v_levels;
    let decode = |mut code: usize| -> Vec<(f64, f64)> {
        (0..config.segments)
            .map(|_| {
                let digit = code % per_segment;
                code /= per_segment;
                (us[digit % config.u_levels], vs[digit / config.u_levels])
            })
            .collect()
    };

    let total = candidates as usize;
    let (cost, code) = (0..total)
        .into_par_iter()
        .map(|code| -> Result<(f64, usize)> {
            let controls = piecewise(&grid, &decode(code))?;
            let traj = integrate_forward(initial, &controls, params, &grid, None)?;
            Ok((total_cost(&traj, &controls, weights, params)?, code))
        })
        .try_reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| {
                Ok(if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                })
            },
        )?;

    let pieces = decode(code);
    Ok(OracleResult {
        cost,
        controls: piecewise(&grid, &pieces)?,
        segments: pieces,
        evaluated: total,
    })
}

/// Which control a finite-difference bump perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlKind {
    Treatment,
    Vaccination,
}

/// Central difference `(J(c + eps phi) - J(c - eps phi)) / (2 eps)` for a hat bump
/// `phi` on grid node `cell`.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_gradient(
    initial: &StateVector,
    params: &ModelParams,
    weights: &CostWeights,
    grid: &TimeGrid,
    schedule: Option<&ImpulseSchedule>,
    controls: &ControlSignal,
    cell: usize,
    kind: ControlKind,
    epsilon: f64,
) -> Result<f64> {
    if controls.len() != grid.steps() + 1 {
        return Err(Error::GridMismatch(format!(
            "{} control samples for {} grid nodes",
            controls.len(),
            grid.steps() + 1
        )));
    }
    if cell >= controls.len() {
        return Err(Error::Range(format!("cell {cell} outside the grid")));
    }
    let (base, hi) = match kind {
        ControlKind::Treatment => (controls.u()[cell], 1.0),
        ControlKind::Vaccination => (controls.v()[cell], params.v_max()),
    };
    if !(epsilon > 0.0) || base - epsilon < 0.0 || base + epsilon > hi {
        return Err(Error::BoxViolation(format!(
            "{kind:?} sample {base} +/- {epsilon} leaves [0, {hi}] at node {cell}"
        )));
    }
    let cost_with = |delta: f64| -> Result<f64> {
        let (grid_t, mut v, mut u) = controls.clone().into_parts();
        match kind {
            ControlKind::Treatment => u[cell] += delta,
            ControlKind::Vaccination => v[cell] += delta,
        }
        let perturbed = ControlSignal::new(grid_t, v, u)?;
        let traj = integrate_forward(initial, &perturbed, params, grid, schedule)?;
        total_cost(&traj, &perturbed, weights, params)
    };
    Ok((cost_with(epsilon)? - cost_with(-epsilon)?) / (2.0 * epsilon))
}
