//! Fixed-step RK4 marching of the state equations and of the adjoint system.
//!
//! Forward runs record every grid node; at an impulse node the pre-jump state is
//! recorded, the jump is applied, and the post-jump state is recorded before the
//! next step. Backward runs use the same sample layout and start from the zero
//! terminal condition.

use serde::{Deserialize, Serialize};

use crate::control::{adjoint_kernel, CostWeights};
use crate::error::{Error, Result};
use crate::model::{
    compartment_name, jump_in_place, population, rhs, ControlSignal, ImpulseRates, ImpulseSchedule,
    ModelParams, StateVector, Trajectory, V0,
};

/// Relative tolerance, in units of `N0`, below which negative compartments are roundoff.
pub const NEGATIVE_CLAMP_TOL: f64 = 1e-9;

/// Uniform grid `0, h, 2h, .., tau`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    h: f64,
    steps: usize,
    requested_tau: f64,
}

impl TimeGrid {
    /// Rounds `tau` to the nearest multiple of `h`; see [`TimeGrid::rounding`].
    pub fn new(tau: f64, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Range(format!("step h = {h} must be positive")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Range(format!("horizon tau = {tau} must be positive")));
        }
        let steps = (tau / h).round().max(1.0) as usize;
        Ok(TimeGrid {
            h,
            steps,
            requested_tau: tau,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.node(self.steps)
    }

    /// Effective minus requested horizon.
    pub fn rounding(&self) -> f64 {
        self.tau() - self.requested_tau
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.node(j)).collect()
    }

    /// Node index of `t` when it lies on the grid (within `1e-6 h`).
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let j = (t / self.h).round();
        if j < 0.0 || j > self.steps as f64 {
            return None;
        }
        let j = j as usize;
        ((t - self.node(j)).abs() <= 1e-6 * self.h).then_some(j)
    }

    /// Impulses keyed by node index; every event must sit on an interior node.
    pub fn impulse_nodes(&self, schedule: Option<&ImpulseSchedule>) -> Result<Vec<(usize, ImpulseRates)>> {
        let Some(schedule) = schedule else {
            return Ok(Vec::new());
        };
        let violations = schedule.violations(self.tau());
        if !violations.is_empty() {
            return Err(Error::Schedule(violations.join("; ")));
        }
        schedule
            .events
            .iter()
            .map(|ev| match self.node_index(ev.t) {
                Some(j) if j > 0 && j < self.steps => Ok((j, ev.lambda)),
                _ => Err(Error::Schedule(format!(
                    "impulse at t = {} is not on an interior node of the h = {} grid",
                    ev.t, self.h
                ))),
            })
            .collect()
    }
}

/// Costates `p1..p6` (for `S, E, A, I, R, D`) and `q1..qn` (for `V1..Vn`).
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointVector {
    pub p: [f64; 6],
    pub q: Vec<f64>,
}

impl AdjointVector {
    pub fn zeros(doses: usize) -> Self {
        AdjointVector {
            p: [0.0; 6],
            q: vec![0.0; doses],
        }
    }

    pub fn from_flat(values: &[f64]) -> Self {
        let mut p = [0.0; 6];
        p.copy_from_slice(&values[..V0]);
        AdjointVector {
            p,
            q: values[V0..].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.p.to_vec();
        out.extend_from_slice(&self.q);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.p.iter().chain(&self.q).all(|&x| x == 0.0)
    }
}

/// Backward solution sampled like the [`Trajectory`] it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointTrajectory {
    pub times: Vec<f64>,
    pub adjoints: Vec<AdjointVector>,
}

impl AdjointTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// How the costates of `S, E, A, I` jump at an impulse node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointImpulse {
    /// `p <- (1 + lambda) p`, the adjoint of the multiplicative state jump.
    #[default]
    Multiplicative,
    /// `p <- p + lambda`.
    Literal,
}

/// State reconstruction at the RK4 half step of the backward sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateInterpolation {
    #[default]
    Linear,
    /// Cubic Hermite using the vector field at both nodes.
    Hermite,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdjointOptions {
    pub impulse: AdjointImpulse,
    pub interpolation: StateInterpolation,
}

fn check_controls(controls: &ControlSignal, params: &ModelParams, grid: &TimeGrid) -> Result<()> {
    controls.check_bounds(params)?;
    let (start, end) = (controls.grid()[0], controls.tau());
    if start > 1e-9 * grid.h() || end < grid.tau() - 1e-6 * grid.h() {
        return Err(Error::GridMismatch(format!(
            "controls cover [{start}, {end}] but the grid spans [0, {}]",
            grid.tau()
        )));
    }
    Ok(())
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(len: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }
}

/// Integrates the controlled dynamics over `grid`, applying the scheduled jumps.
pub fn integrate_forward(
    initial: &StateVector,
    controls: &ControlSignal,
    params: &ModelParams,
    grid: &TimeGrid,
    schedule: Option<&ImpulseSchedule>,
) -> Result<Trajectory> {
    params.validate()?;
    params.check_state(initial)?;
    check_controls(controls, params, grid)?;
    let impulses = grid.impulse_nodes(schedule)?;

    let h = grid.h();
    let tol = NEGATIVE_CLAMP_TOL * population(initial.as_slice());
    let len = initial.len();
    let mut x = initial.as_slice().to_vec();
    let mut ws = Rk4Scratch::new(len);

    let capacity = grid.steps() + 1 + impulses.len();
    let mut times = Vec::with_capacity(capacity);
    let mut states = Vec::with_capacity(capacity);
    times.push(0.0);
    states.push(initial.clone());

    let mut next_impulse = impulses.iter().peekable();
    for j in 0..grid.steps() {
        let t = grid.node(j);
        if let Some((_, lambda)) = next_impulse.next_if(|(node, _)| *node == j) {
            jump_in_place(&mut x, lambda);
            times.push(t);
            states.push(StateVector::from_values_unchecked(x.clone()));
        }

        let (v0, u0) = controls.at(t);
        let (vm, um) = controls.at(t + 0.5 * h);
        let (v1, u1) = controls.at(grid.node(j + 1));

        rhs(&x, v0, u0, params, &mut ws.k1);
        axpy(&mut ws.tmp, &x, 0.5 * h, &ws.k1);
        rhs(&ws.tmp, vm, um, params, &mut ws.k2);
        axpy(&mut ws.tmp, &x, 0.5 * h, &ws.k2);
        rhs(&ws.tmp, vm, um, params, &mut ws.k3);
        axpy(&mut ws.tmp, &x, h, &ws.k3);
        rhs(&ws.tmp, v1, u1, params, &mut ws.k4);
        ws.advance(&mut x, h);

        let t_next = grid.node(j + 1);
        for (idx, xi) in x.iter_mut().enumerate() {
            if !xi.is_finite() || *xi < -tol {
                log::debug!("instability in {} at t = {t_next}", compartment_name(idx));
                return Err(Error::Stability {
                    t: t_next,
                    compartment: idx,
                    value: *xi,
                });
            }
            if *xi < 0.0 {
                *xi = 0.0;
            }
        }
        times.push(t_next);
        states.push(StateVector::from_values_unchecked(x.clone()));
    }

    Trajectory::new(times, states)
}

impl Rk4Scratch {
    /// `x += step / 6 (k1 + 2 k2 + 2 k3 + k4)`.
    #[inline]
    fn advance(&self, x: &mut [f64], step: f64) {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += step / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn axpy(out: &mut [f64], x: &[f64], a: f64, k: &[f64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + a * ki;
    }
}

/// Sample indices `(pre, post)` of every grid node in a trajectory built on `grid`.
pub(crate) fn node_samples(times: &[f64], grid: &TimeGrid) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(grid.steps() + 1);
    let mut idx = 0;
    for j in 0..=grid.steps() {
        let t = grid.node(j);
        let matches = |i: usize| i < times.len() && (times[i] - t).abs() <= 1e-6 * grid.h();
        if !matches(idx) {
            return Err(Error::GridMismatch(format!(
                "trajectory sample {idx} does not sit on grid node t = {t}"
            )));
        }
        let post = if matches(idx + 1) { idx + 1 } else { idx };
        out.push((idx, post));
        idx = post + 1;
    }
    if idx != times.len() {
        return Err(Error::GridMismatch(format!(
            "trajectory has {} samples, grid accounts for {idx}",
            times.len()
        )));
    }
    Ok(out)
}

/// Integrates the costates backward from `p(tau) = q(tau) = 0` along `traj`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_adjoint_backward(
    traj: &Trajectory,
    controls: &ControlSignal,
    params: &ModelParams,
    weights: &CostWeights,
    grid: &TimeGrid,
    schedule: Option<&ImpulseSchedule>,
    options: AdjointOptions,
) -> Result<AdjointTrajectory> {
    params.check_state(traj.initial())?;
    check_controls(controls, params, grid)?;
    let nodes = node_samples(traj.times(), grid)?;
    let impulses = grid.impulse_nodes(schedule)?;
    for &(j, _) in &impulses {
        if nodes[j].0 == nodes[j].1 {
            return Err(Error::GridMismatch(format!(
                "trajectory has no jump at impulse node t = {}",
                grid.node(j)
            )));
        }
    }
    if let Some((j, _)) = nodes
        .iter()
        .enumerate()
        .find(|(j, (pre, post))| pre != post && !impulses.iter().any(|(node, _)| node == j))
    {
        return Err(Error::GridMismatch(format!(
            "trajectory jumps at t = {} but the schedule has no impulse there",
            grid.node(j)
        )));
    }

    let h = grid.h();
    let len = traj.initial().len();
    let states = traj.states();
    let mut lam = vec![0.0; len];
    let mut ws = Rk4Scratch::new(len);
    let mut x_mid = vec![0.0; len];
    let mut f_left = vec![0.0; len];
    let mut f_right = vec![0.0; len];

    let mut samples: Vec<Option<Vec<f64>>> = vec![None; traj.len()];
    let last = nodes[grid.steps()];
    samples[last.0] = Some(lam.clone());

    let mut impulse_at = impulses.iter().rev().peekable();
    for j in (0..grid.steps()).rev() {
        let (t0, t1) = (grid.node(j), grid.node(j + 1));
        let x0 = states[nodes[j].1].as_slice();
        let x1 = states[nodes[j + 1].0].as_slice();
        let (v0, u0) = controls.at(t0);
        let (vm, um) = controls.at(t0 + 0.5 * h);
        let (v1, u1) = controls.at(t1);

        for i in 0..len {
            x_mid[i] = 0.5 * (x0[i] + x1[i]);
        }
        if options.interpolation == StateInterpolation::Hermite {
            rhs(x0, v0, u0, params, &mut f_left);
            rhs(x1, v1, u1, params, &mut f_right);
            for i in 0..len {
                x_mid[i] += h / 8.0 * (f_left[i] - f_right[i]);
            }
        }

        adjoint_kernel(&lam, x1, u1, v1, params, weights, &mut ws.k1);
        axpy(&mut ws.tmp, &lam, -0.5 * h, &ws.k1);
        adjoint_kernel(&ws.tmp, &x_mid, um, vm, params, weights, &mut ws.k2);
        axpy(&mut ws.tmp, &lam, -0.5 * h, &ws.k2);
        adjoint_kernel(&ws.tmp, &x_mid, um, vm, params, weights, &mut ws.k3);
        axpy(&mut ws.tmp, &lam, -h, &ws.k3);
        adjoint_kernel(&ws.tmp, x0, u0, v0, params, weights, &mut ws.k4);
        ws.advance(&mut lam, -h);
        if lam.iter().any(|x| x.is_nan()) {
            return Err(Error::NotANumber("adjoint integration"));
        }

        let (pre, post) = nodes[j];
        samples[post] = Some(lam.clone());
        if let Some((_, lambda)) = impulse_at.next_if(|(node, _)| *node == j) {
            for (slot, rate) in lambda.iter().enumerate() {
                match options.impulse {
                    AdjointImpulse::Multiplicative => lam[slot] *= 1.0 + rate,
                    AdjointImpulse::Literal => lam[slot] += rate,
                }
            }
            samples[pre] = Some(lam.clone());
        }
    }

    let adjoints = samples
        .into_iter()
        .map(|s| AdjointVector::from_flat(&s.expect("every sample visited")))
        .collect();
    Ok(AdjointTrajectory {
        times: traj.times().to_vec(),
        adjoints,
    })
}
