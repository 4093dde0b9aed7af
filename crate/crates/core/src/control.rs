//! Cost functional, Hamiltonian and the Pontryagin optimality system, solved by
//! a relaxed forward-backward sweep.
//!
//! The objective is
//!
//! ```text
//! J(v, u, tau) = int_0^tau [ w1 S + w2 E + w3 A + w4 I + s0/2 u^2 + (sum_i s_i g_i^2)/2 v^2 ] dt + M(tau)
//! ```
//!
//! and the Hamiltonian is the running cost plus the costate-weighted vector
//! field. The adjoint right-hand side is `-dH/dX` written out per compartment;
//! the optimal controls minimize `H` pointwise inside the admissible box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{
    integrate_adjoint_backward, integrate_forward, node_samples, AdjointOptions, AdjointTrajectory,
    AdjointVector, TimeGrid,
};
use crate::model::{
    force, rhs, ControlSignal, ImpulseSchedule, ModelParams, StateVector, Trajectory, A, D, E, I, R, S, V0,
};

/// Terminal penalty `M(tau)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalCost {
    /// `M = 0`.
    None,
    Linear {
        c: f64,
    },
    Quadratic {
        c: f64,
    },
    /// `c (exp(a tau) - 1)`.
    Exponential {
        c: f64,
        a: f64,
    },
}

impl TerminalCost {
    pub fn value(&self, tau: f64) -> f64 {
        match *self {
            TerminalCost::None => 0.0,
            TerminalCost::Linear { c } => c * tau,
            TerminalCost::Quadratic { c } => c * tau * tau,
            TerminalCost::Exponential { c, a } => c * (a * tau).exp_m1(),
        }
    }

    pub fn derivative(&self, tau: f64) -> f64 {
        match *self {
            TerminalCost::None => 0.0,
            TerminalCost::Linear { c } => c,
            TerminalCost::Quadratic { c } => 2.0 * c * tau,
            TerminalCost::Exponential { c, a } => c * a * (a * tau).exp(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let positive = |name: &str, x: f64| {
            (!(x > 0.0 && x.is_finite())).then(|| format!("terminal cost {name} = {x} must be positive"))
        };
        match *self {
            TerminalCost::None => Vec::new(),
            TerminalCost::Linear { c } | TerminalCost::Quadratic { c } => {
                positive("c", c).into_iter().collect()
            }
            TerminalCost::Exponential { c, a } => {
                positive("c", c).into_iter().chain(positive("a", a)).collect()
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            TerminalCost::None => TerminalCost::None,
            TerminalCost::Linear { c } => TerminalCost::Linear { c: c * factor },
            TerminalCost::Quadratic { c } => TerminalCost::Quadratic { c: c * factor },
            TerminalCost::Exponential { c, a } => TerminalCost::Exponential { c: c * factor, a },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    /// Epidemic-cost weights on `S, E, A, I`.
    pub omega: [f64; 4],
    /// Treatment gain.
    pub sigma0: f64,
    /// Per-dose vaccination gains.
    pub sigma: Vec<f64>,
    pub terminal_cost: TerminalCost,
}

impl CostWeights {
    /// Unit epidemic weights, gains of 50 and `M(tau) = tau^2`.
    pub fn default_for(doses: usize) -> Self {
        CostWeights {
            omega: [1.0; 4],
            sigma0: 50.0,
            sigma: vec![50.0; doses],
            terminal_cost: TerminalCost::Quadratic { c: 1.0 },
        }
    }

    /// `sum_i sigma_i gamma_i^2`, the curvature of the cost in `v`.
    pub fn vaccination_gain(&self, params: &ModelParams) -> f64 {
        self.sigma.iter().zip(&params.gamma).map(|(s, g)| s * g * g).sum()
    }

    pub fn violations(&self, params: &ModelParams) -> Vec<String> {
        let mut out = Vec::new();
        if self.omega.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            out.push("omega weights must be finite and non-negative".into());
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            out.push(format!("sigma0 = {} must be positive", self.sigma0));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            out.push("sigma gains must be finite and non-negative".into());
        }
        if self.sigma.len() != params.doses() {
            out.push(format!(
                "sigma has {} entries for {} doses",
                self.sigma.len(),
                params.doses()
            ));
        } else if !(self.vaccination_gain(params) > 0.0) {
            out.push("sum of sigma_i gamma_i^2 must be positive".into());
        }
        out.extend(self.terminal_cost.violations());
        out
    }

    /// Multiplies every weight, gain and the terminal cost by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        CostWeights {
            omega: self.omega.map(|w| w * factor),
            sigma0: self.sigma0 * factor,
            sigma: self.sigma.iter().map(|s| s * factor).collect(),
            terminal_cost: self.terminal_cost.scaled(factor),
        }
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        if !(self.sigma0 > 0.0) {
            return Err(Error::DegenerateWeights(format!("sigma0 = {}", self.sigma0)));
        }
        if self.sigma.len() != params.doses() {
            return Err(Error::Dimension(format!(
                "sigma has {} entries for {} doses",
                self.sigma.len(),
                params.doses()
            )));
        }
        if !(self.vaccination_gain(params) > 0.0) {
            return Err(Error::DegenerateWeights(
                "sum of sigma_i gamma_i^2 is zero".into(),
            ));
        }
        Ok(())
    }
}

#[inline]
fn running_cost_flat(x: &[f64], u: f64, v: f64, weights: &CostWeights, gain: f64) -> f64 {
    let w = &weights.omega;
    w[0] * x[S] + w[1] * x[E] + w[2] * x[A] + w[3] * x[I] + 0.5 * weights.sigma0 * u * u + 0.5 * gain * v * v
}

/// Integrand of the cost functional.
pub fn running_cost(state: &StateVector, u: f64, v: f64, weights: &CostWeights, params: &ModelParams) -> f64 {
    running_cost_flat(state.as_slice(), u, v, weights, weights.vaccination_gain(params))
}

/// Trapezoidal cost over the trajectory samples plus `M(tau)`.
///
/// Pre- and post-jump samples share a time, so the interval left of an impulse
/// uses the pre-jump state and the interval right of it the post-jump state.
pub fn total_cost(
    traj: &Trajectory,
    controls: &ControlSignal,
    weights: &CostWeights,
    params: &ModelParams,
) -> Result<f64> {
    let tau = traj.tau();
    if (controls.tau() - tau).abs() > 1e-9 * tau.max(1.0) || controls.grid()[0] > traj.times()[0] {
        return Err(Error::GridMismatch(format!(
            "controls end at {} but the trajectory ends at {tau}",
            controls.tau()
        )));
    }
    let gain = weights.vaccination_gain(params);
    let g: Vec<f64> = traj
        .times()
        .iter()
        .zip(traj.states())
        .map(|(&t, x)| {
            let (v, u) = controls.at(t);
            running_cost_flat(x.as_slice(), u, v, weights, gain)
        })
        .collect();
    let integral: f64 = traj
        .times()
        .windows(2)
        .zip(g.windows(2))
        .map(|(t, g)| 0.5 * (t[1] - t[0]) * (g[0] + g[1]))
        .sum();
    Ok(integral + weights.terminal_cost.value(tau))
}

/// `-dH/dX` with costates `lam = [p1..p6, q1..qn]`, written into `out`.
pub(crate) fn adjoint_kernel(
    lam: &[f64],
    x: &[f64],
    u: f64,
    v: f64,
    params: &ModelParams,
    weights: &CostWeights,
    out: &mut [f64],
) {
    let n = params.doses();
    let (p1, p2, p3, p4, p5, p6) = (lam[0], lam[1], lam[2], lam[3], lam[4], lam[5]);
    let q = &lam[V0..];
    let w = &weights.omega;
    let beta = params.beta;
    let s = x[S];
    let infect = p1 - p2;

    out[S] = beta * force(x, params) * infect + params.gamma[0] * v * (p1 - q[0]) - w[0];
    out[E] =
        beta * params.epsilon * s * infect + params.k * (p2 - (1.0 - params.z) * p3 - params.z * p4) - w[1];
    out[A] = beta * params.mu * s * infect + params.eta * (p3 - (1.0 - params.p) * p4 - params.p * p5) - w[2];
    out[I] = beta * (1.0 - params.q) * s * infect + u * (p4 - p5) + params.f * (p4 - params.alpha * p5)
        - (1.0 - params.alpha) * params.f * p6
        - w[3];
    out[R] = 0.0;
    out[D] = 0.0;
    for j in 0..n {
        let leak = if params.leaks(j) {
            params.delta[j] * (q[j] - p2)
        } else {
            0.0
        };
        let onward = if j + 1 < n {
            params.gamma[j + 1] * v * (q[j] - q[j + 1])
        } else {
            0.0
        };
        out[V0 + j] = leak + onward;
    }
}

/// Time derivative of the costates along the given state and controls.
pub fn adjoint_rhs(
    adjoint: &AdjointVector,
    state: &StateVector,
    u: f64,
    v: f64,
    params: &ModelParams,
    weights: &CostWeights,
) -> Result<AdjointVector> {
    params.check_state(state)?;
    if adjoint.q.len() != params.doses() {
        return Err(Error::Dimension(format!(
            "adjoint has {} dose costates for {} doses",
            adjoint.q.len(),
            params.doses()
        )));
    }
    let mut out = vec![0.0; state.len()];
    adjoint_kernel(
        &adjoint.to_flat(),
        state.as_slice(),
        u,
        v,
        params,
        weights,
        &mut out,
    );
    Ok(AdjointVector::from_flat(&out))
}

pub fn hamiltonian(
    state: &StateVector,
    adjoint: &AdjointVector,
    u: f64,
    v: f64,
    params: &ModelParams,
    weights: &CostWeights,
) -> Result<f64> {
    params.check_state(state)?;
    let mut dx = vec![0.0; state.len()];
    rhs(state.as_slice(), v, u, params, &mut dx);
    let coupling: f64 = adjoint.to_flat().iter().zip(&dx).map(|(l, d)| l * d).sum();
    Ok(running_cost(state, u, v, weights, params) + coupling)
}

/// Treatment switching function `I (p4 - p5)`.
pub fn treatment_switch(state: &StateVector, adjoint: &AdjointVector) -> f64 {
    state.i() * (adjoint.p[3] - adjoint.p[4])
}

/// Vaccination switching function `W = -(dH/dv - gain v)`.
///
/// `gamma_1 S (p1 - q1) + sum_{i<n} gamma_{i+1} q_i V_i - sum_{i>=2} gamma_i q_i V_{i-1}`.
pub fn vaccination_switch(state: &StateVector, adjoint: &AdjointVector, params: &ModelParams) -> f64 {
    let n = params.doses();
    let (vac, q, g) = (state.v(), &adjoint.q, &params.gamma);
    let mut w = g[0] * state.s() * (adjoint.p[0] - q[0]);
    for i in 0..n.saturating_sub(1) {
        w += g[i + 1] * (q[i] * vac[i] - q[i + 1] * vac[i]);
    }
    w
}

/// `min(max(x, lo), hi)` that refuses NaN.
pub fn clamp(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::NotANumber("control update"));
    }
    Ok(if x <= lo {
        lo
    } else if x >= hi {
        hi
    } else {
        x
    })
}

/// Pointwise minimizer `(u, v)` of the Hamiltonian over the admissible box.
pub fn control_update(
    state: &StateVector,
    adjoint: &AdjointVector,
    params: &ModelParams,
    weights: &CostWeights,
) -> Result<(f64, f64)> {
    weights.check(params)?;
    let u = clamp(treatment_switch(state, adjoint) / weights.sigma0, 0.0, 1.0)?;
    let v = clamp(
        vaccination_switch(state, adjoint, params) / weights.vaccination_gain(params),
        0.0,
        params.v_max(),
    )?;
    Ok((u, v))
}

/// Options of [`fbsm_solve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    /// Weight `theta` of the fresh update in `c <- theta c_new + (1 - theta) c_old`.
    pub relaxation: f64,
    /// Stop once `max |du| + gamma_1 |dv|` over the grid falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub adjoint: AdjointOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            relaxation: 0.5,
            tolerance: 1e-4,
            max_iterations: 500,
            adjoint: AdjointOptions::default(),
        }
    }
}

impl SweepOptions {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            out.push(format!("relaxation = {} outside (0,1]", self.relaxation));
        }
        if !(self.tolerance > 0.0) {
            out.push(format!("tolerance = {} must be positive", self.tolerance));
        }
        if self.max_iterations == 0 {
            out.push("max_iterations must be at least 1".into());
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct OptimalSolution {
    pub controls: ControlSignal,
    pub state_traj: Trajectory,
    pub adjoint_traj: AdjointTrajectory,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `H(tau) + M'(tau)`, set when the horizon itself was optimized.
    pub transversality_residual: Option<f64>,
    /// Cost of the controls fed into each sweep iteration.
    pub cost_history: Vec<f64>,
    pub grid: TimeGrid,
}

/// Interior-node stationarity of the converged controls.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stationarity {
    /// `|sigma0 u - I (p4 - p5)|` at nodes where `0 < u < 1`.
    pub u_residuals: Vec<f64>,
    /// `|gain v - W|` at nodes where `0 < v < 1/gamma_1`.
    pub v_residuals: Vec<f64>,
}

impl OptimalSolution {
    /// `(state, adjoint, u, v)` at every grid node, using post-jump samples.
    fn nodes(&self) -> Result<Vec<(&StateVector, &AdjointVector, f64, f64)>> {
        let idx = node_samples(self.state_traj.times(), &self.grid)?;
        Ok(idx
            .iter()
            .enumerate()
            .map(|(j, &(_, post))| {
                (
                    &self.state_traj.states()[post],
                    &self.adjoint_traj.adjoints[post],
                    self.controls.u()[j],
                    self.controls.v()[j],
                )
            })
            .collect())
    }

    pub fn stationarity(&self, params: &ModelParams, weights: &CostWeights) -> Result<Stationarity> {
        let gain = weights.vaccination_gain(params);
        let v_max = params.v_max();
        let mut out = Stationarity::default();
        for (x, lam, u, v) in self.nodes()? {
            if u > 0.0 && u < 1.0 {
                out.u_residuals
                    .push((weights.sigma0 * u - treatment_switch(x, lam)).abs());
            }
            if v > 0.0 && v < v_max {
                out.v_residuals
                    .push((gain * v - vaccination_switch(x, lam, params)).abs());
            }
        }
        Ok(out)
    }

    /// Adjoint prediction of `dJ` per unit change of each node's `(u, v)` sample.
    ///
    /// Each entry is the trapezoid weight of the node times `(dH/du, dH/dv)`.
    pub fn control_gradient(&self, params: &ModelParams, weights: &CostWeights) -> Result<Vec<(f64, f64)>> {
        control_gradient(
            &self.state_traj,
            &self.adjoint_traj,
            &self.controls,
            params,
            weights,
            &self.grid,
        )
    }
}

/// See [`OptimalSolution::control_gradient`].
pub fn control_gradient(
    traj: &Trajectory,
    adjoint: &AdjointTrajectory,
    controls: &ControlSignal,
    params: &ModelParams,
    weights: &CostWeights,
    grid: &TimeGrid,
) -> Result<Vec<(f64, f64)>> {
    let idx = node_samples(traj.times(), grid)?;
    if controls.len() != idx.len() {
        return Err(Error::GridMismatch(format!(
            "{} control samples for {} grid nodes",
            controls.len(),
            idx.len()
        )));
    }
    let gain = weights.vaccination_gain(params);
    let h = grid.h();
    let last = grid.steps();
    Ok(idx
        .iter()
        .enumerate()
        .map(|(j, &(_, post))| {
            let x = &traj.states()[post];
            let lam = &adjoint.adjoints[post];
            let (u, v) = (controls.u()[j], controls.v()[j]);
            let weight = if j == 0 || j == last { 0.5 * h } else { h };
            (
                weight * (weights.sigma0 * u - treatment_switch(x, lam)),
                weight * (gain * v - vaccination_switch(x, lam, params)),
            )
        })
        .collect())
}

/// Forward-backward sweep on the Pontryagin optimality system with a fixed horizon.
pub fn fbsm_solve(
    initial: &StateVector,
    params: &ModelParams,
    weights: &CostWeights,
    grid: &TimeGrid,
    schedule: Option<&ImpulseSchedule>,
    options: &SweepOptions,
) -> Result<OptimalSolution> {
    weights.check(params)?;
    params.check_state(initial)?;
    let bad = options.violations();
    if !bad.is_empty() {
        return Err(Error::Range(bad.join("; ")));
    }

    let nodes = grid.nodes();
    let theta = options.relaxation;
    let v_max = params.v_max();
    let gamma1 = params.gamma[0];
    let mut u = vec![0.0; nodes.len()];
    let mut v = vec![0.0; nodes.len()];
    let mut cost_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let controls = ControlSignal::new(nodes.clone(), v.clone(), u.clone())?;
        let traj = integrate_forward(initial, &controls, params, grid, schedule)?;
        cost_history.push(total_cost(&traj, &controls, weights, params)?);
        let adj =
            integrate_adjoint_backward(&traj, &controls, params, weights, grid, schedule, options.adjoint)?;
        let samples = node_samples(traj.times(), grid)?;

        let updates = samples
            .iter()
            .map(|&(_, post)| control_update(&traj.states()[post], &adj.adjoints[post], params, weights))
            .collect::<Result<Vec<_>>>()?;
        let change = updates
            .iter()
            .zip(u.iter().zip(&v))
            .map(|(&(un, vn), (&uo, &vo))| (un - uo).abs() + gamma1 * (vn - vo).abs())
            .fold(0.0, f64::max);
        log::trace!(
            "sweep {iterations}: J = {:.6}, change = {change:.3e}",
            cost_history.last().unwrap()
        );
        if change < options.tolerance {
            // The unrelaxed update is within tolerance and sits exactly on the box bounds.
            (u, v) = updates.into_iter().unzip();
            converged = true;
            break;
        }
        for (j, &(un, vn)) in updates.iter().enumerate() {
            u[j] = (theta * un + (1.0 - theta) * u[j]).clamp(0.0, 1.0);
            v[j] = (theta * vn + (1.0 - theta) * v[j]).clamp(0.0, v_max);
        }
    }
    if !converged {
        log::warn!("forward-backward sweep stopped after {iterations} iterations without converging");
    }

    let controls = ControlSignal::new(nodes, v, u)?;
    let state_traj = integrate_forward(initial, &controls, params, grid, schedule)?;
    let adjoint_traj = integrate_adjoint_backward(
        &state_traj,
        &controls,
        params,
        weights,
        grid,
        schedule,
        options.adjoint,
    )?;
    let cost = total_cost(&state_traj, &controls, weights, params)?;
    Ok(OptimalSolution {
        controls,
        state_traj,
        adjoint_traj,
        cost,
        iterations,
        converged,
        transversality_residual: None,
        cost_history,
        grid: *grid,
    })
}

/// `H(tau) + M'(tau)` at the final node of a solution.
pub fn transversality_residual(
    solution: &OptimalSolution,
    params: &ModelParams,
    weights: &CostWeights,
) -> Result<f64> {
    let x = solution.state_traj.final_state();
    let lam = solution.adjoint_traj.adjoints.last().unwrap();
    let tau = solution.state_traj.tau();
    let (v, u) = solution.controls.at(tau);
    Ok(hamiltonian(x, lam, u, v, params, weights)? + weights.terminal_cost.derivative(tau))
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of `f` on `[lo, hi]` down to a bracket of width `tol`.
///
/// Returns the best evaluated point and its value.
pub fn golden_section_minimize<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) || !(tol > 0.0) {
        return Err(Error::Range(format!(
            "bad search interval [{lo}, {hi}] with tol {tol}"
        )));
    }
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    for x in [lo, hi] {
        let fx = f(x)?;
        if fx < best.1 {
            best = (x, fx);
        }
    }
    Ok(best)
}

/// Free-horizon problem: minimizes `tau -> J(v*_tau, u*_tau, tau)` over `tau_range`.
///
/// Each evaluation rebuilds the grid with step `h` and reruns the sweep; impulses
/// at or beyond a trial horizon are dropped for that trial.
pub fn optimize_terminal_time(
    initial: &StateVector,
    params: &ModelParams,
    weights: &CostWeights,
    schedule: Option<&ImpulseSchedule>,
    tau_range: (f64, f64),
    h: f64,
    options: &SweepOptions,
) -> Result<(f64, OptimalSolution)> {
    let (tau_min, tau_max) = tau_range;
    if !(tau_min > 0.0 && tau_min < tau_max && tau_max.is_finite()) {
        return Err(Error::Range(format!(
            "terminal-time range [{tau_min}, {tau_max}] must satisfy 0 < min < max"
        )));
    }
    let solve = |tau: f64| -> Result<OptimalSolution> {
        let grid = TimeGrid::new(tau, h)?;
        let sched = schedule.map(|s| s.truncated(grid.tau() - 0.5 * h));
        let sched = sched.filter(|s| !s.is_empty());
        fbsm_solve(initial, params, weights, &grid, sched.as_ref(), options)
    };
    let objective = |tau: f64| -> Result<f64> {
        let sol = solve(tau)?;
        if !sol.converged {
            log::warn!("sweep did not converge at tau = {tau}");
        }
        log::debug!("J({tau:.4}) = {:.6}", sol.cost);
        Ok(sol.cost)
    };
    let (tau_star, _) = golden_section_minimize(objective, tau_min, tau_max, h)?;
    let mut solution = solve(tau_star)?;
    solution.transversality_residual = Some(transversality_residual(&solution, params, weights)?);
    Ok((solution.grid.tau(), solution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::table1;
    use rand::{Rng, SeedableRng};

    fn random_point(rng: &mut impl Rng, n: usize) -> (ModelParams, StateVector, AdjointVector, f64, f64) {
        let (mut params, _) = table1();
        params.beta = rng.gen_range(0.0..1e-3);
        params.epsilon = rng.gen_range(0.0..1.0);
        params.mu = rng.gen_range(0.0..1.5);
        params.q = rng.gen_range(0.0..1.0);
        params.p = rng.gen_range(0.0..1.0);
        params.z = rng.gen_range(0.0..1.0);
        let mut gamma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        gamma.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut delta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.05)).collect();
        delta.sort_by(|a, b| b.partial_cmp(a).unwrap());
        params.gamma = gamma;
        params.delta = delta;
        params.include_delta_n = rng.gen_bool(0.3);
        let mut vals: Vec<f64> = (0..6 + n).map(|_| rng.gen_range(0.0..1000.0)).collect();
        vals[S] = rng.gen_range(0.0..8000.0);
        let state = StateVector::from_values(vals).unwrap();
        let adj: Vec<f64> = (0..6 + n).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let u = rng.gen_range(0.0..1.0);
        let v = rng.gen_range(0.0..params.v_max());
        (params, state, AdjointVector::from_flat(&adj), u, v)
    }

    fn weights(n: usize) -> CostWeights {
        CostWeights {
            omega: [1.0, 2.0, 3.0, 4.0],
            sigma0: 50.0,
            sigma: vec![50.0; n],
            terminal_cost: TerminalCost::Quadratic { c: 1.0 },
        }
    }

    #[test]
    fn running_cost_examples() {
        let (params, _) = table1();
        let mut w = CostWeights::default_for(2);
        let zero = StateVector::zeros(2);
        assert_eq!(running_cost(&zero, 0.0, 0.0, &w, &params), 0.0);
        let ones = StateVector::new(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, vec![0.0, 0.0]).unwrap();
        assert_eq!(running_cost(&ones, 0.0, 0.0, &w, &params), 4.0);
        w.sigma0 = 50.0;
        assert_eq!(running_cost(&zero, 1.0, 0.0, &w, &params), 25.0);
    }

    #[test]
    fn terminal_cost_family() {
        for m in [
            TerminalCost::Linear { c: 2.0 },
            TerminalCost::Quadratic { c: 0.5 },
            TerminalCost::Exponential { c: 1.0, a: 0.1 },
        ] {
            assert!(m.violations().is_empty());
            for tau in [0.5, 3.0, 20.0] {
                let fd = (m.value(tau + 1e-6) - m.value(tau - 1e-6)) / 2e-6;
                assert!((fd - m.derivative(tau)).abs() < 1e-5 * (1.0 + fd.abs()));
                assert!(m.derivative(tau) > 0.0);
            }
        }
        assert!(!TerminalCost::Linear { c: 0.0 }.violations().is_empty());
    }

    #[test]
    fn zero_adjoint_hamiltonian_is_running_cost() {
        let (params, x0) = table1();
        let w = weights(2);
        let h = hamiltonian(&x0, &AdjointVector::zeros(2), 0.3, 0.2, &params, &w).unwrap();
        assert_eq!(h, running_cost(&x0, 0.3, 0.2, &w, &params));
        let mut zw = w.clone();
        zw.omega = [0.0; 4];
        let lam = AdjointVector::from_flat(&[1.0; 8]);
        assert_eq!(
            hamiltonian(&StateVector::zeros(2), &lam, 0.0, 0.0, &params, &zw).unwrap(),
            0.0
        );
    }

    #[test]
    fn adjoint_rhs_forcing_isolation() {
        let (params, _) = table1();
        let zero = StateVector::zeros(2);
        let mut w = weights(2);
        w.omega = [0.0; 4];
        let d = adjoint_rhs(&AdjointVector::zeros(2), &zero, 0.5, 0.5, &params, &w).unwrap();
        assert!(d.is_zero());
        w.omega = [0.0, 1.0, 0.0, 0.0];
        let d = adjoint_rhs(&AdjointVector::zeros(2), &zero, 0.5, 0.5, &params, &w).unwrap();
        assert_eq!(d.to_flat(), vec![0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn exposed_costate_forms_agree() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let (params, x, lam, u, v) = random_point(&mut rng, 2);
            let w = weights(2);
            let d = adjoint_rhs(&lam, &x, u, v, &params, &w).unwrap();
            let p = lam.p;
            let bes = params.beta * params.epsilon * x.s();
            let k = params.k;
            let expanded = bes * p[0] + (k - bes) * p[1]
                - (1.0 - params.z) * k * p[2]
                - params.z * k * p[3]
                - w.omega[1];
            let grouped =
                bes * (p[0] - p[1]) + k * (p[1] - (1.0 - params.z) * p[2] - params.z * p[3]) - w.omega[1];
            assert!((d.p[1] - expanded).abs() < 1e-12 * (1.0 + expanded.abs()));
            assert!((expanded - grouped).abs() < 1e-12 * (1.0 + grouped.abs()));
        }
    }

    #[test]
    fn adjoint_rhs_is_minus_state_gradient_of_hamiltonian() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for n in [1, 2, 3, 4] {
            for _ in 0..20 {
                let (params, x, lam, u, v) = random_point(&mut rng, n);
                let w = weights(n);
                let d = adjoint_rhs(&lam, &x, u, v, &params, &w).unwrap().to_flat();
                for idx in 0..x.len() {
                    let step = 1e-3;
                    let mut plus = x.as_slice().to_vec();
                    let mut minus = plus.clone();
                    plus[idx] += step;
                    minus[idx] -= step;
                    // H is affine in each single compartment, so central differences are exact
                    let hp = hamiltonian(&StateVector::from_values_unchecked(plus), &lam, u, v, &params, &w)
                        .unwrap();
                    let hm = hamiltonian(
                        &StateVector::from_values_unchecked(minus),
                        &lam,
                        u,
                        v,
                        &params,
                        &w,
                    )
                    .unwrap();
                    let grad = (hp - hm) / (2.0 * step);
                    assert!(
                        (d[idx] + grad).abs() < 1e-6 * (1.0 + grad.abs()),
                        "n = {n}, idx = {idx}: {} vs {}",
                        d[idx],
                        -grad
                    );
                }
            }
        }
    }

    #[test]
    fn hamiltonian_control_derivatives() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for n in [1, 2, 3] {
            for _ in 0..30 {
                let (params, x, lam, u, v) = random_point(&mut rng, n);
                let w = weights(n);
                let e = 1e-4;
                let hu = (hamiltonian(&x, &lam, u + e, v, &params, &w).unwrap()
                    - hamiltonian(&x, &lam, u - e, v, &params, &w).unwrap())
                    / (2.0 * e);
                let analytic = w.sigma0 * u - treatment_switch(&x, &lam);
                assert!(
                    (hu - analytic).abs() < 1e-6 * (1.0 + analytic.abs()),
                    "{hu} vs {analytic}"
                );
                let hv = (hamiltonian(&x, &lam, u, v + e, &params, &w).unwrap()
                    - hamiltonian(&x, &lam, u, v - e, &params, &w).unwrap())
                    / (2.0 * e);
                let analytic = w.vaccination_gain(&params) * v - vaccination_switch(&x, &lam, &params);
                assert!(
                    (hv - analytic).abs() < 1e-6 * (1.0 + analytic.abs()),
                    "{hv} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn control_update_examples() {
        let (params, _) = table1();
        let w = weights(2);
        let x = StateVector::new(100.0, 0.0, 0.0, 100.0, 0.0, 0.0, vec![10.0, 0.0]).unwrap();
        let mut lam = AdjointVector::zeros(2);
        assert_eq!(control_update(&x, &lam, &params, &w).unwrap(), (0.0, 0.0));
        lam.p[3] = 3.0;
        lam.p[4] = 3.0;
        assert_eq!(control_update(&x, &lam, &params, &w).unwrap().0, 0.0);
        lam.p[3] = 2.0;
        lam.p[4] = 0.0;
        assert_eq!(treatment_switch(&x, &lam) / w.sigma0, 4.0);
        assert_eq!(control_update(&x, &lam, &params, &w).unwrap().0, 1.0);

        lam.p[0] = 0.7;
        lam.q = vec![0.2, 0.0];
        let wv = vaccination_switch(&x, &lam, &params);
        assert!((wv - (100.0 * 0.5 + 0.2 * 10.0)).abs() < 1e-12);
        let (_, v) = control_update(&x, &lam, &params, &w).unwrap();
        assert!((v - 52.0 / 100.0).abs() < 1e-12);

        let mut bad = w.clone();
        bad.sigma0 = 0.0;
        assert!(matches!(
            control_update(&x, &lam, &params, &bad),
            Err(Error::DegenerateWeights(_))
        ));
        lam.p[3] = f64::NAN;
        assert!(matches!(
            control_update(&x, &lam, &params, &w),
            Err(Error::NotANumber(_))
        ));
    }

    #[test]
    fn clamp_ties() {
        assert_eq!(clamp(-0.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(clamp(1.0, 0.0, 1.0).unwrap(), 1.0);
        assert!(clamp(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn total_cost_examples() {
        let (params, _) = table1();
        let grid = TimeGrid::new(2.0, 0.01).unwrap();
        let c = ControlSignal::zeros(grid.nodes()).unwrap();
        let times = grid.nodes();
        let x = StateVector::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, vec![0.0, 0.0]).unwrap();
        let traj = Trajectory::new(times.clone(), vec![x; times.len()]).unwrap();
        let w = CostWeights {
            omega: [1.0, 0.0, 0.0, 0.0],
            sigma0: 1.0,
            sigma: vec![1.0; 2],
            terminal_cost: TerminalCost::None,
        };
        assert!((total_cost(&traj, &c, &w, &params).unwrap() - 2.0).abs() < 1e-12);
        let w = CostWeights {
            omega: [0.0; 4],
            terminal_cost: TerminalCost::Quadratic { c: 1.0 },
            ..w
        };
        assert!((total_cost(&traj, &c, &w, &params).unwrap() - 4.0).abs() < 1e-12);
        let short = ControlSignal::zeros(vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            total_cost(&traj, &short, &w, &params),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn zero_weights_give_zero_controls() {
        let (params, x0) = table1();
        let w = CostWeights {
            omega: [0.0; 4],
            sigma0: 50.0,
            sigma: vec![50.0; 2],
            terminal_cost: TerminalCost::None,
        };
        let grid = TimeGrid::new(5.0, 0.05).unwrap();
        let sol = fbsm_solve(&x0, &params, &w, &grid, None, &SweepOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.controls.u().iter().chain(sol.controls.v()).all(|&c| c == 0.0));
        assert_eq!(sol.cost, 0.0);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section_minimize(|x| Ok((x - 1.3) * (x - 1.3) + 2.0), 0.0, 4.0, 1e-6).unwrap();
        assert!((x - 1.3).abs() < 1e-5);
        assert!((fx - 2.0).abs() < 1e-9);
        let (x, _) = golden_section_minimize(|x| Ok(x * x), 1.0, 3.0, 1e-6).unwrap();
        assert_eq!(x, 1.0);
        assert!(golden_section_minimize(Ok, 1.0, 1.0, 1e-3).is_err());
    }

    #[test]
    fn pure_terminal_cost_picks_shortest_horizon() {
        let (params, x0) = table1();
        let w = CostWeights {
            omega: [0.0; 4],
            sigma0: 50.0,
            sigma: vec![50.0; 2],
            terminal_cost: TerminalCost::Quadratic { c: 1.0 },
        };
        let (tau, sol) =
            optimize_terminal_time(&x0, &params, &w, None, (2.0, 6.0), 0.05, &SweepOptions::default())
                .unwrap();
        assert!((tau - 2.0).abs() < 1e-9, "{tau}");
        assert!((sol.cost - 4.0).abs() < 1e-9);
        assert!(sol.transversality_residual.is_some());
        assert!(
            optimize_terminal_time(&x0, &params, &w, None, (6.0, 2.0), 0.05, &SweepOptions::default())
                .is_err()
        );
    }
}
