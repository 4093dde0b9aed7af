use serde::{Deserialize, Serialize};

use super::{ImpulseRates, ModelParams};
use crate::error::{Error, Result};

/// Sampled vaccination `v(t)` and treatment `u(t)` controls.
///
/// Values between samples are linearly interpolated; outside the grid the end
/// samples are held.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSignal {
    grid: Vec<f64>,
    v: Vec<f64>,
    u: Vec<f64>,
}

impl ControlSignal {
    pub fn new(grid: Vec<f64>, v: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::InvalidControl("grid needs at least two samples".into()));
        }
        if v.len() != grid.len() || u.len() != grid.len() {
            return Err(Error::InvalidControl(format!(
                "grid has {} samples, v has {}, u has {}",
                grid.len(),
                v.len(),
                u.len()
            )));
        }
        if grid.iter().chain(&v).chain(&u).any(|x| x.is_nan()) {
            return Err(Error::NotANumber("control signal"));
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidControl(
                "grid must be finite and strictly increasing".into(),
            ));
        }
        if let Some(bad) = u.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidControl(format!(
                "treatment u = {bad} outside [0,1]"
            )));
        }
        if let Some(bad) = v.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidControl(format!("vaccination v = {bad} negative")));
        }
        Ok(ControlSignal { grid, v, u })
    }

    pub fn constant(grid: Vec<f64>, v: f64, u: f64) -> Result<Self> {
        let len = grid.len();
        Self::new(grid, vec![v; len], vec![u; len])
    }

    pub fn zeros(grid: Vec<f64>) -> Result<Self> {
        Self::constant(grid, 0.0, 0.0)
    }

    /// Checks `v <= 1 / gamma_1` at every sample.
    pub fn check_bounds(&self, params: &ModelParams) -> Result<()> {
        let v_max = params.v_max();
        match self.v.iter().position(|&x| x > v_max) {
            Some(j) => Err(Error::InvalidControl(format!(
                "vaccination v = {} at t = {} exceeds 1/gamma_1 = {v_max}",
                self.v[j], self.grid[j]
            ))),
            None => Ok(()),
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn tau(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// `(v(t), u(t))`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let last = self.grid.len() - 1;
        if t <= self.grid[0] {
            return (self.v[0], self.u[0]);
        }
        if t >= self.grid[last] {
            return (self.v[last], self.u[last]);
        }
        let j = self.grid.partition_point(|&g| g <= t) - 1;
        let w = (t - self.grid[j]) / (self.grid[j + 1] - self.grid[j]);
        (
            self.v[j] + w * (self.v[j + 1] - self.v[j]),
            self.u[j] + w * (self.u[j + 1] - self.u[j]),
        )
    }

    pub(crate) fn into_parts(self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (self.grid, self.v, self.u)
    }
}

/// One immigration event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Impulse {
    pub t: f64,
    /// Relative arrivals into `S, E, A, I`.
    pub lambda: ImpulseRates,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSchedule {
    pub events: Vec<Impulse>,
}

impl ImpulseSchedule {
    pub fn new(events: Vec<Impulse>) -> Self {
        ImpulseSchedule { events }
    }

    /// Impulses every `period` days in `(0, tau)` with identical rates.
    pub fn periodic(period: f64, tau: f64, lambda: ImpulseRates) -> Self {
        let events = (1..)
            .map(|k| k as f64 * period)
            .take_while(|&t| t < tau)
            .map(|t| Impulse { t, lambda })
            .collect();
        ImpulseSchedule { events }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events strictly before `tau`.
    pub fn truncated(&self, tau: f64) -> Self {
        ImpulseSchedule {
            events: self.events.iter().filter(|e| e.t < tau).cloned().collect(),
        }
    }

    pub fn violations(&self, tau: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (k, ev) in self.events.iter().enumerate() {
            if !(ev.t > 0.0 && ev.t < tau) {
                out.push(format!("impulse {k} at t = {} outside (0, {tau})", ev.t));
            }
            if ev.lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
                out.push(format!(
                    "impulse rate out of [0,1] (impulse {k}: {:?})",
                    ev.lambda
                ));
            }
        }
        if self.events.windows(2).any(|w| w[1].t <= w[0].t) {
            out.push("impulse times not strictly increasing".into());
        }
        out
    }
}
