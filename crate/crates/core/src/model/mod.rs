//! Compartment state, epidemiological parameters and the controlled VS-EIAR dynamics.
//!
//! The state is stored as a flat vector `[S, E, A, I, R, D, V1, .., Vn]`. Dose
//! compartments form a chain `S -> V1 -> V2 -> .. -> Vn` driven by the vaccination
//! control `v`; every dose compartment except the last leaks back into `E` at its
//! breakthrough rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod signal;
mod trajectory;

pub use signal::{ControlSignal, Impulse, ImpulseSchedule};
pub use trajectory::Trajectory;

pub const S: usize = 0;
pub const E: usize = 1;
pub const A: usize = 2;
pub const I: usize = 3;
pub const R: usize = 4;
pub const D: usize = 5;
/// Index of the first vaccination compartment.
pub const V0: usize = 6;

pub(crate) const NAMES: [&str; 6] = ["S", "E", "A", "I", "R", "D"];

pub fn compartment_name(idx: usize) -> String {
    if idx < V0 {
        NAMES[idx].to_string()
    } else {
        format!("V{}", idx - V0 + 1)
    }
}

macro_rules! compartment_accessors {
    ($ty:ty) => {
        impl $ty {
            pub fn s(&self) -> f64 {
                self.values[S]
            }
            pub fn e(&self) -> f64 {
                self.values[E]
            }
            pub fn a(&self) -> f64 {
                self.values[A]
            }
            pub fn i(&self) -> f64 {
                self.values[I]
            }
            pub fn r(&self) -> f64 {
                self.values[R]
            }
            pub fn d(&self) -> f64 {
                self.values[D]
            }
            /// Vaccination compartments `V1..Vn`.
            pub fn v(&self) -> &[f64] {
                &self.values[V0..]
            }
            /// Number of dose compartments `n`.
            pub fn doses(&self) -> usize {
                self.values.len() - V0
            }
            pub fn as_slice(&self) -> &[f64] {
                &self.values
            }
            pub fn len(&self) -> usize {
                self.values.len()
            }
            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }
        }
    };
}

/// Compartment populations at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRecord", into = "StateRecord")]
pub struct StateVector {
    values: Vec<f64>,
}

compartment_accessors!(StateVector);

/// Unvalidated compartment record, the on-disk form of [`StateVector`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct StateRecord {
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
}

impl StateRecord {
    pub(crate) fn values(&self) -> Vec<f64> {
        let mut out = vec![self.s, self.e, self.a, self.i, self.r, self.d];
        out.extend(&self.v);
        out
    }
}

impl TryFrom<StateRecord> for StateVector {
    type Error = Error;

    fn try_from(rec: StateRecord) -> Result<Self> {
        StateVector::new(rec.s, rec.e, rec.a, rec.i, rec.r, rec.d, rec.v)
    }
}

impl From<StateVector> for StateRecord {
    fn from(state: StateVector) -> Self {
        StateRecord {
            s: state.s(),
            e: state.e(),
            a: state.a(),
            i: state.i(),
            r: state.r(),
            d: state.d(),
            v: state.v().to_vec(),
        }
    }
}

impl StateVector {
    #[allow(clippy::too_many_arguments)]
    pub fn new(s: f64, e: f64, a: f64, i: f64, r: f64, d: f64, v: Vec<f64>) -> Result<Self> {
        let mut values = vec![s, e, a, i, r, d];
        values.extend(v);
        Self::from_values(values)
    }

    /// Builds a state from the flat `[S, E, A, I, R, D, V1..Vn]` layout.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() <= V0 {
            return Err(Error::InvalidState(format!(
                "need at least one vaccination compartment, got {} values",
                values.len()
            )));
        }
        for (idx, &x) in values.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::InvalidState(format!(
                    "compartment {} = {x} is not a finite non-negative count",
                    compartment_name(idx)
                )));
            }
        }
        Ok(StateVector { values })
    }

    pub(crate) fn from_values_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.len() > V0);
        StateVector { values }
    }

    pub fn zeros(doses: usize) -> Self {
        StateVector {
            values: vec![0.0; V0 + doses.max(1)],
        }
    }

    /// `N = S + E + A + I + R + sum(V)`; deceased are not counted.
    pub fn total_population(&self) -> f64 {
        total_population(self)
    }
}

/// Right-hand side of the state equations, same layout as [`StateVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateDerivative {
    values: Vec<f64>,
}

compartment_accessors!(StateDerivative);

impl StateDerivative {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Epidemiological rates of the model. Rates are per day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub beta: f64,
    pub epsilon: f64,
    pub q: f64,
    pub mu: f64,
    pub k: f64,
    pub z: f64,
    pub p: f64,
    pub eta: f64,
    pub alpha: f64,
    pub f: f64,
    /// Dose-uptake multipliers `gamma_1..gamma_n` on the vaccination control.
    pub gamma: Vec<f64>,
    /// Breakthrough rates `delta_1..delta_n` from dose compartments into `E`.
    pub delta: Vec<f64>,
    /// Also route `delta_n * V_n` from the last dose compartment into `E`.
    #[serde(skip)]
    pub include_delta_n: bool,
}

impl ModelParams {
    pub fn doses(&self) -> usize {
        self.gamma.len()
    }

    /// Upper bound `1 / gamma_1` of the vaccination control.
    pub fn v_max(&self) -> f64 {
        1.0 / self.gamma[0]
    }

    /// Every invariant violation, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let unit = [
            ("beta", self.beta),
            ("q", self.q),
            ("k", self.k),
            ("z", self.z),
            ("p", self.p),
            ("eta", self.eta),
            ("alpha", self.alpha),
            ("f", self.f),
        ];
        for (name, x) in unit {
            if !(0.0..=1.0).contains(&x) {
                out.push(format!("{name} = {x} out of [0,1]"));
            }
        }
        for (name, x) in [("epsilon", self.epsilon), ("mu", self.mu)] {
            if !(x >= 0.0 && x.is_finite()) {
                out.push(format!("{name} = {x} must be finite and non-negative"));
            }
        }
        if self.gamma.is_empty() {
            out.push("gamma must list at least one dose".into());
        }
        if self.gamma.len() != self.delta.len() {
            out.push(format!(
                "gamma has {} entries but delta has {}",
                self.gamma.len(),
                self.delta.len()
            ));
        }
        if self.gamma.first().is_some_and(|&g| !(g > 0.0 && g.is_finite())) {
            out.push("gamma_1 must be positive".into());
        }
        if self.gamma.iter().any(|&g| !(g >= 0.0 && g.is_finite())) {
            out.push("gamma entries must be finite and non-negative".into());
        }
        if self.gamma.windows(2).any(|w| w[0] < w[1]) {
            out.push("gamma not non-increasing".into());
        }
        if self.delta.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            out.push("delta entries must be finite and non-negative".into());
        }
        if self.delta.windows(2).any(|w| w[0] < w[1]) {
            out.push("delta not non-increasing".into());
        }
        if self.gamma.iter().zip(&self.delta).any(|(g, d)| g < d) {
            out.push("gamma_i < delta_i for some dose".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v.join("; ")))
        }
    }

    pub(crate) fn check_state(&self, state: &StateVector) -> Result<()> {
        if state.doses() != self.doses() || self.delta.len() != self.doses() {
            return Err(Error::Dimension(format!(
                "state has {} dose compartments, parameters describe {} (gamma) / {} (delta)",
                state.doses(),
                self.doses(),
                self.delta.len()
            )));
        }
        Ok(())
    }

    /// Whether dose `j` (0-based) leaks into `E`.
    #[inline]
    pub(crate) fn leaks(&self, j: usize) -> bool {
        j + 1 < self.doses() || self.include_delta_n
    }
}

/// Force of infection weight `epsilon E + (1 - q) I + mu A`.
pub fn transmissibility_force(state: &StateVector, params: &ModelParams) -> f64 {
    force(state.as_slice(), params)
}

#[inline]
pub(crate) fn force(x: &[f64], params: &ModelParams) -> f64 {
    params.epsilon * x[E] + (1.0 - params.q) * x[I] + params.mu * x[A]
}

/// Controlled right-hand side for vaccination rate `v` and treatment rate `u`.
pub fn vector_field(state: &StateVector, v: f64, u: f64, params: &ModelParams) -> Result<StateDerivative> {
    params.check_state(state)?;
    let mut values = vec![0.0; state.len()];
    rhs(state.as_slice(), v, u, params, &mut values);
    Ok(StateDerivative { values })
}

/// Unchecked kernel of [`vector_field`]; `x` and `out` share the flat layout.
pub(crate) fn rhs(x: &[f64], v: f64, u: f64, params: &ModelParams, out: &mut [f64]) {
    let n = params.doses();
    let infection = params.beta * force(x, params) * x[S];

    let mut breakthrough = 0.0;
    for j in 0..n {
        let prev = if j == 0 { x[S] } else { x[V0 + j - 1] };
        let inflow = params.gamma[j] * v * prev;
        let onward = if j + 1 < n {
            params.gamma[j + 1] * v * x[V0 + j]
        } else {
            0.0
        };
        let leak = if params.leaks(j) {
            params.delta[j] * x[V0 + j]
        } else {
            0.0
        };
        breakthrough += leak;
        out[V0 + j] = inflow - onward - leak;
    }

    let (k, z, p, eta, f, alpha) = (params.k, params.z, params.p, params.eta, params.f, params.alpha);
    out[S] = -infection - params.gamma[0] * v * x[S];
    out[E] = infection - k * x[E] + breakthrough;
    out[A] = (1.0 - z) * k * x[E] - eta * x[A];
    out[I] = z * k * x[E] + (1.0 - p) * eta * x[A] - f * x[I] - u * x[I];
    out[R] = alpha * f * x[I] + u * x[I] + p * eta * x[A];
    out[D] = (1.0 - alpha) * f * x[I];
}

/// Arrival rates `(lambda_S, lambda_E, lambda_A, lambda_I)` of one impulse.
pub type ImpulseRates = [f64; 4];

/// Instantaneous immigration jump `X <- (1 + lambda) X` on `S, E, A, I`.
pub fn apply_impulse(state: &StateVector, lambda: &ImpulseRates) -> StateVector {
    let mut values = state.as_slice().to_vec();
    jump_in_place(&mut values, lambda);
    StateVector::from_values_unchecked(values)
}

pub(crate) fn jump_in_place(x: &mut [f64], lambda: &ImpulseRates) {
    for (slot, rate) in [S, E, A, I].into_iter().zip(lambda) {
        x[slot] *= 1.0 + rate;
    }
}

pub fn total_population(state: &StateVector) -> f64 {
    population(state.as_slice())
}

#[inline]
pub(crate) fn population(x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .filter(|&(idx, _)| idx != D)
        .map(|(_, v)| v)
        .sum()
}

/// Basic reproduction number `beta N0 (z / (alpha f) + mu (1 - z) / eta)` of the uncontrolled model.
pub fn basic_reproduction_number(params: &ModelParams, n0: f64) -> Result<f64> {
    let af = params.alpha * params.f;
    if af == 0.0 {
        return Err(Error::DegenerateParams(
            "alpha * f = 0, reproduction number undefined".into(),
        ));
    }
    if params.eta == 0.0 {
        return Err(Error::DegenerateParams(
            "eta = 0, reproduction number undefined".into(),
        ));
    }
    Ok(params.beta * n0 * (params.z / af + params.mu * (1.0 - params.z) / params.eta))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn table1() -> (ModelParams, StateVector) {
        let params = ModelParams {
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
        let state = StateVector::new(8000.0, 1000.0, 500.0, 500.0, 0.0, 0.0, vec![0.0, 0.0]).unwrap();
        (params, state)
    }

    fn state(e: f64, a: f64, i: f64) -> StateVector {
        StateVector::new(0.0, e, a, i, 0.0, 0.0, vec![0.0]).unwrap()
    }

    #[test]
    fn force_examples() {
        let (mut params, _) = table1();
        assert_eq!(transmissibility_force(&state(0.0, 0.0, 0.0), &params), 0.0);
        assert_eq!(
            transmissibility_force(&state(1000.0, 500.0, 500.0), &params),
            750.0
        );
        params.epsilon = 1.0;
        params.q = 1.0;
        params.mu = 0.0;
        assert_eq!(transmissibility_force(&state(7.0, 3.0, 9.0), &params), 7.0);
    }

    #[test]
    fn zero_state_is_equilibrium() {
        let (params, _) = table1();
        let d = vector_field(&StateVector::zeros(2), 0.7, 0.3, &params).unwrap();
        assert!(d.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn table1_derivatives() {
        let (params, x0) = table1();
        let d = vector_field(&x0, 0.0, 0.0, &params).unwrap();
        assert!((d.s() + 3000.0).abs() < 1e-9);
        assert!((d.d() - 0.75).abs() < 1e-12);
        // N excludes D: dN/dt = (alpha - 1) f I; with D the sum vanishes
        let dn: f64 = d.sum() - d.d();
        assert!((dn + 0.75).abs() < 1e-9, "{dn}");
        assert!(d.sum().abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (params, _) = table1();
        let err = vector_field(&StateVector::zeros(3), 0.0, 0.0, &params).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn single_dose_chain_is_absorbing() {
        let (mut params, _) = table1();
        params.gamma = vec![1.0];
        params.delta = vec![0.1];
        let x = StateVector::new(100.0, 0.0, 0.0, 0.0, 0.0, 0.0, vec![10.0]).unwrap();
        let d = vector_field(&x, 0.5, 0.0, &params).unwrap();
        assert_eq!(d.v()[0], 50.0);
        assert_eq!(d.e(), 0.0);
        params.include_delta_n = true;
        let d = vector_field(&x, 0.5, 0.0, &params).unwrap();
        assert_eq!(d.v()[0], 49.0);
        assert_eq!(d.e(), 1.0);
    }

    #[test]
    fn three_dose_chain() {
        let (mut params, _) = table1();
        params.gamma = vec![1.0, 0.8, 0.5];
        params.delta = vec![0.01, 0.005, 0.001];
        let x = StateVector::new(100.0, 0.0, 0.0, 0.0, 0.0, 0.0, vec![10.0, 20.0, 30.0]).unwrap();
        let d = vector_field(&x, 0.5, 0.0, &params).unwrap();
        assert!((d.v()[0] - (50.0 - 4.0 - 0.1)).abs() < 1e-12);
        assert!((d.v()[1] - (4.0 - 5.0 - 0.1)).abs() < 1e-12);
        assert!((d.v()[2] - 5.0).abs() < 1e-12);
        assert!((d.e() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn impulse_examples() {
        let x = StateVector::new(100.0, 5.0, 6.0, 7.0, 8.0, 9.0, vec![1.0, 2.0]).unwrap();
        assert_eq!(apply_impulse(&x, &[0.0; 4]), x);
        let y = apply_impulse(&x, &[0.1, 0.0, 0.0, 0.0]);
        assert!((y.s() - 110.0).abs() < 1e-12);
        assert_eq!(&y.as_slice()[1..], &x.as_slice()[1..]);

        let x = StateVector::new(50.0, 50.0, 50.0, 50.0, 1.0, 2.0, vec![3.0]).unwrap();
        let y = apply_impulse(&x, &[1.0; 4]);
        assert_eq!(&y.as_slice()[..4], &[100.0; 4]);
        assert_eq!(&y.as_slice()[4..], &x.as_slice()[4..]);
    }

    #[test]
    fn population_examples() {
        assert_eq!(total_population(&StateVector::zeros(2)), 0.0);
        let (_, x0) = table1();
        assert_eq!(total_population(&x0), 10000.0);
        let x = StateVector::new(1.0, 0.0, 0.0, 0.0, 0.0, 99.0, vec![0.0]).unwrap();
        assert_eq!(total_population(&x), 1.0);
    }

    #[test]
    fn reproduction_number_examples() {
        let (mut params, _) = table1();
        let r0 = basic_reproduction_number(&params, 1e4).unwrap();
        assert!((r0 - 5.0 * (0.1 / 0.2985 + 0.9 / 0.3)).abs() < 1e-12, "{r0}");
        assert!((r0 - 16.675).abs() < 1e-3);
        params.z = 1.0;
        let r0 = basic_reproduction_number(&params, 1e4).unwrap();
        assert!((r0 - 5.0 / (0.995 * 0.3)).abs() < 1e-12);
        params.beta = 0.0;
        assert_eq!(basic_reproduction_number(&params, 1e4).unwrap(), 0.0);
        params.eta = 0.0;
        assert!(matches!(
            basic_reproduction_number(&params, 1e4),
            Err(Error::DegenerateParams(_))
        ));
    }

    #[test]
    fn params_violations() {
        let (mut params, _) = table1();
        assert!(params.violations().is_empty());
        params.gamma = vec![1.0, 2.0];
        assert!(params
            .violations()
            .iter()
            .any(|v| v == "gamma not non-increasing"));
        params.gamma = vec![1.0, 1.0];
        params.delta = vec![0.0, 1e-3];
        assert!(params
            .violations()
            .iter()
            .any(|v| v == "delta not non-increasing"));
    }

    #[test]
    fn negative_state_rejected() {
        assert!(StateVector::new(-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, vec![0.0]).is_err());
        assert!(StateVector::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, vec![]).is_err());
    }
}
