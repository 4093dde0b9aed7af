use super::{population, StateVector};
use crate::error::{Error, Result};

/// Sampled forward solution.
///
/// Impulse times appear twice: the pre-jump sample followed by the post-jump
/// sample at the same time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<StateVector>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<StateVector>) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(Error::GridMismatch(format!(
                "{} times for {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::GridMismatch("trajectory times decrease".into()));
        }
        Ok(Trajectory { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &StateVector {
        &self.states[0]
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().unwrap()
    }

    pub fn tau(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Total population `N` at every sample.
    pub fn populations(&self) -> Vec<f64> {
        self.states.iter().map(|s| population(s.as_slice())).collect()
    }

    /// `(pre, post)` sample indices of every jump, in time order.
    pub fn jumps(&self) -> Vec<(usize, usize)> {
        self.times
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] == w[1])
            .map(|(idx, _)| (idx, idx + 1))
            .collect()
    }

    /// Values of one compartment across all samples.
    pub fn series(&self, compartment: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.as_slice()[compartment]).collect()
    }
}
