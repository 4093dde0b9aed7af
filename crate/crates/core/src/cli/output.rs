//! CSV and summary writers. Every number goes through [`format_g`], so identical
//! runs produce byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::OptimalSolution;
use crate::error::Result;
use crate::integrator::AdjointTrajectory;
use crate::model::{ControlSignal, Trajectory, A, E, I, S};

/// `%.12g`-style formatting: 12 significant digits, trailing zeros removed.
pub fn format_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..12).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (11 - exp) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn state_header(doses: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "S", "E", "A", "I", "R", "D"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=doses).map(|i| format!("V{i}")));
    h
}

fn state_row(t: f64, values: &[f64], controls: &ControlSignal) -> Vec<String> {
    let (v, u) = controls.at(t);
    std::iter::once(t)
        .chain(values.iter().copied())
        .chain([u, v])
        .map(format_g)
        .collect()
}

/// `t,S,E,A,I,R,D,V1..Vn,u,v`; impulse times appear on two rows.
pub fn write_trajectory(path: &Path, traj: &Trajectory, controls: &ControlSignal) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = state_header(traj.initial().doses());
    header.extend(["u".to_string(), "v".to_string()]);
    w.write_record(&header)?;
    for (t, x) in traj.times().iter().zip(traj.states()) {
        w.write_record(state_row(*t, x.as_slice(), controls))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of several trajectories keyed by a label column.
pub fn write_comparison<'a>(
    path: &Path,
    runs: impl IntoIterator<Item = (&'a str, &'a Trajectory, &'a ControlSignal)>,
    doses: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["disease".to_string()];
    header.extend(state_header(doses));
    header.extend(["u".to_string(), "v".to_string()]);
    w.write_record(&header)?;
    for (label, traj, controls) in runs {
        for (t, x) in traj.times().iter().zip(traj.states()) {
            let mut row = vec![label.to_string()];
            row.extend(state_row(*t, x.as_slice(), controls));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_controls(path: &Path, controls: &ControlSignal) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "u", "v"])?;
    for ((t, u), v) in controls.grid().iter().zip(controls.u()).zip(controls.v()) {
        w.write_record([format_g(*t), format_g(*u), format_g(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_adjoints(path: &Path, adjoint: &AdjointTrajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let doses = adjoint.adjoints.first().map_or(0, |a| a.q.len());
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=6).map(|i| format!("p{i}")));
    header.extend((1..=doses).map(|i| format!("q{i}")));
    w.write_record(&header)?;
    for (t, a) in adjoint.times.iter().zip(&adjoint.adjoints) {
        let row: Vec<String> = std::iter::once(*t).chain(a.to_flat()).map(format_g).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `t,u,v` samples written by [`write_controls`].
pub fn read_controls(path: &Path) -> Result<ControlSignal> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut t, mut u, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.deserialize() {
        let (ti, ui, vi): (f64, f64, f64) = rec?;
        t.push(ti);
        u.push(ui);
        v.push(vi);
    }
    ControlSignal::new(t, v, u)
}

/// Headline numbers of one run, recomputable from `trajectory.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tau: f64,
    pub final_n: f64,
    pub final_d: f64,
    pub peak_i: f64,
    pub peak_a: f64,
    /// First day `S` drops below 1% of its initial value.
    pub day_s_below_1pct: Option<f64>,
    pub day_e_below_1pct: Option<f64>,
    pub day_i_below_1pct: Option<f64>,
    pub final_vn: f64,
    pub final_r: f64,
    pub cost: f64,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub transversality_residual: Option<f64>,
}

fn first_below(traj: &Trajectory, compartment: usize) -> Option<f64> {
    let threshold = 0.01 * traj.initial().as_slice()[compartment];
    traj.times()
        .iter()
        .zip(traj.states())
        .find(|(_, x)| x.as_slice()[compartment] < threshold)
        .map(|(t, _)| *t)
}

impl RunSummary {
    pub fn from_trajectory(traj: &Trajectory, cost: f64) -> Self {
        let last = traj.final_state();
        let peak = |c: usize| traj.states().iter().map(|x| x.as_slice()[c]).fold(0.0, f64::max);
        RunSummary {
            tau: traj.tau(),
            final_n: last.total_population(),
            final_d: last.d(),
            peak_i: peak(I),
            peak_a: peak(A),
            day_s_below_1pct: first_below(traj, S),
            day_e_below_1pct: first_below(traj, E),
            day_i_below_1pct: first_below(traj, I),
            final_vn: *last.as_slice().last().unwrap_or(&0.0),
            final_r: last.r(),
            cost,
            iterations: None,
            converged: None,
            transversality_residual: None,
        }
    }

    pub fn from_solution(sol: &OptimalSolution) -> Self {
        RunSummary {
            iterations: Some(sol.iterations),
            converged: Some(sol.converged),
            transversality_residual: sol.transversality_residual,
            ..Self::from_trajectory(&sol.state_traj, sol.cost)
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("summary serializes");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
