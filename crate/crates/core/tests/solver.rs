use epictrl_core::control::{fbsm_solve, golden_section_minimize, optimize_terminal_time, SweepOptions};
use epictrl_core::oracle::{brute_force_optimum, finite_difference_gradient, ControlKind, OracleConfig};
use epictrl_core::{
    integrate_adjoint_backward, integrate_forward, AdjointOptions, ControlSignal, CostWeights, Disease,
    ModelParams, RunConfig, StateInterpolation, StateVector, TimeGrid,
};

fn table1() -> (ModelParams, StateVector, CostWeights) {
    let cfg = RunConfig::for_disease(Disease::Covid19);
    (cfg.params, cfg.initial, cfg.weights)
}

fn solve(tau: f64, h: f64, weights: &CostWeights) -> epictrl_core::OptimalSolution {
    let (params, x0, _) = table1();
    let grid = TimeGrid::new(tau, h).unwrap();
    fbsm_solve(&x0, &params, weights, &grid, None, &SweepOptions::default()).unwrap()
}

#[test]
fn single_segment_bang_bang_oracle() {
    let (params, x0, w) = table1();
    let cfg = OracleConfig {
        horizon: 2.0,
        segments: 1,
        u_levels: 2,
        v_levels: 2,
        h: 0.01,
    };
    let best = brute_force_optimum(&x0, &params, &w, &cfg).unwrap();
    assert_eq!(best.evaluated, 4);
    let sol = solve(2.0, 0.01, &w);
    assert!(sol.converged);
    assert!(sol.cost <= 1.05 * best.cost, "{} vs {}", sol.cost, best.cost);
}

#[test]
fn finer_levels_never_raise_the_minimum() {
    let (params, x0, w) = table1();
    let coarse = OracleConfig {
        horizon: 2.0,
        segments: 2,
        u_levels: 3,
        v_levels: 2,
        h: 0.02,
    };
    let fine = OracleConfig {
        u_levels: 5,
        ..coarse
    };
    let more_segments = OracleConfig {
        segments: 4,
        ..coarse
    };
    let j = |c: &OracleConfig| brute_force_optimum(&x0, &params, &w, c).unwrap().cost;
    let base = j(&coarse);
    assert!(j(&fine) <= base);
    assert!(j(&more_segments) <= base);
}

#[test]
fn central_difference_error_shrinks_quadratically() {
    let (params, x0, w) = table1();
    let grid = TimeGrid::new(5.0, 0.01).unwrap();
    let c = ControlSignal::constant(grid.nodes(), 0.5, 0.5).unwrap();
    for kind in [ControlKind::Treatment, ControlKind::Vaccination] {
        let g: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&eps| {
                finite_difference_gradient(&x0, &params, &w, &grid, None, &c, 120, kind, eps).unwrap()
            })
            .collect();
        let ratio = (g[0] - g[1]) / (g[1] - g[2]);
        assert!((3.0..=5.0).contains(&ratio), "{kind:?}: {g:?} ratio {ratio}");
    }
}

#[test]
fn cost_is_monotone_after_transient() {
    let sol = solve(35.0, 0.01, &table1().2);
    assert!(sol.converged);
    let tail = &sol.cost_history[3..];
    for w in tail.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", sol.cost_history);
    }
}

#[test]
fn joint_weight_scaling() {
    let w = table1().2;
    let base = solve(35.0, 0.01, &w);
    for c in [0.1, 7.0] {
        let scaled = solve(35.0, 0.01, &w.scaled(c));
        assert!((scaled.cost - c * base.cost).abs() <= 1e-9 * c * base.cost);
        let du = base
            .controls
            .u()
            .iter()
            .zip(scaled.controls.u())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dv = base
            .controls
            .v()
            .iter()
            .zip(scaled.controls.v())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(du + dv <= 1e-4, "c = {c}: du {du}, dv {dv}");
    }
}

#[test]
fn adjoint_terminal_condition_is_exact() {
    let sol = solve(35.0, 0.01, &table1().2);
    assert!(sol.adjoint_traj.adjoints.last().unwrap().is_zero());
}

fn interpolation_gap(h: f64) -> (f64, f64) {
    let (params, x0, w) = table1();
    let grid = TimeGrid::new(35.0, h).unwrap();
    let controls = ControlSignal::constant(grid.nodes(), 0.5, 0.5).unwrap();
    let traj = integrate_forward(&x0, &controls, &params, &grid, None).unwrap();
    let adjoint = |interpolation| {
        let opts = AdjointOptions {
            interpolation,
            ..Default::default()
        };
        integrate_adjoint_backward(&traj, &controls, &params, &w, &grid, None, opts).unwrap()
    };
    let (lin, her) = (
        adjoint(StateInterpolation::Linear),
        adjoint(StateInterpolation::Hermite),
    );
    let scale = lin
        .adjoints
        .iter()
        .flat_map(|a| a.to_flat())
        .fold(0.0, |m: f64, x| m.max(x.abs()));
    let gap = lin
        .adjoints
        .iter()
        .zip(&her.adjoints)
        .flat_map(|(a, b)| {
            a.to_flat()
                .into_iter()
                .zip(b.to_flat())
                .map(|(x, y)| (x - y).abs())
        })
        .fold(0.0, f64::max);
    (gap, scale)
}

#[test]
#[ignore = "linear stage interpolation is O(h^2): measured relative gap 5.6e-6 at h = 0.01; see the project notes"]
fn hermite_and_linear_adjoints_agree() {
    let (gap, scale) = interpolation_gap(0.01);
    assert!(gap <= 1e-6 * scale, "gap {gap}, scale {scale}");
}

#[test]
fn interpolation_gap_is_second_order() {
    let coarse = interpolation_gap(0.02).0;
    let fine = interpolation_gap(0.01).0;
    let ratio = coarse / fine;
    assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    assert!(interpolation_gap(0.0025).0 <= 1e-6 * interpolation_gap(0.0025).1);
}

#[test]
fn golden_section_is_bracketed_by_coarse_scan() {
    let (params, x0, w) = table1();
    let (lo, hi, h) = (5.0, 40.0, 0.05);
    let opts = SweepOptions::default();
    let j = |tau: f64| {
        let grid = TimeGrid::new(tau, h).unwrap();
        fbsm_solve(&x0, &params, &w, &grid, None, &opts).unwrap().cost
    };
    let (tau_star, sol) = optimize_terminal_time(&x0, &params, &w, None, (lo, hi), h, &opts).unwrap();
    assert!((sol.cost - j(tau_star)).abs() <= 1e-9 * sol.cost);
    let probe: Vec<f64> = (0..8).map(|k| lo + (hi - lo) * k as f64 / 7.0).collect();
    let costs: Vec<f64> = probe.iter().map(|&t| j(t)).collect();
    let k = (0..8).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).unwrap();
    let (left, right) = (probe[k.saturating_sub(1)], probe[(k + 1).min(7)]);
    assert!(
        left - h <= tau_star && tau_star <= right + h,
        "tau* {tau_star} outside [{left}, {right}]"
    );
    assert!(sol.cost <= costs[k] * (1.0 + 1e-9));
}

#[test]
#[ignore = "tau* is the lower end of the range, where the residual need not vanish; see the project notes"]
fn transversality_residual_is_locally_smallest() {
    let (params, x0, w) = table1();
    let (lo, hi, h) = (5.0, 40.0, 0.05);
    let opts = SweepOptions::default();
    let (tau_star, sol) = optimize_terminal_time(&x0, &params, &w, None, (lo, hi), h, &opts).unwrap();
    let at_star = sol.transversality_residual.unwrap().abs();
    for tau in [tau_star - 0.1 * (hi - lo), tau_star + 0.1 * (hi - lo)] {
        if !(lo..=hi).contains(&tau) {
            continue;
        }
        let other = optimize_terminal_time(&x0, &params, &w, None, (tau - h, tau + h), h, &opts)
            .unwrap()
            .1;
        let r = epictrl_core::control::transversality_residual(&other, &params, &w).unwrap();
        assert!(
            at_star <= r.abs(),
            "residual {at_star} at tau* {tau_star}, {r} at {tau}"
        );
    }
}

#[test]
fn golden_section_on_a_plateau_edge() {
    let (t, f) = golden_section_minimize(|x| Ok((x - 3.0f64).max(0.0)), 0.0, 10.0, 1e-6).unwrap();
    assert!(t <= 3.0 + 1e-6 && f == 0.0);
}
