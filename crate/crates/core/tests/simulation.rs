//! Monte Carlo estimators, coupling and scaling checks on solved presets.

use quasistat::experiments::{ModelPreset, PresetName};
use quasistat::grid::{GridKind, GridSpec, GridTemplate};
use quasistat::kernel::{MultiplicativeKernel, TransitionKernel};
use quasistat::monte_carlo::{
    coupled_dominance_sim, geometric_fit_test, sample_from_qsd, simulate_discrete_exit_time,
    simulate_exit_time, verify_one_step_quantile_order,
};
use quasistat::qsd::{
    build_killed_kernel, check_scaling_dominance, default_slack, refinement_study, yaglom_iterate,
    KilledKernel, QsdSolution,
};
use quasistat::{rng, QsdError, Result};

const E2: f64 = 7.38905609893065;

fn solved(kernel: &MultiplicativeKernel, a: f64, n: usize) -> QsdSolution {
    let grid = GridTemplate::geometric(n)
        .resolve(kernel.state_space_floor, a)
        .unwrap();
    let kk = build_killed_kernel(kernel, a, &grid).unwrap();
    let sol = yaglom_iterate(&kk, None, 1e-12, 1_000_000).unwrap();
    assert!(sol.converged);
    sol
}

fn preset(name: PresetName) -> MultiplicativeKernel {
    ModelPreset::new(name).kernel
}

#[test]
fn qsd_sampler_passes_a_kolmogorov_smirnov_check() {
    let sol = solved(&preset(PresetName::ShiryaevRoberts), E2, 400);
    let n = 1_000_000u64;
    let mut draws: Vec<f64> = (0..n)
        .map(|i| {
            let mut r = rng::stream(99, i);
            sample_from_qsd(&sol, rng::open_uniform(&mut r))
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let mut sup: f64 = 0.0;
    for (i, &x) in draws.iter().enumerate() {
        let f = sol.cdf(x);
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        sup = sup.max((f - lo).abs()).max((hi - f).abs());
    }
    assert!(sup < 2e-3, "KS distance {sup}");
}

#[test]
fn discrete_chain_mean_matches_fundamental_value() {
    let kk = KilledKernel::from_rows(&[vec![0.6, 0.2], vec![0.1, 0.5]]).unwrap();
    let est = simulate_discrete_exit_time(&kk, &[0.5, 0.5], 100_000, 7, 1_000_000).unwrap();
    assert!(
        (est.mean - 10.0 / 3.0).abs() < 3.0 * est.stderr,
        "mean {} stderr {}",
        est.mean,
        est.stderr
    );
    let fit = geometric_fit_test(&est.histogram, 0.7).unwrap();
    assert!(fit.passed, "{fit:?}");
}

#[test]
fn exit_time_estimate_agrees_with_the_eigenvalue() {
    let a = E2.powf(1.5);
    let k = preset(PresetName::ShiryaevRoberts);
    let sol = solved(&k, a, 400);
    let est = simulate_exit_time(&k, a, &sol, 100_000, 2024, 10_000_000).unwrap();
    assert!(
        (est.mean - sol.expected_exit_time).abs() < 3.0 * est.stderr,
        "mean {} stderr {} numeric {}",
        est.mean,
        est.stderr,
        sol.expected_exit_time
    );
    assert_eq!(est.capped, 0);
    assert!(
        geometric_fit_test(&est.histogram, sol.lambda)
            .unwrap()
            .passed
    );
}

#[test]
fn simulation_is_reproducible_for_a_seed() {
    let k = preset(PresetName::Cusum);
    let sol = solved(&k, E2, 200);
    let a = simulate_exit_time(&k, E2, &sol, 5_000, 11, 10_000_000).unwrap();
    let b = simulate_exit_time(&k, E2, &sol, 5_000, 11, 10_000_000).unwrap();
    let c = simulate_exit_time(&k, E2, &sol, 5_000, 12, 10_000_000).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.mean, c.mean);
}

/// `M' = 2 + s·Λ`: every one-step state exceeds 2.
struct ShiftedKernel(MultiplicativeKernel);

impl TransitionKernel for ShiftedKernel {
    fn rho(&self, s: f64, x: f64) -> Result<f64> {
        if x <= 2.0 {
            return Ok(0.0);
        }
        self.0.rho(s, x - 2.0)
    }
    fn sample_step(&self, s: f64, u: f64) -> Result<f64> {
        Ok(2.0 + self.0.sample_step(s, u)?)
    }
    fn sample_step_conditioned(&self, _: f64, threshold: f64, _: f64) -> Result<f64> {
        Err(QsdError::DegenerateKernel {
            state: 0.0,
            threshold,
        })
    }
}

#[test]
fn threshold_below_every_reachable_state_exits_at_once() {
    let k = ShiftedKernel(preset(PresetName::ShiryaevRoberts));
    let grid = GridSpec::new(GridKind::Uniform, 1, 0.0, 1.0).unwrap();
    let sol = QsdSolution::from_parts(grid, vec![1.0], 0.0, 0, 0.0, true).unwrap();
    let est = simulate_exit_time(&k, 1.0, &sol, 1_000, 3, 100).unwrap();
    assert_eq!(est.mean, 1.0);
    assert_eq!(est.stderr, 0.0);
}

#[test]
fn scaled_threshold_distribution_dominates() {
    let k = preset(PresetName::ShiryaevRoberts);
    let a = E2 * std::f64::consts::E;
    let g = GridTemplate::geometric(400).resolve(0.0, a).unwrap();
    let report = check_scaling_dominance(
        &k,
        a,
        2.0,
        &g,
        &g.scaled(2.0).unwrap(),
        1e-12,
        1_000_000,
        default_slack(400),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.worst_gap >= -1e-12);
}

#[test]
fn coupled_chains_respect_the_order_on_every_preset() {
    for name in PresetName::ALL {
        let k = preset(name);
        let a = ModelPreset::new(name).default_base_threshold();
        let sol = solved(&k, a, 400);
        for y in [1.0, 1.5, 2.0] {
            let t = coupled_dominance_sim(&k, a, y, &sol, 2_000, 100, 5).unwrap();
            assert_eq!(t.violations, 0, "{name:?} y={y}: {:?}", t.first_violation);
        }
    }
}

#[test]
fn one_step_quantiles_are_ordered() {
    let states: Vec<f64> = (0..60).map(|i| 1e-3 * 1.2f64.powi(i)).collect();
    let uniforms: Vec<f64> = (1..50).map(|i| i as f64 / 50.0).collect();
    for name in PresetName::ALL {
        let k = preset(name);
        let a = ModelPreset::new(name).default_base_threshold();
        let states: Vec<f64> = states.iter().copied().filter(|&s| s <= a).collect();
        for y in [1.5, 2.0, 4.0] {
            let r = verify_one_step_quantile_order(&k, a, y, &states, &uniforms).unwrap();
            assert!(r.holds(), "{name:?} y={y}: {r:?}");
        }
    }
}

#[test]
fn eigenvalue_converges_at_second_order_for_smooth_phi() {
    for name in [PresetName::Ewma, PresetName::ShiryaevRoberts] {
        let p = ModelPreset::new(name);
        let a = p.default_base_threshold();
        let rows = refinement_study(
            &p.kernel,
            a,
            GridTemplate::geometric(100),
            4,
            1e-12,
            1_000_000,
        )
        .unwrap();
        let deltas: Vec<f64> = rows.iter().filter_map(|r| r.delta).collect();
        assert_eq!(deltas.len(), 3);
        assert!(
            deltas.windows(2).all(|w| w[1] < w[0] / 3.0),
            "{name:?} {deltas:?}"
        );
    }
}

#[test]
fn eigenvalue_settles_for_the_kinked_phi() {
    // max(1, t) has a corner at 1, so the error depends on where the grid
    // edges fall and does not shrink monotonically; it stays small.
    let k = preset(PresetName::Cusum);
    let rows = refinement_study(&k, E2, GridTemplate::geometric(400), 3, 1e-12, 1_000_000).unwrap();
    assert!(
        rows.iter().filter_map(|r| r.delta).all(|d| d < 1e-5),
        "{rows:?}"
    );
}
