//! Randomized invariants of kernels and the eigen solver.

use proptest::prelude::*;
use quasistat::kernel::{
    InnovationDistribution, Measure, MultiplicativeKernel, PhiFunction, TransitionKernel,
};
use quasistat::qsd::{expected_exit_time_fundamental, yaglom_iterate, KilledKernel};

fn phi_strategy() -> impl Strategy<Value = PhiFunction> {
    prop_oneof![
        (0.05f64..0.95).prop_map(|alpha| PhiFunction::Power { alpha }),
        (0.1f64..3.0).prop_map(|a| PhiFunction::Affine { a }),
        Just(PhiFunction::MaxOne),
    ]
}

fn innovation_strategy() -> impl Strategy<Value = InnovationDistribution> {
    prop_oneof![
        (-1.0f64..1.0, 0.2f64..2.0)
            .prop_map(|(mu, sigma)| InnovationDistribution::LogNormal { mu, sigma }),
        (0.2f64..2.0).prop_map(|theta| InnovationDistribution::LikelihoodRatioGaussian {
            theta,
            measure: Measure::Pre,
        }),
        (0.2f64..2.0).prop_map(|theta| InnovationDistribution::LikelihoodRatioGaussian {
            theta,
            measure: Measure::Post,
        }),
    ]
}

fn kernel_strategy() -> impl Strategy<Value = MultiplicativeKernel> {
    (phi_strategy(), innovation_strategy())
        .prop_map(|(phi, inn)| MultiplicativeKernel::new(phi, inn, 0.0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transition_cdf_is_a_distribution_function(
        k in kernel_strategy(),
        s in 0.01f64..50.0,
        x1 in 0.0f64..100.0,
        dx in 0.0f64..100.0,
    ) {
        let a = k.rho(s, x1).unwrap();
        let b = k.rho(s, x1 + dx).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(a <= b);
        prop_assert_eq!(k.rho(s, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn conditioned_draws_stay_below_threshold(
        k in kernel_strategy(),
        s in 0.01f64..20.0,
        a in 0.1f64..50.0,
        u in 1e-9f64..(1.0 - 1e-9),
    ) {
        let x = k.sample_step_conditioned(s, a, u).unwrap();
        prop_assert!(x >= 0.0 && x <= a);
    }

    #[test]
    fn free_draws_increase_with_the_source_state(
        k in kernel_strategy(),
        s in 0.01f64..20.0,
        ds in 0.0f64..20.0,
        u in 1e-6f64..(1.0 - 1e-6),
    ) {
        let lo = k.sample_step(s, u).unwrap();
        let hi = k.sample_step(s + ds, u).unwrap();
        prop_assert!(lo <= hi * (1.0 + 1e-14));
    }

    #[test]
    fn quantile_inverts_the_transition_cdf(
        k in kernel_strategy(),
        s in 0.01f64..20.0,
        u in 1e-6f64..(1.0 - 1e-6),
    ) {
        let x = k.sample_step(s, u).unwrap();
        let back = k.rho(s, x).unwrap();
        prop_assert!((back - u).abs() < 1e-9, "u={} back={}", u, back);
    }

    #[test]
    fn solver_fixed_point_on_random_substochastic_matrices(
        raw in prop::collection::vec(0.05f64..1.0, 9),
        scale in prop::collection::vec(0.1f64..0.95, 3),
    ) {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let r = &raw[3 * i..3 * i + 3];
                let sum: f64 = r.iter().sum();
                r.iter().map(|v| v / sum * scale[i]).collect()
            })
            .collect();
        let kk = KilledKernel::from_rows(&rows).unwrap();
        let sol = yaglom_iterate(&kk, None, 1e-13, 1_000_000).unwrap();
        prop_assert!(sol.converged);
        prop_assert!(sol.eigen_residual(&kk) < 1e-9);
        prop_assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let fun = expected_exit_time_fundamental(&kk, &sol.weights).unwrap();
        prop_assert!(((sol.expected_exit_time - fun) / fun).abs() < 1e-8);
    }
}
