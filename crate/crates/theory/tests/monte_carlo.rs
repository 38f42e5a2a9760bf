use proactive_theory::{
    lemma1_compare, make_step_schedule, simulate_sgd_trial, theorem1_check, BoxTaskSpec,
    RegressionConfig, Verdict,
};
use proptest::prelude::*;

#[test]
fn schedule_sums_approach_the_basel_constant() {
    let s = make_step_schedule(1.0, 1_000_000).unwrap();
    // partial sums of 1/k² computed from the smallest term up to limit rounding
    let sum: f64 = s.iter().rev().map(|v| v * v).sum();
    let basel = std::f64::consts::PI.powi(2) / 6.0;
    assert!((sum - basel).abs() < 1e-4);
    assert!((basel - 1.644934).abs() < 1e-6);
}

proptest! {
    #[test]
    fn schedule_is_decreasing_and_square_summable(base in 0.01..5.0f64, n in 1usize..2000) {
        let s = make_step_schedule(base, n).unwrap();
        prop_assert_eq!(s.len(), n);
        prop_assert!(s.windows(2).all(|w| w[1] < w[0]));
        let bound = base * base * std::f64::consts::PI.powi(2) / 6.0;
        let mut partial = 0.0;
        for v in &s {
            let next = partial + v * v;
            prop_assert!(next > partial);
            partial = next;
        }
        prop_assert!(partial <= bound);
    }
}

#[test]
fn noiseless_passive_trial_sits_at_the_optimum() {
    let cfg = RegressionConfig { sigma: 0.0, max_steps: 5000, ..Default::default() };
    let r = simulate_sgd_trial(&cfg, 0, false).unwrap();
    assert!(r.distance_to_optimal < 1e-3);
}

#[test]
fn noiseless_comparison_is_inconclusive() {
    for s in [0.3, 0.9] {
        let cfg = RegressionConfig { sigma: 0.0, template_scalar: s, trials: 40, max_steps: 300, ..Default::default() };
        let r = lemma1_compare(&cfg).unwrap();
        assert!(r.passive_mean_distance < 1e-3 && r.proactive_mean_distance < 1e-3);
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }
}

#[test]
fn unit_template_comparison_is_inconclusive() {
    let cfg = RegressionConfig { template_scalar: 1.0, trials: 60, max_steps: 300, ..Default::default() };
    let r = lemma1_compare(&cfg).unwrap();
    assert_eq!(r.passive_mean_distance, r.proactive_mean_distance);
    assert_eq!(r.verdict, Verdict::Inconclusive);
}

#[test]
fn unit_template_trajectories_are_bitwise_passive_with_a_nonzero_optimum() {
    let cfg = RegressionConfig { template_scalar: 1.0, optimum_scale: 0.7, max_steps: 500, ..Default::default() };
    for k in [0, 17, 999] {
        assert_eq!(simulate_sgd_trial(&cfg, k, false).unwrap(), simulate_sgd_trial(&cfg, k, true).unwrap());
    }
}

#[test]
fn proactive_gradient_noise_respects_the_bound_on_long_runs() {
    // ≥ 10⁴ samples per trial: 20000 steps, second half sampled
    for s in [0.3, 0.5, 0.8] {
        let cfg = RegressionConfig { template_scalar: s, max_steps: 20_000, ..Default::default() };
        for k in 0..3 {
            let r = simulate_sgd_trial(&cfg, k, true).unwrap();
            assert!(r.gradient_samples >= 10_000);
            let bound = s.powi(4) * cfg.sigma.powi(2);
            assert!(r.gradient_variance_estimate <= bound * 1.1, "s={s} trial {k}: {} vs {bound}", r.gradient_variance_estimate);
        }
    }
}

#[test]
fn passive_gradient_noise_is_near_sigma_squared() {
    let cfg = RegressionConfig { sigma: 0.5, trials: 100, ..Default::default() };
    let r = lemma1_compare(&cfg).unwrap();
    assert!((r.passive_gradient_variance / 0.25 - 1.0).abs() < 0.1, "{}", r.passive_gradient_variance);
    assert_eq!(r.passive_variance_bound, 0.25);
    assert!((r.proactive_variance_bound - 0.25 * 0.0625).abs() < 1e-15);
}

#[test]
fn mean_distance_does_not_increase_with_more_steps() {
    let mut prev: Option<(f64, f64)> = None;
    for steps in [20, 100, 500, 2000] {
        let cfg = RegressionConfig { max_steps: steps, trials: 500, optimum_scale: 0.5, ..Default::default() };
        let r = lemma1_compare(&cfg).unwrap();
        let d: Vec<f64> = r.trials.iter().map(|t| t.passive.distance_to_optimal).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        let se = sd / (d.len() as f64).sqrt();
        if let Some((pm, pse)) = prev {
            assert!(mean <= pm + se.max(pse), "{steps}: {mean} after {pm}");
        }
        prev = Some((mean, se));
    }
}

#[test]
fn small_templates_bring_weights_closer() {
    // The lemma asks only for the existence of a helpful template.
    let cfg = RegressionConfig { template_scalar: 0.2, trials: 300, ..Default::default() };
    let r = lemma1_compare(&cfg).unwrap();
    assert_eq!(r.verdict, Verdict::LemmaHolds);
    assert!(r.proactive_mean_distance < r.passive_mean_distance);
}

#[test]
fn reports_are_identical_across_thread_counts() {
    let cfg = RegressionConfig { trials: 64, max_steps: 200, seed: 7, ..Default::default() };
    let render = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let r = lemma1_compare(&cfg).unwrap();
            let mut csv = Vec::new();
            r.write_csv(&mut csv).unwrap();
            (r.to_json().unwrap(), csv)
        })
    };
    let one = render(1);
    assert_eq!(one, render(3));
    assert_eq!(one, render(1));
    assert!(one.0.contains("\"verdict\""));
    assert_eq!(String::from_utf8(one.1).unwrap().lines().count(), 65);
}

#[test]
fn noiseless_box_regression_is_exact() {
    let cfg = RegressionConfig { sigma: 0.0, max_steps: 200, ..Default::default() };
    let r = theorem1_check(&cfg, &BoxTaskSpec { test_boxes: 100, ..Default::default() }).unwrap();
    assert_eq!(r.ap_passive.ap50, 1.0);
    assert_eq!(r.ap_proactive.ap50, 1.0);
    assert_eq!(r.ap_passive, r.ap_proactive);
}

#[test]
fn untrained_regressors_score_alike() {
    let cfg = RegressionConfig { optimum_scale: 0.05, ..Default::default() };
    let task = BoxTaskSpec { train_steps: Some(0), test_boxes: 200, ..Default::default() };
    let r = theorem1_check(&cfg, &task).unwrap();
    assert_eq!(r.ap_passive, r.ap_proactive);
}

#[test]
fn noisy_box_regression_favors_the_template() {
    let cfg = RegressionConfig { seed: 11, ..Default::default() };
    let r = theorem1_check(&cfg, &BoxTaskSpec::default()).unwrap();
    assert!(r.proactive_not_worse, "{r:?}");
    assert!(r.ap_proactive.ap75 >= r.ap_passive.ap75);
}

#[test]
fn degenerate_predictions_are_counted() {
    // huge coordinate scale and noise push some predicted boxes inside out
    let cfg = RegressionConfig { sigma: 20.0, max_steps: 50, ..Default::default() };
    let task = BoxTaskSpec { coordinate_scale: 40.0, test_boxes: 200, ..Default::default() };
    let r = theorem1_check(&cfg, &task).unwrap();
    assert!(r.degenerate_passive > 0);
    assert!(r.ap_passive.ap50 <= 1.0 && r.ap_passive.ap50 >= 0.0);
}
