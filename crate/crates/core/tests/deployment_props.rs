use maxeig::autodiff::Tensor;
use maxeig::deployment::{rolling_mean, Deployment, EnvMetrics, WeightedPosterior};
use maxeig::models::PriorBatch;
use maxeig::random::RngStream;
use proptest::prelude::*;

fn particles(n: usize) -> PriorBatch {
    PriorBatch::new(Tensor::matrix(n, 2, (0..2 * n).map(|i| i as f64 * 0.25).collect()).unwrap())
        .unwrap()
}

fn env(x: f64) -> EnvMetrics {
    EnvMetrics {
        mse_mstar: x,
        mse_psi: 2.0 * x,
        mse_a_or_hitrate: x * x,
        regret: x.sqrt(),
        ess: 100.0 + x,
        posterior_std: x,
        l2_error: x,
    }
}

proptest! {
    #[test]
    fn weights_normalise_and_ess_is_bounded(logs in prop::collection::vec(-30.0f64..5.0, 1..60)) {
        let n = logs.len();
        let post = WeightedPosterior::from_log_weights(particles(n), logs).unwrap();
        let total: f64 = post.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(post.ess >= 1.0 - 1e-9 && post.ess <= n as f64 + 1e-9);
    }

    #[test]
    fn log_weight_offset_is_irrelevant(
        logs in prop::collection::vec(-20.0f64..0.0, 2..40),
        shift in -500.0f64..500.0,
    ) {
        let n = logs.len();
        let a = WeightedPosterior::from_log_weights(particles(n), logs.clone()).unwrap();
        let b = WeightedPosterior::from_log_weights(particles(n), logs.iter().map(|l| l + shift).collect()).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        prop_assert!((a.ess - b.ess).abs() < 1e-8 * a.ess);
    }

    #[test]
    fn resampling_skips_zero_weight_particles(
        alive in prop::collection::vec(any::<bool>(), 2..30),
        seed in any::<u64>(),
    ) {
        prop_assume!(alive.iter().any(|&a| a));
        let logs: Vec<f64> = alive.iter().map(|&a| if a { 0.0 } else { f64::NEG_INFINITY }).collect();
        let post = WeightedPosterior::from_log_weights(particles(alive.len()), logs).unwrap();
        let picks = post.resample(200, &mut RngStream::new(seed));
        prop_assert_eq!(picks.len(), 200);
        prop_assert!(picks.iter().all(|&i| alive[i]));
    }

    #[test]
    fn summary_ignores_environment_order(
        values in prop::collection::vec(0.0f64..10.0, 2..50),
        rotate in 0usize..50,
    ) {
        let envs: Vec<_> = values.iter().map(|&x| Ok(env(x))).collect();
        let mut shuffled = envs.clone();
        shuffled.rotate_left(rotate % envs.len());
        shuffled.reverse();
        let a = Deployment { envs }.summarise("m", None, 0);
        let b = Deployment { envs: shuffled }.summarise("m", None, 0);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rolling_mean_limits(values in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        prop_assert_eq!(rolling_mean(&values, 1), values.clone());
        let full = rolling_mean(&values, values.len());
        let last = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((full[values.len() - 1] - last).abs() < 1e-12);
    }
}

#[test]
fn failed_environments_are_counted_not_averaged() {
    let d = Deployment {
        envs: vec![Ok(env(1.0)), Err("degenerate".into()), Ok(env(3.0))],
    };
    let row = d.summarise("m", None, 4);
    assert_eq!(row.failures, 1);
    assert_eq!(row.n_envs, 3);
    assert_eq!(row.mse_mstar.mean, 2.0);
}
