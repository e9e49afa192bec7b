//! Simulated deployment: importance-sampled posteriors, posterior estimates
//! and regret metrics over many ground-truth environments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Action, ActionKind, ContextPair, Dataset, PriorBatch, SimulatorModel};
use crate::random::RngStream;
use crate::stats::{stable_mean, stable_sum, MeanSe};

pub const DEFAULT_PARTICLES: usize = 10_000;
pub const DEFAULT_DRAWS: usize = 2_000;
pub const ROLLING_WINDOW: usize = 200;

/// Prior particles with self-normalised log-weights.
#[derive(Clone, Debug)]
pub struct WeightedPosterior {
    pub particles: PriorBatch,
    pub log_weights: Vec<f64>,
    pub ess: f64,
}

impl WeightedPosterior {
    /// Normalises unnormalised log-weights via logsumexp.
    pub fn from_log_weights(particles: PriorBatch, mut log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != particles.len() || particles.is_empty() {
            return Err(Error::invalid(format!(
                "{} log-weights for {} particles",
                log_weights.len(),
                particles.len()
            )));
        }
        let max = log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegeneratePosterior(format!(
                "largest log-likelihood is {max} over {} particles",
                particles.len()
            )));
        }
        let shifted: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
        let log_norm = max + stable_sum(&shifted).ln();
        for l in &mut log_weights {
            *l -= log_norm;
        }
        let sq: Vec<f64> = log_weights.iter().map(|l| (2.0 * l).exp()).collect();
        let ess = 1.0 / stable_sum(&sq);
        Ok(WeightedPosterior {
            particles,
            log_weights,
            ess,
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// Weighted mean and standard deviation of each parameter.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let w = self.weights();
        let p = self.particles.param_dim();
        let mut mean = vec![0.0; p];
        let mut std = vec![0.0; p];
        for j in 0..p {
            let terms: Vec<f64> = self
                .particles
                .rows()
                .zip(&w)
                .map(|(r, w)| w * r[j])
                .collect();
            mean[j] = stable_sum(&terms);
            let sq: Vec<f64> = self
                .particles
                .rows()
                .zip(&w)
                .map(|(r, w)| w * (r[j] - mean[j]).powi(2))
                .collect();
            std[j] = stable_sum(&sq).sqrt();
        }
        (mean, std)
    }

    /// Multinomial resampling of `n` particle indices.
    pub fn resample(&self, n: usize, rng: &mut RngStream) -> Vec<usize> {
        let mut cumulative = Vec::with_capacity(self.log_weights.len());
        let mut total = 0.0;
        for l in &self.log_weights {
            total += l.exp();
            cumulative.push(total);
        }
        let last = cumulative.len() - 1;
        (0..n)
            .map(|_| {
                let u = rng.uniform01() * total;
                cumulative.partition_point(|&c| c <= u).min(last)
            })
            .collect()
    }
}

/// Posterior from `n` prior particles weighted by the dataset likelihood.
pub fn snis_posterior(
    model: &dyn SimulatorModel,
    data: &Dataset,
    n: usize,
    rng: &mut RngStream,
) -> Result<WeightedPosterior> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "SNIS needs at least 2 particles, got {n}"
        )));
    }
    let particles = model.sample_prior(rng, n);
    let log_weights = particles
        .rows()
        .map(|psi| model.log_likelihood(psi, data))
        .collect::<Result<Vec<f64>>>()?;
    WeightedPosterior::from_log_weights(particles, log_weights)
}

/// Posterior point estimates at the evaluation contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEstimates {
    pub max_values: Vec<f64>,
    pub psi: Vec<f64>,
    pub actions: Vec<Action>,
}

/// Estimates from `n_draws` resampled particles: the mean max value, the
/// mean parameter, and the mean optimal action (continuous) or the
/// treatment with the highest posterior-mean reward (discrete).
pub fn posterior_estimates(
    model: &dyn SimulatorModel,
    posterior: &WeightedPosterior,
    contexts: &[f64],
    n_draws: usize,
    rng: &mut RngStream,
) -> Result<PosteriorEstimates> {
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be positive"));
    }
    let draws: Vec<&[f64]> = posterior
        .resample(n_draws, rng)
        .into_iter()
        .map(|i| posterior.particles.row(i))
        .collect();
    let p = posterior.particles.param_dim();
    let psi = (0..p)
        .map(|j| stable_mean(&draws.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let mut max_values = Vec::with_capacity(contexts.len());
    let mut actions = Vec::with_capacity(contexts.len());
    for &c in contexts {
        let m: Vec<f64> = draws.iter().map(|r| model.max_value(r, c)).collect();
        max_values.push(stable_mean(&m));
        actions.push(match model.action_kind() {
            ActionKind::Continuous { lo, hi } => {
                let a: Vec<f64> = draws
                    .iter()
                    .map(|r| model.argmax_action(r, c).as_f64())
                    .collect();
                Action::Continuous(stable_mean(&a).clamp(lo, hi))
            }
            ActionKind::Discrete { treatments } => {
                let mut best = (0, f64::NEG_INFINITY);
                for k in 0..treatments {
                    let v = draws
                        .iter()
                        .map(|r| model.mean_reward(r, Action::Discrete(k), c))
                        .collect::<Result<Vec<f64>>>()?;
                    let v = stable_mean(&v);
                    if v > best.1 {
                        best = (k, v);
                    }
                }
                Action::Discrete(best.0)
            }
        });
    }
    Ok(PosteriorEstimates {
        max_values,
        psi,
        actions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeployConfig {
    pub n_envs: usize,
    pub particles: usize,
    pub n_draws: usize,
}

impl Default for DeployConfig {
    fn default() -> Self {
        DeployConfig {
            n_envs: 200,
            particles: DEFAULT_PARTICLES,
            n_draws: DEFAULT_DRAWS,
        }
    }
}

impl DeployConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 || self.particles < 2 || self.n_draws == 0 {
            return Err(Error::Config(
                "deploy needs n_envs ≥ 1, particles ≥ 2 and n_draws ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Metrics of one ground-truth environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvMetrics {
    pub mse_mstar: f64,
    pub mse_psi: f64,
    /// Squared action error (continuous) or hit rate (discrete).
    pub mse_a_or_hitrate: f64,
    pub regret: f64,
    pub ess: f64,
    pub posterior_std: f64,
    pub l2_error: f64,
}

/// Simulates outcomes of `designs` in an environment with parameter `truth`.
pub fn simulate_dataset(
    model: &dyn SimulatorModel,
    truth: &[f64],
    contexts: &[f64],
    designs: &[Action],
    rng: &mut RngStream,
) -> Result<Dataset> {
    if contexts.len() != designs.len() {
        return Err(Error::invalid(format!(
            "{} designs for {} contexts",
            designs.len(),
            contexts.len()
        )));
    }
    let std = model.noise_std();
    let outcomes = contexts
        .iter()
        .zip(designs)
        .map(|(&c, &a)| Ok(model.mean_reward(truth, a, c)? + std * rng.standard_normal()))
        .collect::<Result<Vec<f64>>>()?;
    Dataset::new(contexts.to_vec(), designs.to_vec(), outcomes)
}

/// Deployment of `designs` in the environment labelled `index`.
pub fn evaluate_environment(
    model: &dyn SimulatorModel,
    contexts: &ContextPair,
    designs: &[Action],
    cfg: &DeployConfig,
    rng: &RngStream,
    index: u64,
) -> Result<EnvMetrics> {
    let rng = rng.split_index("env", index);
    let truth = model
        .sample_prior(&mut rng.split("truth"), 1)
        .row(0)
        .to_vec();
    let data = simulate_dataset(
        model,
        &truth,
        &contexts.experimental,
        designs,
        &mut rng.split("outcome"),
    )?;
    let posterior = snis_posterior(model, &data, cfg.particles, &mut rng.split("snis"))?;
    let est = posterior_estimates(
        model,
        &posterior,
        &contexts.evaluation,
        cfg.n_draws,
        &mut rng.split("resample"),
    )?;

    let mut sq_mstar = Vec::new();
    let mut action_score = Vec::new();
    let mut regret = Vec::new();
    for (i, &c) in contexts.evaluation.iter().enumerate() {
        let m = model.max_value(&truth, c);
        let best = model.argmax_action(&truth, c);
        sq_mstar.push((est.max_values[i] - m).powi(2));
        action_score.push(match (est.actions[i], best) {
            (Action::Continuous(a), Action::Continuous(b)) => (a - b).powi(2),
            (a, b) => f64::from(u8::from(a == b)),
        });
        regret.push((m - model.mean_reward(&truth, est.actions[i], c)?).max(0.0));
    }
    let sq_psi: Vec<f64> = est
        .psi
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).powi(2))
        .collect();
    let (_, std) = posterior.moments();
    Ok(EnvMetrics {
        mse_mstar: stable_mean(&sq_mstar),
        mse_psi: stable_mean(&sq_psi),
        mse_a_or_hitrate: stable_mean(&action_score),
        regret: stable_mean(&regret),
        ess: posterior.ess,
        posterior_std: stable_mean(&std),
        l2_error: stable_sum(&sq_psi).sqrt(),
    })
}

/// Per-environment outcomes, in environment order.
#[derive(Clone, Debug)]
pub struct Deployment {
    pub envs: Vec<std::result::Result<EnvMetrics, String>>,
}

impl Deployment {
    pub fn ok(&self) -> impl Iterator<Item = &EnvMetrics> {
        self.envs.iter().filter_map(|e| e.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.envs.iter().filter(|e| e.is_err()).count()
    }

    /// Aggregated metrics row. Summation is order-independent, so the row
    /// does not depend on how environments were scheduled.
    pub fn summarise(&self, method: &str, eig: Option<MeanSe>, seed: u64) -> MetricsRow {
        let col = |f: fn(&EnvMetrics) -> f64| MeanSe::of(&self.ok().map(f).collect::<Vec<_>>());
        MetricsRow {
            method: method.to_string(),
            eig,
            mse_mstar: col(|e| e.mse_mstar),
            mse_psi: col(|e| e.mse_psi),
            mse_a_or_hitrate: col(|e| e.mse_a_or_hitrate),
            regret: col(|e| e.regret),
            n_envs: self.envs.len(),
            seed,
            failures: self.failures(),
            mean_ess: col(|e| e.ess).mean,
        }
    }
}

/// Runs `cfg.n_envs` independent environments on `workers` threads.
/// Environment `i` draws only from `rng.split_index("env", i)`, so any
/// worker count gives the same results.
pub fn run_deployment(
    model: &dyn SimulatorModel,
    contexts: &ContextPair,
    designs: &[Action],
    cfg: &DeployConfig,
    rng: &RngStream,
    workers: usize,
) -> Result<Deployment> {
    cfg.validate()?;
    if designs.len() != contexts.experimental.len() {
        return Err(Error::invalid(format!(
            "{} designs for {} experimental contexts",
            designs.len(),
            contexts.experimental.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let envs = pool.install(|| {
        (0..cfg.n_envs as u64)
            .into_par_iter()
            .map(|i| {
                evaluate_environment(model, contexts, designs, cfg, rng, i)
                    .map_err(|e| e.to_string())
            })
            .collect()
    });
    Ok(Deployment { envs })
}

/// One method's aggregated metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub eig: Option<MeanSe>,
    pub mse_mstar: MeanSe,
    pub mse_psi: MeanSe,
    pub mse_a_or_hitrate: MeanSe,
    pub regret: MeanSe,
    pub n_envs: usize,
    pub seed: u64,
    pub failures: usize,
    pub mean_ess: f64,
}

pub const CSV_HEADER: &str =
    "method,eig_mean,eig_se,mse_mstar_mean,mse_mstar_se,mse_psi_mean,mse_psi_se,\
mse_a_or_hitrate_mean,mse_a_or_hitrate_se,regret_mean,regret_se,n_envs,seed";

/// Provenance stamped on every output file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub model_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comment(&self) -> String {
        format!(
            "# maxeig {} config={} model={} seed={}",
            self.tool_version, self.config_hash, self.model_hash, self.seed
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub provenance: Provenance,
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    /// CSV with a leading `#` provenance line.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!("{}\n{CSV_HEADER}\n", self.provenance.comment());
        for r in &self.rows {
            if r.method.contains([',', '"', '\n']) {
                return Err(Error::invalid(format!(
                    "method label {:?} is not CSV-safe",
                    r.method
                )));
            }
            let eig = r.eig.map_or((String::new(), String::new()), |e| {
                (e.mean.to_string(), e.se.to_string())
            });
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.method,
                eig.0,
                eig.1,
                r.mse_mstar.mean,
                r.mse_mstar.se,
                r.mse_psi.mean,
                r.mse_psi.se,
                r.mse_a_or_hitrate.mean,
                r.mse_a_or_hitrate.se,
                r.regret.mean,
                r.regret.se,
                r.n_envs,
                r.seed
            ));
        }
        Ok(out)
    }
}

/// Trailing mean over the last `window` values (fewer at the start).
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| stable_mean(&values[(i + 1).saturating_sub(window)..=i]))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub env: usize,
    pub posterior_std: f64,
    pub l2_error: f64,
    pub rolling_l2_error: f64,
}

/// Posterior spread against parameter error, one point per environment.
pub fn calibration_diagnostic(deployment: &Deployment) -> Vec<CalibrationPoint> {
    let ok: Vec<(usize, &EnvMetrics)> = deployment
        .envs
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.as_ref().ok().map(|m| (i, m)))
        .collect();
    let errors: Vec<f64> = ok.iter().map(|(_, m)| m.l2_error).collect();
    let rolling = rolling_mean(&errors, ROLLING_WINDOW);
    ok.iter()
        .zip(rolling)
        .map(|(&(env, m), r)| CalibrationPoint {
            env,
            posterior_std: m.posterior_std,
            l2_error: m.l2_error,
            rolling_l2_error: r,
        })
        .collect()
}

pub fn calibration_csv(provenance: &Provenance, points: &[CalibrationPoint]) -> String {
    let mut out = format!(
        "{}\nenv,posterior_std,l2_error,rolling_l2_error\n",
        provenance.comment()
    );
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.env, p.posterior_std, p.l2_error, p.rolling_l2_error
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tensor, Var};
    use crate::models::{ContinuousBumpModel, DiscreteQuadraticModel, GaussianLocationModel};

    fn batch(rows: &[&[f64]]) -> PriorBatch {
        let p = rows[0].len();
        PriorBatch::new(Tensor::new(vec![rows.len(), p], rows.concat()).unwrap()).unwrap()
    }

    #[test]
    fn empty_dataset_gives_uniform_weights() {
        let m = ContinuousBumpModel::default();
        let data = Dataset::new(vec![], vec![], vec![]).unwrap();
        let post = snis_posterior(&m, &data, 1000, &mut RngStream::new(1)).unwrap();
        assert!((post.ess - 1000.0).abs() < 1e-9);
        for w in post.weights() {
            assert!((w - 1e-3).abs() < 1e-15);
        }
    }

    #[test]
    fn likelihood_ratio_e() {
        let post = WeightedPosterior::from_log_weights(batch(&[&[0.0], &[1.0]]), vec![-2.0, -3.0])
            .unwrap();
        let w = post.weights();
        let e = std::f64::consts::E;
        assert!((w[0] - e / (1.0 + e)).abs() < 1e-12);
        assert!((w[1] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((w[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn impossible_data_is_rejected() {
        let err = WeightedPosterior::from_log_weights(
            batch(&[&[0.0], &[1.0]]),
            vec![f64::NEG_INFINITY; 2],
        );
        assert!(matches!(err, Err(Error::DegeneratePosterior(_))));
        assert!(snis_posterior(
            &ContinuousBumpModel::default(),
            &Dataset::new(vec![], vec![], vec![]).unwrap(),
            1,
            &mut RngStream::new(0)
        )
        .is_err());
    }

    #[test]
    fn snis_matches_grid_quadrature() {
        let m = GaussianLocationModel {
            prior_mean: 0.5,
            prior_std: 1.0,
            noise_std: 0.5,
        };
        let ys = [1.3, 0.9, 1.6];
        let data =
            Dataset::new(vec![0.0; 3], vec![Action::Continuous(0.0); 3], ys.to_vec()).unwrap();
        // dense-grid quadrature of prior × likelihood
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=20_000 {
            let psi = -8.0 + 16.0 * i as f64 / 20_000.0;
            let log_prior = -0.5 * (psi - 0.5f64).powi(2);
            let log_lik: f64 = ys.iter().map(|y| -0.5 * ((y - psi) / 0.5f64).powi(2)).sum();
            let w = (log_prior + log_lik).exp();
            num += w * psi;
            den += w;
        }
        let post = snis_posterior(&m, &data, 100_000, &mut RngStream::new(2)).unwrap();
        let (mean, _) = post.moments();
        assert!(
            (mean[0] - num / den).abs() < 0.05,
            "{} vs {}",
            mean[0],
            num / den
        );
        let total: f64 = post.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(post.ess >= 1.0 && post.ess <= 100_000.0);
    }

    #[test]
    fn degenerate_posterior_estimates() {
        let m = ContinuousBumpModel::default();
        let a = [0.3, 0.5, 0.2, 0.7];
        let post = WeightedPosterior::from_log_weights(
            batch(&[&a, &[0.9, 0.1, 0.4, 0.2]]),
            vec![0.0, f64::NEG_INFINITY],
        )
        .unwrap();
        assert_eq!(post.ess, 1.0);
        let est = posterior_estimates(&m, &post, &[-1.0, 2.0], 50, &mut RngStream::new(3)).unwrap();
        assert_eq!(est.psi, a.to_vec());
        for (i, c) in [-1.0, 2.0].into_iter().enumerate() {
            assert_eq!(est.max_values[i], m.max_value(&a, c));
            assert_eq!(est.actions[i], m.argmax_action(&a, c));
        }
    }

    #[test]
    fn continuous_action_is_posterior_mean() {
        let m = ContinuousBumpModel::default();
        // optima at c = 0 are ψ0
        let post = WeightedPosterior::from_log_weights(
            batch(&[&[1.0, 0.5, 0.5, 0.5], &[3.0, 0.5, 0.5, 0.5]]),
            vec![0.0, 0.0],
        )
        .unwrap();
        let est = posterior_estimates(&m, &post, &[0.0], 200_000, &mut RngStream::new(4)).unwrap();
        assert!((est.actions[0].as_f64() - 2.0).abs() < 0.01);
    }

    #[test]
    fn discrete_action_uses_posterior_mean_reward() {
        let m = DiscreteQuadraticModel::default();
        // at c = 3 treatment k's reward is ψ_{k,2}
        let p1 = [0.0, 8.0, 0.0, 12.0, 0.0, 0.0, 0.0, 0.0];
        let p2 = [0.0, 12.0, 0.0, 10.0, 0.0, 0.0, 0.0, 0.0];
        let post = WeightedPosterior::from_log_weights(batch(&[&p1, &p2]), vec![0.0, 0.0]).unwrap();
        let est = posterior_estimates(&m, &post, &[3.0], 20_000, &mut RngStream::new(5)).unwrap();
        assert_eq!(est.actions[0], Action::Discrete(1));
    }

    /// Prior collapsed to a single point: the posterior is the truth.
    struct PointModel(ContinuousBumpModel, [f64; 4]);

    impl SimulatorModel for PointModel {
        fn action_kind(&self) -> ActionKind {
            self.0.action_kind()
        }
        fn param_dim(&self) -> usize {
            4
        }
        fn noise_std(&self) -> f64 {
            self.0.noise_std
        }
        fn sample_prior_into(&self, _rng: &mut RngStream, out: &mut [f64]) {
            out.copy_from_slice(&self.1);
        }
        fn prior_std(&self) -> Vec<f64> {
            vec![0.0; 4]
        }
        fn mean_reward(&self, psi: &[f64], a: Action, c: f64) -> Result<f64> {
            self.0.mean_reward(psi, a, c)
        }
        fn max_value(&self, psi: &[f64], c: f64) -> f64 {
            self.0.max_value(psi, c)
        }
        fn argmax_action(&self, psi: &[f64], c: f64) -> Action {
            self.0.argmax_action(psi, c)
        }
        fn mean_on_tape<'t>(&self, psi: &PriorBatch, d: Var<'t>, c: &[f64]) -> Result<Var<'t>> {
            self.0.mean_on_tape(psi, d, c)
        }
    }

    #[test]
    fn oracle_posterior_has_zero_error() {
        let m = PointModel(ContinuousBumpModel::default(), [0.3, 0.6, 0.2, 0.5]);
        let ctx = ContextPair::midpoints(5, -3.5, 3.5);
        let designs = vec![Action::Continuous(0.0); 5];
        let cfg = DeployConfig {
            n_envs: 4,
            particles: 10,
            n_draws: 10,
        };
        let dep = run_deployment(&m, &ctx, &designs, &cfg, &RngStream::new(6), 1).unwrap();
        let row = dep.summarise("oracle", None, 6);
        assert_eq!(row.failures, 0);
        for v in [row.mse_mstar, row.mse_psi, row.mse_a_or_hitrate, row.regret] {
            assert!(v.mean.abs() < 1e-20, "{row:?}");
        }
    }

    #[test]
    fn workers_do_not_change_results() {
        let m = ContinuousBumpModel::default();
        let ctx = ContextPair::midpoints(4, -3.5, 3.5);
        let designs: Vec<Action> = [-1.0, 0.0, 1.0, 2.0].map(Action::Continuous).to_vec();
        let cfg = DeployConfig {
            n_envs: 16,
            particles: 500,
            n_draws: 100,
        };
        let rng = RngStream::new(7);
        let a = run_deployment(&m, &ctx, &designs, &cfg, &rng, 1)
            .unwrap()
            .summarise("x", None, 7);
        let b = run_deployment(&m, &ctx, &designs, &cfg, &rng, 4)
            .unwrap()
            .summarise("x", None, 7);
        assert_eq!(a, b);
        assert!(a.regret.mean >= 0.0);
    }

    #[test]
    fn zero_observations_keep_prior_spread() {
        let m = ContinuousBumpModel::default();
        let ctx = ContextPair {
            experimental: vec![],
            evaluation: vec![0.0],
        };
        let cfg = DeployConfig {
            n_envs: 3,
            particles: 20_000,
            n_draws: 10,
        };
        let dep = run_deployment(&m, &ctx, &[], &cfg, &RngStream::new(8), 1).unwrap();
        for p in calibration_diagnostic(&dep) {
            assert!(
                (p.posterior_std - 1.0 / 12f64.sqrt()).abs() < 0.005,
                "{p:?}"
            );
        }
    }

    #[test]
    fn rolling_mean_of_constant() {
        assert_eq!(rolling_mean(&[2.5; 450], ROLLING_WINDOW), vec![2.5; 450]);
        assert_eq!(
            rolling_mean(&[1.0, 2.0, 3.0, 4.0], 2),
            vec![1.0, 1.5, 2.5, 3.5]
        );
    }

    #[test]
    fn csv_has_exact_columns() {
        let row = MetricsRow {
            method: "ucb:1".into(),
            eig: None,
            mse_mstar: MeanSe { mean: 0.5, se: 0.1 },
            mse_psi: MeanSe { mean: 1.0, se: 0.2 },
            mse_a_or_hitrate: MeanSe {
                mean: 0.5,
                se: 0.01,
            },
            regret: MeanSe {
                mean: 0.25,
                se: 0.05,
            },
            n_envs: 200,
            seed: 3,
            failures: 0,
            mean_ess: 10.0,
        };
        let report = MetricsReport {
            provenance: Provenance {
                tool_version: "0.1.0".into(),
                config_hash: "ab".into(),
                model_hash: "cd".into(),
                seed: 3,
            },
            rows: vec![row.clone()],
        };
        let csv = report.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines[1].split(',').count(), 13);
        assert_eq!(lines[2], "ucb:1,,,0.5,0.1,1,0.2,0.5,0.01,0.25,0.05,200,3");
        let bad = MetricsReport {
            rows: vec![MetricsRow {
                method: "a,b".into(),
                ..row
            }],
            ..report
        };
        assert!(bad.to_csv().is_err());
    }
}
