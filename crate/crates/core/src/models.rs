//! Bayesian reward simulators under the graph `c → y ← a`.
//!
//! Every model exposes the same surface: prior sampling, a deterministic mean
//! reward, the per-parameter max-value and optimal action at a context, the
//! Gaussian outcome log-likelihood, and a differentiable mean-reward
//! computation on a [`Tape`](crate::autodiff::Tape) for design training.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::random::RngStream;

/// A treatment applied in one context.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(f64),
}

impl Action {
    pub fn as_f64(self) -> f64 {
        match self {
            Action::Discrete(k) => k as f64,
            Action::Continuous(a) => a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionKind {
    Discrete { treatments: usize },
    Continuous { lo: f64, hi: f64 },
}

/// Prior draws of the Bayesian parameter, shape `[batch, param_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorBatch(Tensor);

impl PriorBatch {
    pub fn new(draws: Tensor) -> Result<Self> {
        if draws.shape().len() != 2 {
            return Err(Error::invalid(format!(
                "prior batch must be 2-D, got {:?}",
                draws.shape()
            )));
        }
        Ok(PriorBatch(draws))
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn param_dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(|i| self.row(i))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Experiment triple: contexts, applied actions and observed outcomes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub contexts: Vec<f64>,
    pub actions: Vec<Action>,
    pub outcomes: Vec<f64>,
}

impl Dataset {
    pub fn new(contexts: Vec<f64>, actions: Vec<Action>, outcomes: Vec<f64>) -> Result<Self> {
        if contexts.len() != actions.len() || contexts.len() != outcomes.len() {
            return Err(Error::invalid(format!(
                "dataset lengths differ: {} contexts, {} actions, {} outcomes",
                contexts.len(),
                actions.len(),
                outcomes.len()
            )));
        }
        Ok(Dataset {
            contexts,
            actions,
            outcomes,
        })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

/// Experimental contexts `C` and evaluation contexts `C*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextPair {
    pub experimental: Vec<f64>,
    pub evaluation: Vec<f64>,
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl ContextPair {
    /// Grid on `[lo, hi]` with the evaluation contexts its reflection `−C`.
    pub fn mirrored(n: usize, lo: f64, hi: f64) -> Self {
        let experimental = linspace(lo, hi, n);
        let evaluation = experimental.iter().map(|c| -c).collect();
        ContextPair {
            experimental,
            evaluation,
        }
    }

    /// Grid on `[lo, hi]` with the evaluation contexts at its `n − 1` midpoints.
    pub fn midpoints(n: usize, lo: f64, hi: f64) -> Self {
        let experimental = linspace(lo, hi, n);
        let evaluation = experimental
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect();
        ContextPair {
            experimental,
            evaluation,
        }
    }
}

fn gaussian_log_density(y: f64, mean: f64, std: f64) -> f64 {
    let z = (y - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Bayesian simulator interface shared by all reward models.
pub trait SimulatorModel: Send + Sync {
    fn action_kind(&self) -> ActionKind;

    fn param_dim(&self) -> usize;

    /// Standard deviation of the Gaussian outcome noise.
    fn noise_std(&self) -> f64;

    /// One prior draw written into `out` (length `param_dim`).
    fn sample_prior_into(&self, rng: &mut RngStream, out: &mut [f64]);

    /// Marginal prior standard deviation of each parameter.
    fn prior_std(&self) -> Vec<f64>;

    fn mean_reward(&self, psi: &[f64], action: Action, context: f64) -> Result<f64>;

    /// Differentiable mean reward `[batch, D]` for every prior draw and design.
    ///
    /// `design` is `[D]` actions for continuous models and `[D, K]` relaxed
    /// treatment weights for discrete ones.
    fn mean_on_tape<'t>(
        &self,
        psi: &PriorBatch,
        design: Var<'t>,
        contexts: &[f64],
    ) -> Result<Var<'t>>;

    fn sample_prior(&self, rng: &mut RngStream, n: usize) -> PriorBatch {
        let p = self.param_dim();
        let mut data = vec![0.0; n * p];
        for row in data.chunks_mut(p) {
            self.sample_prior_into(rng, row);
        }
        PriorBatch(Tensor::new(vec![n, p], data).expect("sized above"))
    }

    /// Best expected reward at `context`.
    fn max_value(&self, psi: &[f64], context: f64) -> f64 {
        let a = self.argmax_action(psi, context);
        self.mean_reward(psi, a, context)
            .expect("argmax action is valid")
    }

    /// Reward-maximising action. The default enumerates discrete treatments
    /// (ties go to the lowest index) or scans a 2001-point grid.
    fn argmax_action(&self, psi: &[f64], context: f64) -> Action {
        let candidates: Vec<Action> = match self.action_kind() {
            ActionKind::Discrete { treatments } => (0..treatments).map(Action::Discrete).collect(),
            ActionKind::Continuous { lo, hi } => linspace(lo, hi, 2001)
                .into_iter()
                .map(Action::Continuous)
                .collect(),
        };
        let mut best = candidates[0];
        let mut best_value = f64::NEG_INFINITY;
        for a in candidates {
            let v = self
                .mean_reward(psi, a, context)
                .unwrap_or(f64::NEG_INFINITY);
            if v > best_value {
                best = a;
                best_value = v;
            }
        }
        best
    }

    /// Sum of Gaussian outcome log-densities over the dataset.
    fn log_likelihood(&self, psi: &[f64], data: &Dataset) -> Result<f64> {
        let std = self.noise_std();
        let mut total = 0.0;
        for ((&c, &a), &y) in data.contexts.iter().zip(&data.actions).zip(&data.outcomes) {
            total += gaussian_log_density(y, self.mean_reward(psi, a, c)?, std);
        }
        Ok(total)
    }
}

/// Noisy outcomes `[B, D]`: the differentiable mean plus reparameterised
/// Gaussian noise, so gradients reach the design through the mean.
pub fn sample_outcomes<'t>(
    model: &dyn SimulatorModel,
    psi: &PriorBatch,
    design: Var<'t>,
    contexts: &[f64],
    rng: &mut RngStream,
) -> Result<Var<'t>> {
    let mean = model.mean_on_tape(psi, design, contexts)?;
    let noise = rng.sample(
        crate::random::Dist::StandardNormal,
        &[psi.len(), contexts.len()],
    )?;
    mean.add(design.tape().constant(noise).scale(model.noise_std())?)
}

/// Four treatments, each a downward quadratic in the context pinned by its
/// values at `c = −3` and `c = 3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteQuadraticModel {
    /// Prior mean of `(ψ_{k,1}, ψ_{k,2})` per treatment.
    pub prior_means: Vec<[f64; 2]>,
    /// Diagonal prior variance per treatment.
    pub prior_variances: Vec<f64>,
    /// Outcome noise variance.
    pub noise_variance: f64,
}

impl Default for DiscreteQuadraticModel {
    fn default() -> Self {
        DiscreteQuadraticModel {
            prior_means: vec![[5.0, 15.0], [5.0, 15.0], [-2.0, -1.0], [-7.0, 3.0]],
            prior_variances: vec![9.0, 2.25, 1.21, 1.21],
            noise_variance: 0.1,
        }
    }
}

impl DiscreteQuadraticModel {
    pub fn treatments(&self) -> usize {
        self.prior_means.len()
    }

    /// Reward from the two endpoint values of one treatment.
    pub fn quadratic(at_minus3: f64, at_plus3: f64, context: f64) -> f64 {
        let gamma = (at_minus3 + at_plus3 + 18.0) / 2.0;
        let beta = (at_plus3 - gamma + 9.0) / 3.0;
        -context * context + beta * context + gamma
    }

    pub fn validate(&self) -> Result<()> {
        if self.prior_means.len() < 2 || self.prior_means.len() != self.prior_variances.len() {
            return Err(Error::Config(
                "discrete model needs at least 2 treatments with one variance each".into(),
            ));
        }
        if self.prior_variances.iter().any(|v| !(*v > 0.0)) || !(self.noise_variance > 0.0) {
            return Err(Error::Config("variances must be positive".into()));
        }
        Ok(())
    }
}

impl SimulatorModel for DiscreteQuadraticModel {
    fn action_kind(&self) -> ActionKind {
        ActionKind::Discrete {
            treatments: self.treatments(),
        }
    }

    fn param_dim(&self) -> usize {
        2 * self.treatments()
    }

    fn noise_std(&self) -> f64 {
        self.noise_variance.sqrt()
    }

    fn sample_prior_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        for (k, (mean, var)) in self
            .prior_means
            .iter()
            .zip(&self.prior_variances)
            .enumerate()
        {
            let std = var.sqrt();
            out[2 * k] = mean[0] + std * rng.standard_normal();
            out[2 * k + 1] = mean[1] + std * rng.standard_normal();
        }
    }

    fn prior_std(&self) -> Vec<f64> {
        self.prior_variances
            .iter()
            .flat_map(|v| [v.sqrt(), v.sqrt()])
            .collect()
    }

    fn mean_reward(&self, psi: &[f64], action: Action, context: f64) -> Result<f64> {
        match action {
            Action::Discrete(k) if k < self.treatments() => {
                Ok(Self::quadratic(psi[2 * k], psi[2 * k + 1], context))
            }
            other => Err(Error::invalid(format!(
                "invalid action {other:?} for a {}-treatment model",
                self.treatments()
            ))),
        }
    }

    fn mean_on_tape<'t>(
        &self,
        psi: &PriorBatch,
        design: Var<'t>,
        contexts: &[f64],
    ) -> Result<Var<'t>> {
        let k = self.treatments();
        let d = contexts.len();
        if design.shape() != [d, k] {
            return Err(Error::Shape {
                op: "discrete_mean",
                left: design.shape(),
                right: vec![d, k],
            });
        }
        let b = psi.len();
        let mut table = Vec::with_capacity(b * d * k);
        for row in psi.rows() {
            for &c in contexts {
                for t in 0..k {
                    table.push(Self::quadratic(row[2 * t], row[2 * t + 1], c));
                }
            }
        }
        let table = design.tape().constant(Tensor::new(vec![b, d, k], table)?);
        table.mul(design)?.sum(2)
    }
}

/// Gaussian bump `exp(−(a − g)² / h)` with `g = ψ0 + ψ1 c + ψ2 c²`, `h = ψ3`,
/// on a bounded action interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousBumpModel {
    pub prior_lo: f64,
    pub prior_hi: f64,
    pub noise_std: f64,
    pub action_lo: f64,
    pub action_hi: f64,
}

impl Default for ContinuousBumpModel {
    fn default() -> Self {
        ContinuousBumpModel {
            prior_lo: 0.1,
            prior_hi: 1.1,
            noise_std: 0.1,
            action_lo: -4.0,
            action_hi: 4.0,
        }
    }
}

impl ContinuousBumpModel {
    pub fn peak(psi: &[f64], context: f64) -> f64 {
        psi[0] + psi[1] * context + psi[2] * context * context
    }

    pub fn clip(&self, a: f64) -> f64 {
        a.clamp(self.action_lo, self.action_hi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior_hi > self.prior_lo) || !(self.prior_lo > 0.0) {
            return Err(Error::Config("bump prior needs 0 < lo < hi".into()));
        }
        if !(self.noise_std > 0.0) || !(self.action_hi > self.action_lo) {
            return Err(Error::Config(
                "bump model needs positive noise and lo < hi action bounds".into(),
            ));
        }
        Ok(())
    }
}

impl SimulatorModel for ContinuousBumpModel {
    fn action_kind(&self) -> ActionKind {
        ActionKind::Continuous {
            lo: self.action_lo,
            hi: self.action_hi,
        }
    }

    fn param_dim(&self) -> usize {
        4
    }

    fn noise_std(&self) -> f64 {
        self.noise_std
    }

    fn sample_prior_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = rng.uniform(self.prior_lo, self.prior_hi);
        }
    }

    fn prior_std(&self) -> Vec<f64> {
        vec![(self.prior_hi - self.prior_lo) / 12f64.sqrt(); 4]
    }

    fn mean_reward(&self, psi: &[f64], action: Action, context: f64) -> Result<f64> {
        match action {
            Action::Continuous(a) if (self.action_lo..=self.action_hi).contains(&a) => {
                let d = a - Self::peak(psi, context);
                Ok((-d * d / psi[3]).exp())
            }
            other => Err(Error::invalid(format!(
                "action {other:?} outside [{}, {}]",
                self.action_lo, self.action_hi
            ))),
        }
    }

    fn max_value(&self, psi: &[f64], context: f64) -> f64 {
        let g = Self::peak(psi, context);
        let d = self.clip(g) - g;
        (-d * d / psi[3]).exp()
    }

    fn argmax_action(&self, psi: &[f64], context: f64) -> Action {
        Action::Continuous(self.clip(Self::peak(psi, context)))
    }

    fn mean_on_tape<'t>(
        &self,
        psi: &PriorBatch,
        design: Var<'t>,
        contexts: &[f64],
    ) -> Result<Var<'t>> {
        let d = contexts.len();
        if design.shape() != [d] {
            return Err(Error::Shape {
                op: "bump_mean",
                left: design.shape(),
                right: vec![d],
            });
        }
        let b = psi.len();
        let mut peaks = Vec::with_capacity(b * d);
        let mut widths = Vec::with_capacity(b * d);
        for row in psi.rows() {
            for &c in contexts {
                peaks.push(Self::peak(row, c));
                widths.push(row[3]);
            }
        }
        let tape = design.tape();
        let peaks = tape.constant(Tensor::new(vec![b, d], peaks)?);
        let widths = tape.constant(Tensor::new(vec![b, d], widths)?);
        Ok(peaks.sub(design)?.square()?.div(widths)?.neg().exp())
    }
}

/// One-parameter location model: the reward is `ψ` itself, whatever the
/// action. Its posterior is available in closed form, which makes it useful
/// for checking inference code.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLocationModel {
    pub prior_mean: f64,
    pub prior_std: f64,
    pub noise_std: f64,
}

impl SimulatorModel for GaussianLocationModel {
    fn action_kind(&self) -> ActionKind {
        ActionKind::Continuous { lo: -1.0, hi: 1.0 }
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn noise_std(&self) -> f64 {
        self.noise_std
    }

    fn sample_prior_into(&self, rng: &mut RngStream, out: &mut [f64]) {
        out[0] = self.prior_mean + self.prior_std * rng.standard_normal();
    }

    fn prior_std(&self) -> Vec<f64> {
        vec![self.prior_std]
    }

    fn mean_reward(&self, psi: &[f64], _action: Action, _context: f64) -> Result<f64> {
        Ok(psi[0])
    }

    fn max_value(&self, psi: &[f64], _context: f64) -> f64 {
        psi[0]
    }

    fn argmax_action(&self, _psi: &[f64], _context: f64) -> Action {
        Action::Continuous(0.0)
    }

    fn mean_on_tape<'t>(
        &self,
        psi: &PriorBatch,
        design: Var<'t>,
        contexts: &[f64],
    ) -> Result<Var<'t>> {
        let b = psi.len();
        let d = contexts.len();
        let data = psi
            .rows()
            .flat_map(|r| std::iter::repeat_n(r[0], d))
            .collect();
        let base = design.tape().constant(Tensor::new(vec![b, d], data)?);
        // zero-weighted design keeps the node on the graph
        base.add(design.scale(0.0)?.sum_all())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::finite_difference;
    use crate::autodiff::Tape;

    const PRIOR_MEANS: [[f64; 2]; 4] = [[5.0, 15.0], [5.0, 15.0], [-2.0, -1.0], [-7.0, 3.0]];

    fn prior_mean_psi() -> Vec<f64> {
        PRIOR_MEANS.iter().flatten().copied().collect()
    }

    #[test]
    fn discrete_endpoints() {
        let m = DiscreteQuadraticModel::default();
        let psi = prior_mean_psi();
        assert_eq!(m.mean_reward(&psi, Action::Discrete(0), -3.0).unwrap(), 5.0);
        assert_eq!(m.mean_reward(&psi, Action::Discrete(0), 3.0).unwrap(), 15.0);
    }

    #[test]
    fn discrete_endpoint_identity_random_psi() {
        let m = DiscreteQuadraticModel::default();
        let mut rng = RngStream::new(1);
        let batch = m.sample_prior(&mut rng, 10_000);
        for psi in batch.rows() {
            for k in 0..4 {
                let lo = m.mean_reward(psi, Action::Discrete(k), -3.0).unwrap();
                let hi = m.mean_reward(psi, Action::Discrete(k), 3.0).unwrap();
                assert!((lo - psi[2 * k]).abs() < 1e-12);
                assert!((hi - psi[2 * k + 1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn discrete_prior_moments() {
        let m = DiscreteQuadraticModel::default();
        let mut rng = RngStream::new(2);
        let n = 100_000;
        let batch = m.sample_prior(&mut rng, n);
        for k in 0..4 {
            let se = (m.prior_variances[k] / n as f64).sqrt();
            for j in 0..2 {
                let mean = batch.rows().map(|r| r[2 * k + j]).sum::<f64>() / n as f64;
                assert!(
                    (mean - PRIOR_MEANS[k][j]).abs() < 3.0 * se,
                    "k={k} j={j} {mean}"
                );
            }
        }
    }

    #[test]
    fn discrete_max_value_tie_breaks_low() {
        let m = DiscreteQuadraticModel::default();
        let psi = prior_mean_psi();
        // enumerate through mean_reward
        let values: Vec<f64> = (0..4)
            .map(|k| m.mean_reward(&psi, Action::Discrete(k), 3.0).unwrap())
            .collect();
        assert_eq!(values, vec![15.0, 15.0, -1.0, 3.0]);
        assert_eq!(m.max_value(&psi, 3.0), 15.0);
        assert_eq!(m.argmax_action(&psi, 3.0), Action::Discrete(0));
    }

    #[test]
    fn discrete_rejects_continuous_action() {
        let m = DiscreteQuadraticModel::default();
        assert!(m
            .mean_reward(&prior_mean_psi(), Action::Continuous(1.0), 0.0)
            .is_err());
        assert!(m
            .mean_reward(&prior_mean_psi(), Action::Discrete(4), 0.0)
            .is_err());
    }

    struct Shifted(DiscreteQuadraticModel, f64);

    impl SimulatorModel for Shifted {
        fn action_kind(&self) -> ActionKind {
            self.0.action_kind()
        }
        fn param_dim(&self) -> usize {
            self.0.param_dim()
        }
        fn noise_std(&self) -> f64 {
            self.0.noise_std()
        }
        fn sample_prior_into(&self, rng: &mut RngStream, out: &mut [f64]) {
            self.0.sample_prior_into(rng, out)
        }
        fn prior_std(&self) -> Vec<f64> {
            self.0.prior_std()
        }
        fn mean_reward(&self, psi: &[f64], a: Action, c: f64) -> Result<f64> {
            Ok(self.0.mean_reward(psi, a, c)? + self.1)
        }
        fn mean_on_tape<'t>(&self, p: &PriorBatch, d: Var<'t>, c: &[f64]) -> Result<Var<'t>> {
            self.0.mean_on_tape(p, d, c)?.add_scalar(self.1)
        }
    }

    #[test]
    fn argmax_invariant_to_constant_shift() {
        let base = DiscreteQuadraticModel::default();
        let shifted = Shifted(base.clone(), 123.5);
        let mut rng = RngStream::new(3);
        let batch = base.sample_prior(&mut rng, 500);
        for psi in batch.rows() {
            for c in [1.0, 2.0, 3.0] {
                assert_eq!(base.argmax_action(psi, c), shifted.argmax_action(psi, c));
            }
        }
    }

    #[test]
    fn bump_values() {
        let m = ContinuousBumpModel::default();
        let psi = [0.5; 4];
        assert_eq!(
            m.mean_reward(&psi, Action::Continuous(3.5), 2.0).unwrap(),
            1.0
        );
        // exp(−d²/0.5) = 0.5 at d = sqrt(0.5 ln 2)
        let a = 3.5 + (0.5 * 2f64.ln()).sqrt();
        assert!((a - 4.088_705_011).abs() < 1e-9);
        let wide = ContinuousBumpModel {
            action_hi: 5.0,
            ..Default::default()
        };
        assert!((wide.mean_reward(&psi, Action::Continuous(a), 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(m.mean_reward(&psi, Action::Continuous(a), 2.0).is_err());
    }

    #[test]
    fn bump_max_value_and_clip() {
        let m = ContinuousBumpModel::default();
        let inside = [0.5; 4];
        assert_eq!(m.max_value(&inside, 2.0), 1.0);
        assert_eq!(m.argmax_action(&inside, 2.0), Action::Continuous(3.5));
        // g = 5 with ψ3 = 1
        let outside = [5.0, 0.0, 0.0, 1.0];
        assert_eq!(m.argmax_action(&outside, 0.7), Action::Continuous(4.0));
        assert!((m.max_value(&outside, 0.7) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn bump_prior_support_and_regret() {
        let m = ContinuousBumpModel::default();
        let mut rng = RngStream::new(4);
        let batch = m.sample_prior(&mut rng, 2000);
        let mut rng_a = RngStream::new(5);
        for psi in batch.rows() {
            assert!(psi.iter().all(|x| (0.1..=1.1).contains(x)));
            for c in linspace(-3.5, 3.5, 8) {
                let mstar = m.max_value(psi, c);
                // far outside the bounds the bump underflows to zero
                assert!((0.0..=1.0).contains(&mstar));
                let g = ContinuousBumpModel::peak(psi, c);
                assert_eq!(mstar == 1.0, (-4.0..=4.0).contains(&g));
                let a = rng_a.uniform(-4.0, 4.0);
                let f = m.mean_reward(psi, Action::Continuous(a), c).unwrap();
                assert!(mstar - f >= 0.0);
            }
        }
    }

    #[test]
    fn bump_gradient_matches_finite_differences() {
        let m = ContinuousBumpModel::default();
        let mut rng = RngStream::new(6);
        let psi = m.sample_prior(&mut rng, 3);
        let contexts = vec![-1.0, 0.0, 0.5, 1.5];
        let design = Tensor::vector(vec![0.3, 0.9, 1.2, 2.0]);
        let noise = rng
            .sample(crate::random::Dist::StandardNormal, &[3, 4])
            .unwrap();
        fn outcome<'t>(
            m: &ContinuousBumpModel,
            psi: &PriorBatch,
            contexts: &[f64],
            noise: &Tensor,
            tape: &'t Tape,
            v: &[Var<'t>],
        ) -> Result<Var<'t>> {
            let mean = m.mean_on_tape(psi, v[0], contexts)?;
            let eps = tape.constant(noise.clone());
            Ok(mean.add(eps.scale(m.noise_std)?)?.sum_all())
        }
        let err = crate::autodiff::gradcheck::max_relative_error(
            std::slice::from_ref(&design),
            |t, v| outcome(&m, &psi, &contexts, &noise, t, v),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
        let fd = finite_difference(
            std::slice::from_ref(&design),
            &|t, v| outcome(&m, &psi, &contexts, &noise, t, v),
            1e-5,
        )
        .unwrap();
        assert!(fd[0].all_finite());
    }

    #[test]
    fn on_tape_mean_matches_pointwise() {
        let m = DiscreteQuadraticModel::default();
        let mut rng = RngStream::new(7);
        let psi = m.sample_prior(&mut rng, 4);
        let contexts = vec![-3.0, -2.0];
        let tape = Tape::new();
        let mut onehot = Tensor::zeros(&[2, 4]);
        onehot.data_mut()[2] = 1.0;
        onehot.data_mut()[4] = 1.0;
        let mean = m
            .mean_on_tape(&psi, tape.constant(onehot), &contexts)
            .unwrap();
        for (b, row) in psi.rows().enumerate() {
            let want0 = m.mean_reward(row, Action::Discrete(2), -3.0).unwrap();
            let want1 = m.mean_reward(row, Action::Discrete(0), -2.0).unwrap();
            assert_eq!(mean.value().row(b), &[want0, want1]);
        }
    }

    #[test]
    fn log_likelihood_values() {
        let m = DiscreteQuadraticModel::default();
        let psi = prior_mean_psi();
        let y = m.mean_reward(&psi, Action::Discrete(1), -2.0).unwrap();
        let one = Dataset::new(vec![-2.0], vec![Action::Discrete(1)], vec![y]).unwrap();
        let ll = m.log_likelihood(&psi, &one).unwrap();
        assert!((ll - 0.232_354_013).abs() < 1e-9, "{ll}");
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI * 0.1).ln()).abs() < 1e-12);

        let two = Dataset::new(
            vec![-2.0, -1.0],
            vec![Action::Discrete(1), Action::Discrete(3)],
            vec![y, 1.7],
        )
        .unwrap();
        let second = Dataset::new(vec![-1.0], vec![Action::Discrete(3)], vec![1.7]).unwrap();
        let total = m.log_likelihood(&psi, &two).unwrap();
        assert!((total - ll - m.log_likelihood(&psi, &second).unwrap()).abs() < 1e-12);

        // product of densities computed directly
        let density = |y: f64, mean: f64| {
            (-(y - mean).powi(2) / (2.0 * 0.1)).exp() / (2.0 * std::f64::consts::PI * 0.1).sqrt()
        };
        let mean2 = m.mean_reward(&psi, Action::Discrete(3), -1.0).unwrap();
        let product = density(y, y) * density(1.7, mean2);
        assert!((product.ln() - total).abs() < 1e-10);
    }

    #[test]
    fn dataset_length_mismatch_rejected() {
        assert!(Dataset::new(vec![0.0], vec![], vec![1.0]).is_err());
    }

    #[test]
    fn context_grids() {
        let d = ContextPair::mirrored(10, -3.0, -1.0);
        assert_eq!(d.experimental.len(), 10);
        assert_eq!(d.experimental[0], -3.0);
        assert_eq!(d.experimental[9], -1.0);
        assert_eq!(d.evaluation[0], 3.0);
        let c = ContextPair::midpoints(20, -3.5, 3.5);
        assert_eq!(c.evaluation.len(), 19);
        assert!((c.evaluation[0] - 0.5 * (c.experimental[0] + c.experimental[1])).abs() < 1e-15);
    }

    #[test]
    fn outcome_noise_has_model_variance() {
        let m = DiscreteQuadraticModel::default();
        let psi = PriorBatch::new(
            Tensor::new(vec![100_000, 8], prior_mean_psi().repeat(100_000)).unwrap(),
        )
        .unwrap();
        let tape = Tape::new();
        let mut onehot = Tensor::zeros(&[1, 4]);
        onehot.data_mut()[1] = 1.0;
        let mut rng = RngStream::new(12);
        let y = sample_outcomes(&m, &psi, tape.constant(onehot), &[-2.0], &mut rng).unwrap();
        let y = y.value();
        let mean = m
            .mean_reward(&prior_mean_psi(), Action::Discrete(1), -2.0)
            .unwrap();
        let n = y.numel() as f64;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // se of a normal variance estimate is σ² sqrt(2/n)
        assert!((var - 0.1).abs() < 3.0 * 0.1 * (2.0 / n).sqrt(), "{var}");
    }
}
