//! Joint stochastic-gradient ascent on designs and critic.
//!
//! Each step samples a batch of prior parameters, computes the max-values
//! `m*` on the evaluation contexts, simulates outcomes under the current
//! (relaxed) designs, and ascends the InfoNCE bound with respect to both the
//! design parameters and the critic. Discrete treatments are relaxed with a
//! Gumbel-Softmax policy whose logits are `log α`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mi_bound::{infonce, score_matrix, Mode, SeparableCritic};
use crate::models::{sample_outcomes, Action, ActionKind, ContextPair, PriorBatch, SimulatorModel};
use crate::random::RngStream;
use crate::stats::MeanSe;

/// Trainable design parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    /// One real action per experimental context.
    Continuous { actions: Vec<f64> },
    /// Policy logits `[D, K]`, temperature and straight-through flag.
    DiscretePolicy {
        logits: Tensor,
        temperature: f64,
        hard: bool,
    },
}

impl DesignSpec {
    /// Starting point: uniform logits for discrete models, standard normal
    /// draws clipped to the bounds for continuous ones.
    pub fn init(kind: ActionKind, d: usize, tau0: f64, rng: &mut RngStream) -> Self {
        match kind {
            ActionKind::Discrete { treatments } => DesignSpec::DiscretePolicy {
                logits: Tensor::zeros(&[d, treatments]),
                temperature: tau0,
                hard: false,
            },
            ActionKind::Continuous { lo, hi } => DesignSpec::Continuous {
                actions: (0..d)
                    .map(|_| rng.standard_normal().clamp(lo, hi))
                    .collect(),
            },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            DesignSpec::Continuous { actions } => actions.len(),
            DesignSpec::DiscretePolicy { logits, .. } => logits.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn matches(&self, kind: ActionKind) -> bool {
        match (self, kind) {
            (DesignSpec::Continuous { .. }, ActionKind::Continuous { .. }) => true,
            (DesignSpec::DiscretePolicy { logits, .. }, ActionKind::Discrete { treatments }) => {
                logits.shape()[1] == treatments
            }
            _ => false,
        }
    }

    fn tensor_mut(&mut self) -> &mut Tensor {
        match self {
            DesignSpec::Continuous { .. } => unreachable!("continuous designs are stored as a Vec"),
            DesignSpec::DiscretePolicy { logits, .. } => logits,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub tau0: f64,
    pub tau_factor: f64,
    pub tau_interval: usize,
    /// Fraction of final steps run in straight-through hard mode.
    pub hard_fraction: f64,
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50_000,
            batch: 2048,
            adam: AdamConfig::default(),
            tau0: 2.0,
            tau_factor: 0.5,
            tau_interval: 10_000,
            hard_fraction: 0.2,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config(format!(
                "batch must be at least 2, got {}",
                self.batch
            )));
        }
        if self.tau_interval == 0 || (self.steps > 0 && self.tau_interval > self.steps) {
            return Err(Error::Config(format!(
                "tau_interval must be in 1..=steps, got {}",
                self.tau_interval
            )));
        }
        if !(self.tau0 > 0.0) || !(self.tau_factor > 0.0) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(Error::Config("hard_fraction must be in [0, 1]".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    /// Mean of `−bound` over the steps since the previous record.
    pub loss: f64,
    pub bound: f64,
    pub lr: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

/// Temperature and hard-mode flag for `step`.
pub fn anneal_schedule(step: usize, cfg: &TrainConfig) -> (f64, bool) {
    let tau = cfg.tau0 * cfg.tau_factor.powi((step / cfg.tau_interval) as i32);
    let hard = step as f64 >= (1.0 - cfg.hard_fraction) * cfg.steps as f64;
    (tau, hard)
}

/// Gumbel-Softmax sample `softmax((logits + g) / τ)` row-wise, with one
/// Gumbel draw per entry. In hard mode the forward value is the one-hot
/// argmax while gradients flow through the soft sample.
pub fn gumbel_softmax_relax<'t>(
    logits: Var<'t>,
    tau: f64,
    rng: &mut RngStream,
    hard: bool,
) -> Result<Var<'t>> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let shape = logits.shape();
    let g = rng.sample(crate::random::Dist::Gumbel01, &shape)?;
    let soft = logits
        .add(logits.tape().constant(g))?
        .scale(1.0 / tau)?
        .softmax(1)?;
    if !hard {
        return Ok(soft);
    }
    let v = soft.value();
    let k = shape[1];
    let mut onehot = Tensor::zeros(&shape);
    for r in 0..shape[0] {
        onehot.data_mut()[r * k + argmax(v.row(r))] = 1.0;
    }
    soft.straight_through(onehot)
}

/// Outcomes under relaxed treatment weights `π: [D, K]`: per design the
/// π-weighted mean reward plus noise.
pub fn relaxed_outcomes<'t>(
    model: &dyn SimulatorModel,
    psi: &PriorBatch,
    pi: Var<'t>,
    contexts: &[f64],
    rng: &mut RngStream,
) -> Result<Var<'t>> {
    if !matches!(model.action_kind(), ActionKind::Discrete { .. }) {
        return Err(Error::invalid("relaxed outcomes need a discrete model"));
    }
    sample_outcomes(model, psi, pi, contexts, rng)
}

/// Lowest index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Concrete designs: the argmax treatment of each logit row, or the clipped
/// continuous actions.
pub fn extract_design(spec: &DesignSpec, kind: ActionKind) -> Vec<Action> {
    match spec {
        DesignSpec::DiscretePolicy { logits, .. } => (0..logits.shape()[0])
            .map(|r| Action::Discrete(argmax(logits.row(r))))
            .collect(),
        DesignSpec::Continuous { actions } => {
            let (lo, hi) = match kind {
                ActionKind::Continuous { lo, hi } => (lo, hi),
                ActionKind::Discrete { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            };
            actions
                .iter()
                .map(|a| Action::Continuous(a.clamp(lo, hi)))
                .collect()
        }
    }
}

/// Tape representation of concrete designs: actions `[D]` or one-hot `[D, K]`.
pub fn design_tensor(designs: &[Action], kind: ActionKind) -> Result<Tensor> {
    match kind {
        ActionKind::Discrete { treatments } => {
            let mut t = Tensor::zeros(&[designs.len(), treatments]);
            for (d, a) in designs.iter().enumerate() {
                match a {
                    Action::Discrete(k) if *k < treatments => {
                        t.data_mut()[d * treatments + k] = 1.0
                    }
                    other => {
                        return Err(Error::invalid(format!(
                            "design {other:?} is not one of {treatments} treatments"
                        )))
                    }
                }
            }
            Ok(t)
        }
        ActionKind::Continuous { lo, hi } => {
            let mut out = Vec::with_capacity(designs.len());
            for a in designs {
                match a {
                    Action::Continuous(x) if (lo..=hi).contains(x) => out.push(*x),
                    other => {
                        return Err(Error::invalid(format!(
                            "design {other:?} outside [{lo}, {hi}]"
                        )))
                    }
                }
            }
            Ok(Tensor::vector(out))
        }
    }
}

/// Max-values `[B, D*]` for each prior draw.
pub fn max_values(model: &dyn SimulatorModel, psi: &PriorBatch, contexts: &[f64]) -> Tensor {
    let data = psi
        .rows()
        .flat_map(|row| contexts.iter().map(move |&c| model.max_value(row, c)))
        .collect();
    Tensor::new(vec![psi.len(), contexts.len()], data).expect("sized")
}

enum Designs {
    Trainable(DesignSpec),
    Fixed(Tensor),
}

fn run(
    model: &dyn SimulatorModel,
    contexts: &ContextPair,
    mut designs: Designs,
    mut critic: SeparableCritic,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<(Designs, SeparableCritic, TrainLog)> {
    cfg.validate()?;
    let kind = model.action_kind();
    let d = contexts.experimental.len();
    if let Designs::Trainable(spec) = &designs {
        if !spec.matches(kind) || spec.len() != d {
            return Err(Error::invalid(format!(
                "design of length {} does not fit {d} contexts of {kind:?}",
                spec.len()
            )));
        }
    }
    let mut log = TrainLog::default();
    if cfg.steps == 0 {
        return Ok((designs, critic, log));
    }

    let mut design_param = match &designs {
        Designs::Trainable(DesignSpec::Continuous { actions }) => {
            Some(Tensor::vector(actions.clone()))
        }
        Designs::Trainable(DesignSpec::DiscretePolicy { logits, .. }) => Some(logits.clone()),
        Designs::Fixed(_) => None,
    };
    let mut adam = {
        let mut params: Vec<&Tensor> = design_param.iter().collect();
        params.extend(critic.params());
        AdamState::new(cfg.adam, &params)
    };

    let mut window = Vec::new();
    for step in 0..cfg.steps {
        let (tau, hard) = anneal_schedule(step, cfg);
        let step_rng = rng.split_index("step", step as u64);
        let psi = model.sample_prior(&mut step_rng.split("prior"), cfg.batch);
        let m_star = max_values(model, &psi, &contexts.evaluation);

        let tape = Tape::new();
        // (node receiving the gradient, node feeding the simulator)
        let (param_var, relaxed) = match (&designs, &design_param) {
            (Designs::Fixed(t), _) => {
                let c = tape.constant(t.clone());
                (c, c)
            }
            (Designs::Trainable(DesignSpec::Continuous { .. }), Some(p)) => {
                let a = tape.param(p.clone());
                (a, a)
            }
            (Designs::Trainable(DesignSpec::DiscretePolicy { .. }), Some(p)) => {
                let logits = tape.param(p.clone());
                let pi = gumbel_softmax_relax(logits, tau, &mut step_rng.split("gumbel"), hard)?;
                (logits, pi)
            }
            _ => unreachable!("trainable designs always carry a parameter"),
        };
        let y = sample_outcomes(
            model,
            &psi,
            relaxed,
            &contexts.experimental,
            &mut step_rng.split("noise"),
        )?;
        let vars = critic.register(&tape, true);
        let (s, stats) = score_matrix(&critic, &vars, y, tape.constant(m_star), Mode::Train)?;
        let bound = infonce(s)?;
        let value = bound.item();
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        let loss = bound.neg();
        let grads = tape.backward(loss)?;

        let mut grad_list: Vec<Option<&Tensor>> = Vec::new();
        if design_param.is_some() {
            grad_list.push(grads.get(param_var));
        }
        grad_list.extend(vars.vars().iter().map(|v| grads.get(*v)));
        {
            let mut params: Vec<&mut Tensor> = design_param.iter_mut().collect();
            params.extend(critic.params_mut());
            adam.step(&mut params, &grad_list)?;
        }
        critic.commit_stats(stats);
        if let (
            Designs::Trainable(DesignSpec::Continuous { .. }),
            Some(p),
            ActionKind::Continuous { lo, hi },
        ) = (&designs, &mut design_param, kind)
        {
            p.data_mut().iter_mut().for_each(|a| *a = a.clamp(lo, hi));
        }

        window.push(value);
        if (step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            log.records.push(TrainRecord {
                step: step + 1,
                loss: -mean,
                bound: mean,
                lr: adam.effective_lr(),
                tau,
            });
            window.clear();
        }
    }

    if let (Designs::Trainable(spec), Some(p)) = (&mut designs, design_param) {
        let (tau, hard) = anneal_schedule(cfg.steps - 1, cfg);
        match spec {
            DesignSpec::Continuous { actions } => *actions = p.into_data(),
            DesignSpec::DiscretePolicy {
                temperature,
                hard: h,
                ..
            } => {
                *temperature = tau;
                *h = hard;
                *spec.tensor_mut() = p;
            }
        }
    }
    let final_designs = match &designs {
        Designs::Fixed(t) => t.clone(),
        Designs::Trainable(spec) => design_tensor(&extract_design(spec, kind), kind)?,
    };
    recalibrate_norms(
        model,
        contexts,
        &final_designs,
        &mut critic,
        cfg.batch,
        &rng.split("recalibrate"),
    )?;
    Ok((designs, critic, log))
}

/// Forward passes with frozen weights used to set batch-norm statistics
/// after training. The moving averages lag the weights, which matters when
/// pre-normalisation features have a large mean relative to their spread.
pub const RECALIBRATION_BATCHES: usize = 20;

/// Replaces the critic's batch-norm running statistics with statistics
/// pooled over fresh batches simulated under `designs`. No-op for critics
/// without batch norm.
pub fn recalibrate_norms(
    model: &dyn SimulatorModel,
    contexts: &ContextPair,
    designs: &Tensor,
    critic: &mut SeparableCritic,
    batch: usize,
    rng: &RngStream,
) -> Result<()> {
    if critic.outcome_encoder.norm.is_none() && critic.max_value_encoder.norm.is_none() {
        return Ok(());
    }
    let mut pooled = Vec::with_capacity(RECALIBRATION_BATCHES);
    for i in 0..RECALIBRATION_BATCHES {
        let r = rng.split_index("batch", i as u64);
        let psi = model.sample_prior(&mut r.split("prior"), batch);
        let m_star = max_values(model, &psi, &contexts.evaluation);
        let tape = Tape::new();
        let y = sample_outcomes(
            model,
            &psi,
            tape.constant(designs.clone()),
            &contexts.experimental,
            &mut r.split("noise"),
        )?;
        let vars = critic.register(&tape, false);
        let (_, stats) = score_matrix(critic, &vars, y, tape.constant(m_star), Mode::Train)?;
        pooled.push(stats);
    }
    critic.set_pooled_stats(&pooled);
    Ok(())
}

/// Trains designs and critic jointly. Returns the final design parameters,
/// the trained critic and the training log.
pub fn train_designs(
    model: &dyn SimulatorModel,
    contexts: &ContextPair,
    init: DesignSpec,
    critic: SeparableCritic,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<(DesignSpec, SeparableCritic, TrainLog)> {
    let (designs, critic, log) = run(model, contexts, Designs::Trainable(init), critic, cfg, rng)?;
    match designs {
        Designs::Trainable(spec) => Ok((spec, critic, log)),
        Designs::Fixed(_) => unreachable!(),
    }
}

/// Trains only the critic against fixed concrete designs.
pub fn train_critic(
    model: &dyn SimulatorModel,
    contexts: &ContextPair,
    designs: &[Action],
    critic: SeparableCritic,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<(SeparableCritic, TrainLog)> {
    let t = design_tensor(designs, model.action_kind())?;
    if t.shape()[0] != contexts.experimental.len() {
        return Err(Error::invalid(format!(
            "{} designs for {} contexts",
            t.shape()[0],
            contexts.experimental.len()
        )));
    }
    let (_, critic, log) = run(model, contexts, Designs::Fixed(t), critic, cfg, rng)?;
    Ok((critic, log))
}

/// Bound on fresh batches with the critic in inference mode.
pub fn evaluate_bound(
    model: &dyn SimulatorModel,
    contexts: &ContextPair,
    designs: &[Action],
    critic: &SeparableCritic,
    batch: usize,
    n_batches: usize,
    rng: &RngStream,
) -> Result<MeanSe> {
    let t = design_tensor(designs, model.action_kind())?;
    let mut values = Vec::with_capacity(n_batches);
    for i in 0..n_batches {
        let r = rng.split_index("eval", i as u64);
        let psi = model.sample_prior(&mut r.split("prior"), batch);
        let m_star = max_values(model, &psi, &contexts.evaluation);
        let tape = Tape::new();
        let y = sample_outcomes(
            model,
            &psi,
            tape.constant(t.clone()),
            &contexts.experimental,
            &mut r.split("noise"),
        )?;
        let vars = critic.register(&tape, false);
        let (s, _) = score_matrix(critic, &vars, y, tape.constant(m_star), Mode::Infer)?;
        let v = infonce(s)?.item();
        if !v.is_finite() {
            return Err(Error::Diverged { step: i });
        }
        values.push(v);
    }
    Ok(MeanSe::of(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mi_bound::CriticPreset;
    use crate::models::{ContinuousBumpModel, DiscreteQuadraticModel};

    fn small(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch: 32,
            tau_interval: steps.max(1),
            log_interval: 5,
            ..Default::default()
        }
    }

    #[test]
    fn anneal_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(anneal_schedule(0, &cfg), (2.0, false));
        assert_eq!(anneal_schedule(20_000, &cfg), (0.5, false));
        assert_eq!(anneal_schedule(40_000, &cfg), (0.125, true));
        assert_eq!(anneal_schedule(39_999, &cfg), (0.25, false));
    }

    #[test]
    fn extract_examples() {
        let kind = ActionKind::Discrete { treatments: 4 };
        let spec = DesignSpec::DiscretePolicy {
            logits: Tensor::matrix(2, 4, vec![0.0, 5.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0]).unwrap(),
            temperature: 1.0,
            hard: false,
        };
        assert_eq!(
            extract_design(&spec, kind),
            vec![Action::Discrete(1), Action::Discrete(0)]
        );
        let spec = DesignSpec::Continuous {
            actions: vec![4.7, -0.5],
        };
        let kind = ActionKind::Continuous { lo: -4.0, hi: 4.0 };
        assert_eq!(
            extract_design(&spec, kind),
            vec![Action::Continuous(4.0), Action::Continuous(-0.5)]
        );
    }

    #[test]
    fn gumbel_argmax_frequencies() {
        let alpha = [0.1, 0.2, 0.3, 0.4];
        let n = 100_000;
        let row: Vec<f64> = alpha.iter().map(|a: &f64| a.ln()).collect();
        let tape = Tape::new();
        let logits = tape.constant(Tensor::new(vec![n, 4], row.repeat(n)).unwrap());
        let pi = gumbel_softmax_relax(logits, 0.5, &mut RngStream::new(1), true).unwrap();
        let v = pi.value();
        let mut counts = [0.0; 4];
        for r in 0..n {
            let row = v.row(r);
            assert_eq!(row.iter().filter(|x| **x == 1.0).count(), 1);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            counts[argmax(row)] += 1.0 / n as f64;
        }
        for (c, a) in counts.iter().zip(alpha) {
            assert!((c - a).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn soft_rows_sum_to_one() {
        let tape = Tape::new();
        let logits = tape.param(Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 0.0, 0.0, 0.0]).unwrap());
        let pi = gumbel_softmax_relax(logits, 2.0, &mut RngStream::new(2), false).unwrap();
        for r in 0..2 {
            let s: f64 = pi.value().row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(gumbel_softmax_relax(logits, 0.0, &mut RngStream::new(2), false).is_err());
    }

    #[test]
    fn relaxed_mean_is_linear_in_weights() {
        let m = DiscreteQuadraticModel::default();
        let psi = m.sample_prior(&mut RngStream::new(3), 3);
        let contexts = [-2.0, -1.0];
        let tape = Tape::new();
        let pi = tape
            .param(Tensor::matrix(2, 4, vec![0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25]).unwrap());
        let mean = m.mean_on_tape(&psi, pi, &contexts).unwrap();
        let grads = tape.backward(mean.sum_all()).unwrap();
        let g = grads.get(pi).unwrap();
        for (d, &c) in contexts.iter().enumerate() {
            for k in 0..4 {
                let want: f64 = psi
                    .rows()
                    .map(|r| m.mean_reward(r, Action::Discrete(k), c).unwrap())
                    .sum();
                assert!((g.data()[d * 4 + k] - want).abs() < 1e-9);
            }
        }
        for (b, r) in psi.rows().enumerate() {
            let want: f64 = [0.1, 0.2, 0.3, 0.4]
                .iter()
                .enumerate()
                .map(|(k, w)| w * m.mean_reward(r, Action::Discrete(k), -2.0).unwrap())
                .sum();
            assert!((mean.value().data()[b * 2] - want).abs() < 1e-9);
        }
        let err = relaxed_outcomes(
            &ContinuousBumpModel::default(),
            &psi,
            pi,
            &contexts,
            &mut RngStream::new(3),
        );
        assert!(err.is_err());
    }

    #[test]
    fn zero_critic_gives_zero_design_gradient() {
        let m = ContinuousBumpModel::default();
        let ctx = ContextPair::midpoints(3, -3.5, 3.5);
        let mut critic =
            SeparableCritic::new(CriticPreset::Continuous, 3, 2, &mut RngStream::new(4));
        critic.zero_parameters();
        let psi = m.sample_prior(&mut RngStream::new(5), 16);
        let tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![-1.0, 0.0, 1.0]));
        let y = sample_outcomes(&m, &psi, a, &ctx.experimental, &mut RngStream::new(6)).unwrap();
        let vars = critic.register(&tape, false);
        let mstar = tape.constant(max_values(&m, &psi, &ctx.evaluation));
        let (s, _) = score_matrix(&critic, &vars, y, mstar, Mode::Train).unwrap();
        let bound = infonce(s).unwrap();
        assert_eq!(bound.item(), 0.0);
        let grads = tape.backward(bound).unwrap();
        assert!(grads
            .get(a)
            .is_none_or(|g| g.data().iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn zero_steps_returns_inputs() {
        let m = DiscreteQuadraticModel::default();
        let ctx = ContextPair::mirrored(3, -3.0, -1.0);
        let critic = SeparableCritic::new(CriticPreset::Discrete, 3, 3, &mut RngStream::new(7));
        let init = DesignSpec::init(m.action_kind(), 3, 2.0, &mut RngStream::new(7));
        let (spec, out, log) = train_designs(
            &m,
            &ctx,
            init.clone(),
            critic.clone(),
            &small(0),
            &RngStream::new(8),
        )
        .unwrap();
        assert_eq!(spec, init);
        assert_eq!(out, critic);
        assert!(log.records.is_empty());
    }

    #[test]
    fn recalibrated_critic_matches_batch_statistics() {
        let m = DiscreteQuadraticModel::default();
        let ctx = ContextPair::mirrored(10, -3.0, -1.0);
        let designs: Vec<Action> = (0..10).map(|i| Action::Discrete(i % 2)).collect();
        let rng = RngStream::new(4);
        let critic = SeparableCritic::new(CriticPreset::Discrete, 10, 10, &mut rng.split("critic"));
        let cfg = TrainConfig {
            batch: 256,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..small(150)
        };
        let (critic, _) = train_critic(&m, &ctx, &designs, critic, &cfg, &rng).unwrap();

        let t = design_tensor(&designs, m.action_kind()).unwrap();
        let r = RngStream::new(5);
        let psi = m.sample_prior(&mut r.split("prior"), 1024);
        let m_star = max_values(&m, &psi, &ctx.evaluation);
        let bound = |mode| {
            let tape = Tape::new();
            let y = sample_outcomes(
                &m,
                &psi,
                tape.constant(t.clone()),
                &ctx.experimental,
                &mut r.split("noise"),
            )
            .unwrap();
            let vars = critic.register(&tape, false);
            let (s, _) =
                score_matrix(&critic, &vars, y, tape.constant(m_star.clone()), mode).unwrap();
            infonce(s).unwrap().item()
        };
        let (infer, batch) = (bound(Mode::Infer), bound(Mode::Train));
        assert!(batch > 0.5, "{batch}");
        assert!(
            (infer - batch).abs() < 0.05,
            "infer {infer} vs batch statistics {batch}"
        );
    }

    #[test]
    fn training_is_deterministic_and_bounded() {
        let m = ContinuousBumpModel::default();
        let ctx = ContextPair::midpoints(4, -3.5, 3.5);
        let go = || {
            let rng = RngStream::new(9);
            let critic =
                SeparableCritic::new(CriticPreset::Continuous, 4, 3, &mut rng.split("critic"));
            let init = DesignSpec::init(m.action_kind(), 4, 2.0, &mut rng.split("init"));
            train_designs(&m, &ctx, init, critic, &small(20), &rng).unwrap()
        };
        let (a, ca, la) = go();
        let (b, cb, lb) = go();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_eq!(la, lb);
        assert_eq!(la.records.len(), 4);
        for r in &la.records {
            assert!(r.bound <= 32f64.ln());
            assert_eq!(r.loss, -r.bound);
        }
        let DesignSpec::Continuous { actions } = a else {
            panic!()
        };
        assert!(actions.iter().all(|x| (-4.0..=4.0).contains(x)));
    }

    #[test]
    fn discrete_training_updates_policy() {
        let m = DiscreteQuadraticModel::default();
        let ctx = ContextPair::mirrored(2, -3.0, -1.0);
        let rng = RngStream::new(10);
        let critic = SeparableCritic::new(CriticPreset::Discrete, 2, 2, &mut rng.split("critic"));
        let init = DesignSpec::init(m.action_kind(), 2, 2.0, &mut rng.split("init"));
        let cfg = TrainConfig {
            hard_fraction: 0.5,
            ..small(10)
        };
        let (spec, _, _) = train_designs(&m, &ctx, init.clone(), critic, &cfg, &rng).unwrap();
        let DesignSpec::DiscretePolicy {
            logits,
            temperature,
            hard,
        } = &spec
        else {
            panic!()
        };
        assert_ne!(logits, &Tensor::zeros(&[2, 4]));
        assert_eq!(*temperature, 2.0);
        assert!(*hard);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let m = DiscreteQuadraticModel::default();
        let ctx = ContextPair::mirrored(3, -3.0, -1.0);
        let critic = SeparableCritic::new(CriticPreset::Discrete, 3, 3, &mut RngStream::new(11));
        let wrong = DesignSpec::Continuous {
            actions: vec![0.0; 3],
        };
        assert!(train_designs(
            &m,
            &ctx,
            wrong,
            critic.clone(),
            &small(1),
            &RngStream::new(0)
        )
        .is_err());
        let bad_cfg = TrainConfig {
            batch: 1,
            ..small(1)
        };
        let init = DesignSpec::init(m.action_kind(), 3, 2.0, &mut RngStream::new(0));
        assert!(matches!(
            train_designs(&m, &ctx, init, critic.clone(), &bad_cfg, &RngStream::new(0)),
            Err(Error::Config(_))
        ));
        assert!(train_critic(
            &m,
            &ctx,
            &[Action::Discrete(4); 3],
            critic,
            &small(1),
            &RngStream::new(0)
        )
        .is_err());
    }
}
