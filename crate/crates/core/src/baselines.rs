//! Non-adaptive comparison designs and bound estimates for fixed designs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mi_bound::{CriticPreset, SeparableCritic};
use crate::models::{linspace, Action, ActionKind, ContextPair, SimulatorModel};
use crate::random::RngStream;
use crate::stats::{stable_mean, stable_variance, MeanSe};
use crate::trainer::{evaluate_bound, train_critic, TrainConfig, TrainLog};

pub const DEFAULT_N_MC: usize = 512;
pub const DEFAULT_GRID: usize = 201;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineSpec {
    /// Uniform over treatments (discrete models).
    RandomDiscrete,
    /// `N(0, σ)` clipped to the action bounds, `σ` a standard deviation.
    RandomContinuous { sigma: f64 },
    /// Per context, the action maximising prior mean + λ · prior std.
    Ucb {
        lambda: f64,
        n_mc: usize,
        grid: usize,
    },
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineSpec::RandomDiscrete => Ok(()),
            BaselineSpec::RandomContinuous { sigma } if *sigma > 0.0 => Ok(()),
            BaselineSpec::RandomContinuous { sigma } => Err(Error::Config(format!(
                "random sigma must be positive, got {sigma}"
            ))),
            BaselineSpec::Ucb { n_mc, grid, .. } if *n_mc >= 2 && *grid >= 2 => Ok(()),
            BaselineSpec::Ucb { .. } => Err(Error::Config(
                "ucb needs at least 2 prior samples and 2 grid points".into(),
            )),
        }
    }

    /// Parses `random`, `random:<σ>` or `ucb:<λ>`. A bare `random` means the
    /// discrete variant.
    pub fn parse(method: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown baseline method {method:?}"));
        let (name, arg) = match method.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (method, None),
        };
        let number = |a: &str| a.parse::<f64>().map_err(|_| bad());
        let spec = match (name, arg) {
            ("random", None) => BaselineSpec::RandomDiscrete,
            ("random", Some(a)) => BaselineSpec::RandomContinuous { sigma: number(a)? },
            ("ucb", Some(a)) => BaselineSpec::Ucb {
                lambda: number(a)?,
                n_mc: DEFAULT_N_MC,
                grid: DEFAULT_GRID,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Adapts a bare `random` to the model's action kind.
    pub fn for_kind(self, kind: ActionKind) -> Result<Self> {
        match (self, kind) {
            (BaselineSpec::RandomDiscrete, ActionKind::Continuous { .. }) => {
                Ok(BaselineSpec::RandomContinuous { sigma: 1.0 })
            }
            (BaselineSpec::RandomContinuous { .. }, ActionKind::Discrete { .. }) => Err(
                Error::Config("random:<sigma> needs a continuous model".into()),
            ),
            (spec, _) => Ok(spec),
        }
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineSpec::RandomDiscrete => write!(f, "random"),
            BaselineSpec::RandomContinuous { sigma } => write!(f, "random:{sigma:?}"),
            BaselineSpec::Ucb { lambda, .. } => write!(f, "ucb:{lambda}"),
        }
    }
}

impl FromStr for BaselineSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineSpec::parse(s)
    }
}

/// `d` independent random designs.
pub fn random_designs(
    model: &dyn SimulatorModel,
    d: usize,
    spec: &BaselineSpec,
    rng: &mut RngStream,
) -> Result<Vec<Action>> {
    spec.validate()?;
    match (spec, model.action_kind()) {
        (BaselineSpec::RandomDiscrete, ActionKind::Discrete { treatments }) => Ok((0..d)
            .map(|_| Action::Discrete(rng.below(treatments)))
            .collect()),
        (BaselineSpec::RandomContinuous { sigma }, ActionKind::Continuous { lo, hi }) => Ok((0..d)
            .map(|_| Action::Continuous((sigma * rng.standard_normal()).clamp(lo, hi)))
            .collect()),
        (spec, kind) => Err(Error::invalid(format!(
            "baseline {spec} does not apply to {kind:?}"
        ))),
    }
}

/// Candidate actions scored by UCB: every treatment, or a uniform grid.
fn candidates(kind: ActionKind, grid: usize) -> Vec<Action> {
    match kind {
        ActionKind::Discrete { treatments } => (0..treatments).map(Action::Discrete).collect(),
        ActionKind::Continuous { lo, hi } => linspace(lo, hi, grid)
            .into_iter()
            .map(Action::Continuous)
            .collect(),
    }
}

/// Monte-Carlo UCB score `mean + λ · std` of the mean reward under the prior
/// for every candidate action at `context`.
pub fn ucb_scores(
    model: &dyn SimulatorModel,
    context: f64,
    lambda: f64,
    grid: usize,
    prior: &crate::models::PriorBatch,
) -> Result<Vec<(Action, f64)>> {
    candidates(model.action_kind(), grid)
        .into_iter()
        .map(|a| {
            let values = prior
                .rows()
                .map(|psi| model.mean_reward(psi, a, context))
                .collect::<Result<Vec<f64>>>()?;
            Ok((
                a,
                stable_mean(&values) + lambda * stable_variance(&values).sqrt(),
            ))
        })
        .collect()
}

/// UCB design: per context, the highest-scoring candidate (ties go to the
/// lowest treatment index or leftmost grid point).
pub fn ucb_designs(
    model: &dyn SimulatorModel,
    contexts: &[f64],
    spec: &BaselineSpec,
    rng: &mut RngStream,
) -> Result<Vec<Action>> {
    spec.validate()?;
    let BaselineSpec::Ucb { lambda, n_mc, grid } = *spec else {
        return Err(Error::invalid(format!("{spec} is not a UCB baseline")));
    };
    let prior = model.sample_prior(rng, n_mc);
    contexts
        .iter()
        .map(|&c| {
            let scores = ucb_scores(model, c, lambda, grid, &prior)?;
            let mut best = scores[0];
            for s in &scores[1..] {
                if s.1 > best.1 {
                    best = *s;
                }
            }
            Ok(best.0)
        })
        .collect()
}

/// Designs for any baseline.
pub fn baseline_designs(
    model: &dyn SimulatorModel,
    contexts: &[f64],
    spec: &BaselineSpec,
    rng: &mut RngStream,
) -> Result<Vec<Action>> {
    match spec {
        BaselineSpec::Ucb { .. } => ucb_designs(model, contexts, spec, rng),
        _ => random_designs(model, contexts.len(), spec, rng),
    }
}

/// Settings for estimating the bound of fixed designs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigConfig {
    /// Critic-only training; design-specific fields are ignored.
    pub train: TrainConfig,
    pub eval_batches: usize,
}

/// Trains a fresh critic against fixed designs, then evaluates the bound on
/// `eval_batches` held-out batches.
pub fn eig_of_fixed_designs(
    model: &dyn SimulatorModel,
    contexts: &ContextPair,
    designs: &[Action],
    preset: CriticPreset,
    cfg: &EigConfig,
    rng: &RngStream,
) -> Result<(MeanSe, SeparableCritic, TrainLog)> {
    if cfg.eval_batches < 2 {
        return Err(Error::Config("eval_batches must be at least 2".into()));
    }
    let critic = SeparableCritic::new(
        preset,
        contexts.experimental.len(),
        contexts.evaluation.len(),
        &mut rng.split("critic"),
    );
    let (critic, log) = train_critic(
        model,
        contexts,
        designs,
        critic,
        &cfg.train,
        &rng.split("train"),
    )?;
    let eig = evaluate_bound(
        model,
        contexts,
        designs,
        &critic,
        cfg.train.batch,
        cfg.eval_batches,
        &rng.split("eval"),
    )?;
    Ok((eig, critic, log))
}
