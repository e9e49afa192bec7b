//! Experiment configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::AdamConfig;
use crate::baselines::{BaselineSpec, EigConfig};
use crate::deployment::DeployConfig;
use crate::error::{Error, Result};
use crate::mi_bound::CriticPreset;
use crate::models::{ContextPair, ContinuousBumpModel, DiscreteQuadraticModel, SimulatorModel};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    DiscreteQuadratic {
        #[serde(default = "default_means")]
        prior_means: Vec<[f64; 2]>,
        #[serde(default = "default_variances")]
        prior_variances: Vec<f64>,
        #[serde(default = "default_noise_variance")]
        noise_variance: f64,
    },
    ContinuousBump {
        #[serde(default = "default_prior_lo")]
        prior_lo: f64,
        #[serde(default = "default_prior_hi")]
        prior_hi: f64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
        #[serde(default = "default_action_lo")]
        action_lo: f64,
        #[serde(default = "default_action_hi")]
        action_hi: f64,
    },
}

fn default_means() -> Vec<[f64; 2]> {
    DiscreteQuadraticModel::default().prior_means
}
fn default_variances() -> Vec<f64> {
    DiscreteQuadraticModel::default().prior_variances
}
fn default_noise_variance() -> f64 {
    DiscreteQuadraticModel::default().noise_variance
}
fn default_prior_lo() -> f64 {
    ContinuousBumpModel::default().prior_lo
}
fn default_prior_hi() -> f64 {
    ContinuousBumpModel::default().prior_hi
}
fn default_noise_std() -> f64 {
    ContinuousBumpModel::default().noise_std
}
fn default_action_lo() -> f64 {
    ContinuousBumpModel::default().action_lo
}
fn default_action_hi() -> f64 {
    ContinuousBumpModel::default().action_hi
}

impl ModelConfig {
    pub fn build(&self) -> Result<Box<dyn SimulatorModel>> {
        match self.clone() {
            ModelConfig::DiscreteQuadratic {
                prior_means,
                prior_variances,
                noise_variance,
            } => {
                let m = DiscreteQuadraticModel {
                    prior_means,
                    prior_variances,
                    noise_variance,
                };
                m.validate()?;
                Ok(Box::new(m))
            }
            ModelConfig::ContinuousBump {
                prior_lo,
                prior_hi,
                noise_std,
                action_lo,
                action_hi,
            } => {
                let m = ContinuousBumpModel {
                    prior_lo,
                    prior_hi,
                    noise_std,
                    action_lo,
                    action_hi,
                };
                m.validate()?;
                Ok(Box::new(m))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationGrid {
    /// `C* = −C`.
    Mirrored,
    /// `C*` at the midpoints of consecutive `C`.
    Midpoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub evaluation: EvaluationGrid,
}

impl ContextConfig {
    pub fn build(&self) -> Result<ContextPair> {
        if self.n < 2 || !(self.hi > self.lo) {
            return Err(Error::Config("contexts need n ≥ 2 and lo < hi".into()));
        }
        Ok(match self.evaluation {
            EvaluationGrid::Mirrored => ContextPair::mirrored(self.n, self.lo, self.hi),
            EvaluationGrid::Midpoints => ContextPair::midpoints(self.n, self.lo, self.hi),
        })
    }
}

/// Run-size settings that differ between the desk and paper presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scale {
    pub steps: usize,
    pub batch: usize,
    pub tau_interval: usize,
    /// Critic-only steps when estimating the bound of fixed designs.
    pub eig_steps: usize,
    pub n_envs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleChoice {
    Desk,
    Paper,
}

impl ScaleChoice {
    pub fn name(self) -> &'static str {
        match self {
            ScaleChoice::Desk => "desk",
            ScaleChoice::Paper => "paper",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    pub contexts: ContextConfig,
    pub critic: CriticPreset,
    pub seed: u64,
    /// Baseline methods such as `random:1.0` or `ucb:2`.
    pub baselines: Vec<String>,
    pub adam: AdamConfig,
    pub tau0: f64,
    pub tau_factor: f64,
    pub hard_fraction: f64,
    pub log_interval: usize,
    pub eval_batches: usize,
    pub particles: usize,
    pub n_draws: usize,
    pub desk: Scale,
    pub paper: Scale,
}

/// Everything a command needs, derived from a validated config.
pub struct Resolved {
    pub model: Box<dyn SimulatorModel>,
    pub contexts: ContextPair,
    pub critic: CriticPreset,
    pub train: TrainConfig,
    pub eig: EigConfig,
    pub deploy: DeployConfig,
    pub baselines: Vec<BaselineSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve(ScaleChoice::Desk)?;
        cfg.resolve(ScaleChoice::Paper)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn scale(&self, choice: ScaleChoice) -> &Scale {
        match choice {
            ScaleChoice::Desk => &self.desk,
            ScaleChoice::Paper => &self.paper,
        }
    }

    pub fn resolve(&self, choice: ScaleChoice) -> Result<Resolved> {
        let model = self.model.build()?;
        let contexts = self.contexts.build()?;
        let s = self.scale(choice);
        let train = TrainConfig {
            steps: s.steps,
            batch: s.batch,
            adam: self.adam,
            tau0: self.tau0,
            tau_factor: self.tau_factor,
            tau_interval: s.tau_interval,
            hard_fraction: self.hard_fraction,
            log_interval: self.log_interval,
        };
        train.validate()?;
        let eig_train = TrainConfig {
            steps: s.eig_steps,
            tau_interval: s.eig_steps.max(1),
            ..train.clone()
        };
        eig_train.validate()?;
        if self.eval_batches < 2 {
            return Err(Error::Config("eval_batches must be at least 2".into()));
        }
        let deploy = DeployConfig {
            n_envs: s.n_envs,
            particles: self.particles,
            n_draws: self.n_draws,
        };
        deploy.validate()?;
        let baselines = self
            .baselines
            .iter()
            .map(|b| BaselineSpec::parse(b)?.for_kind(model.action_kind()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Resolved {
            model,
            contexts,
            critic: self.critic,
            train,
            eig: EigConfig {
                train: eig_train,
                eval_batches: self.eval_batches,
            },
            deploy,
            baselines,
        })
    }

    /// sha256 of the canonical JSON of the whole config and the scale.
    pub fn hash(&self, choice: ScaleChoice) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        sha256_hex(&format!("{json}\n{}", choice.name()))
    }

    /// sha256 of the model and context grid only: runs that agree on it
    /// can share a report.
    pub fn model_hash(&self) -> String {
        let json =
            serde_json::to_string(&(&self.model, &self.contexts)).expect("config serialises");
        sha256_hex(&json)
    }
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
