//! Separable critic and the contrastive (InfoNCE) lower bound on the mutual
//! information between experiment outcomes `y` and max-values `m*`.
//!
//! The critic scores a pair as `U(y, m*) = ⟨E_y(y), E_m(m*)⟩`, so a whole
//! batch of `B` joint samples gives a `B × B` score matrix in one product.
//! Diagonal entries are the positive pairs; every other `m*_j` in the batch
//! acts as a contrastive sample for row `i`, giving `L = B − 1`. The bound
//!
//! ```text
//! mean_i [ S_ii − logsumexp_j S_ij + log B ]
//! ```
//!
//! never exceeds `log B`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::random::RngStream;
use crate::stats::{stable_mean, stable_sum};

/// Width of both encoder outputs.
pub const ENCODING_DIM: usize = 32;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticPreset {
    /// One hidden layer of 512 units with batch norm before the relu.
    Discrete,
    /// Hidden layers `[2 × input, 412, 256]` with relu.
    Continuous,
}

impl CriticPreset {
    fn hidden(self, input: usize) -> Vec<usize> {
        match self {
            CriticPreset::Discrete => vec![512],
            CriticPreset::Continuous => vec![2 * input, 412, 256],
        }
    }

    fn batch_norm(self) -> bool {
        matches!(self, CriticPreset::Discrete)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm layers use batch statistics.
    Train,
    /// Batch-norm layers use frozen running statistics.
    Infer,
}

/// Affine layer `x · W + b` with `W: [inputs, outputs]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    fn glorot(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        Linear {
            weight: Tensor::new(vec![inputs, outputs], data).expect("sized"),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormLayer {
    fn new(width: usize) -> Self {
        BatchNormLayer {
            gamma: Tensor::full(&[width], 1.0),
            beta: Tensor::zeros(&[width]),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

/// Batch statistics from one training-mode forward pass, one entry per
/// encoder that has a batch-norm layer.
#[derive(Clone, Debug, Default)]
pub struct BatchStats {
    updates: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

/// MLP encoder; batch norm (when present) follows the first affine layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<Linear>,
    pub norm: Option<BatchNormLayer>,
}

impl Encoder {
    pub fn new(preset: CriticPreset, input: usize, rng: &mut RngStream) -> Self {
        let mut widths = vec![input];
        widths.extend(preset.hidden(input));
        widths.push(ENCODING_DIM);
        let layers = widths
            .windows(2)
            .map(|w| Linear::glorot(w[0], w[1], rng))
            .collect::<Vec<_>>();
        let norm = preset
            .batch_norm()
            .then(|| BatchNormLayer::new(layers[0].outputs()));
        Encoder { layers, norm }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(Linear::outputs).unwrap_or(0)
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        if let Some(n) = &self.norm {
            out.push(&n.gamma);
            out.push(&n.beta);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        if let Some(n) = &mut self.norm {
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
        }
        out
    }

    /// Runs the encoder on `x: [B, input]`. `vars` are this encoder's
    /// parameters registered on the tape, in [`Encoder::params`] order.
    fn forward<'t>(
        &self,
        vars: &[Var<'t>],
        x: Var<'t>,
        mode: Mode,
    ) -> Result<(Var<'t>, Option<(Vec<f64>, Vec<f64>)>)> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(Error::Shape {
                op: "critic_forward",
                left: shape,
                right: vec![0, self.input_width()],
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        let mut stats = None;
        for i in 0..self.layers.len() {
            let (w, b) = (vars[2 * i], vars[2 * i + 1]);
            let norm = if i == 0 { self.norm.as_ref() } else { None };
            let Some(norm) = norm else {
                h = h.affine(w, b, i < last)?;
                continue;
            };
            h = h.affine(w, b, false)?;
            let (gamma, beta) = (vars[2 * self.layers.len()], vars[2 * self.layers.len() + 1]);
            let relu = i < last;
            h = match mode {
                Mode::Train => {
                    let (out, mean, var) = h.batch_norm_affine(gamma, beta, BN_EPS, relu)?;
                    stats = Some((mean, var));
                    out
                }
                Mode::Infer => h.normalize_affine(
                    &norm.running_mean,
                    &norm.running_var,
                    gamma,
                    beta,
                    BN_EPS,
                    relu,
                )?,
            };
        }
        Ok((h, stats))
    }
}

/// Critic `U(y, m*) = ⟨E_y(y), E_m(m*)⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableCritic {
    pub preset: CriticPreset,
    pub outcome_encoder: Encoder,
    pub max_value_encoder: Encoder,
}

/// Critic parameters registered on a tape.
pub struct CriticVars<'t> {
    vars: Vec<Var<'t>>,
    split: usize,
}

impl<'t> CriticVars<'t> {
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

impl SeparableCritic {
    /// Fresh critic for outcomes of width `outcome_dim` (the number of
    /// experiments) and max-values of width `max_value_dim`.
    pub fn new(
        preset: CriticPreset,
        outcome_dim: usize,
        max_value_dim: usize,
        rng: &mut RngStream,
    ) -> Self {
        SeparableCritic {
            preset,
            outcome_encoder: Encoder::new(preset, outcome_dim, &mut rng.split("outcome")),
            max_value_encoder: Encoder::new(preset, max_value_dim, &mut rng.split("max_value")),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.outcome_encoder.params();
        p.extend(self.max_value_encoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.outcome_encoder.params_mut();
        p.extend(self.max_value_encoder.params_mut());
        p
    }

    /// Sets every weight, bias and affine batch-norm parameter to zero.
    pub fn zero_parameters(&mut self) {
        for p in self.params_mut() {
            p.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Registers parameters on `tape`, trainable or frozen.
    pub fn register<'t>(&self, tape: &'t Tape, trainable: bool) -> CriticVars<'t> {
        let vars = self
            .params()
            .into_iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect();
        CriticVars {
            vars,
            split: self.outcome_encoder.params().len(),
        }
    }

    /// Encodes outcomes `y: [B, D]` and max-values `m: [B, D*]`.
    pub fn encode<'t>(
        &self,
        vars: &CriticVars<'t>,
        y: Var<'t>,
        m: Var<'t>,
        mode: Mode,
    ) -> Result<(Var<'t>, Var<'t>, BatchStats)> {
        let (ey, sy) = self
            .outcome_encoder
            .forward(&vars.vars[..vars.split], y, mode)?;
        let (em, sm) = self
            .max_value_encoder
            .forward(&vars.vars[vars.split..], m, mode)?;
        let mut stats = BatchStats::default();
        if let Some((mean, var)) = sy {
            stats.updates.push((0, mean, var));
        }
        if let Some((mean, var)) = sm {
            stats.updates.push((1, mean, var));
        }
        Ok((ey, em, stats))
    }

    /// Replaces the running estimates with population statistics pooled
    /// over equally sized batches: mean of means, and mean within-batch
    /// variance plus the variance of the batch means.
    pub fn set_pooled_stats(&mut self, batches: &[BatchStats]) {
        let Some(first) = batches.first() else {
            return;
        };
        let n = batches.len() as f64;
        for (k, (which, _, _)) in first.updates.iter().enumerate() {
            let enc = if *which == 0 {
                &mut self.outcome_encoder
            } else {
                &mut self.max_value_encoder
            };
            let Some(norm) = &mut enc.norm else {
                continue;
            };
            for j in 0..norm.running_mean.len() {
                let means: Vec<f64> = batches.iter().map(|b| b.updates[k].1[j]).collect();
                let vars: Vec<f64> = batches.iter().map(|b| b.updates[k].2[j]).collect();
                let mean = stable_mean(&means);
                let spread =
                    stable_sum(&means.iter().map(|m| (m - mean).powi(2)).collect::<Vec<_>>()) / n;
                norm.running_mean[j] = mean;
                norm.running_var[j] = stable_mean(&vars) + spread;
            }
        }
    }

    /// Folds batch statistics into the running estimates.
    pub fn commit_stats(&mut self, stats: BatchStats) {
        for (which, mean, var) in stats.updates {
            let enc = if which == 0 {
                &mut self.outcome_encoder
            } else {
                &mut self.max_value_encoder
            };
            if let Some(norm) = &mut enc.norm {
                for (r, m) in norm.running_mean.iter_mut().zip(&mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
                for (r, v) in norm.running_var.iter_mut().zip(&var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                }
            }
        }
    }
}

/// Square matrix of critic scores `S[i][j] = U(y_i, m*_j)`.
#[derive(Clone, Copy, Debug)]
pub struct ScoreMatrix<'t>(Var<'t>);

impl<'t> ScoreMatrix<'t> {
    /// Wraps an existing square node.
    pub fn from_var(s: Var<'t>) -> Result<Self> {
        let shape = s.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::Shape {
                op: "score_matrix",
                left: shape,
                right: vec![],
            });
        }
        Ok(ScoreMatrix(s))
    }

    pub fn var(&self) -> Var<'t> {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }
}

/// Scores every outcome row against every max-value row.
pub fn score_matrix<'t>(
    critic: &SeparableCritic,
    vars: &CriticVars<'t>,
    y: Var<'t>,
    m: Var<'t>,
    mode: Mode,
) -> Result<(ScoreMatrix<'t>, BatchStats)> {
    let b = y.shape()[0];
    if b < 2 || m.shape()[0] != b {
        return Err(Error::invalid(format!(
            "score matrix needs matching batches of at least 2, got {b} and {}",
            m.shape()[0]
        )));
    }
    let (ey, em, stats) = critic.encode(vars, y, m, mode)?;
    let s = ey.matmul(em.t()?)?;
    Ok((ScoreMatrix(s), stats))
}

/// InfoNCE estimate `mean_i [S_ii − logsumexp_j S_ij] + log B`.
pub fn infonce<'t>(s: ScoreMatrix<'t>) -> Result<Var<'t>> {
    let b = s.batch();
    // log-softmax keeps constant rows exact, so a constant critic gives 0
    let terms =
        s.0.log_softmax(1)?
            .diagonal()?
            .add_scalar((b as f64).ln())?;
    // averaging offsets from the largest term cannot round above it, so the
    // result never exceeds log B
    let top = terms
        .value()
        .data()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    terms.add_scalar(-top)?.mean_all().add_scalar(top)
}

/// The same estimate computed directly from score values.
pub fn infonce_value(scores: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let s = ScoreMatrix::from_var(tape.constant(scores.clone()))?;
    Ok(infonce(s)?.item())
}
