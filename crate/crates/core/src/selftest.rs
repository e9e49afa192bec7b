//! Property suite run by `maxeig selftest`.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::autodiff::gradcheck::max_relative_error;
use crate::autodiff::{Tape, Tensor, Var};
use crate::deployment::snis_posterior;
use crate::error::Result;
use crate::mi_bound::{infonce, infonce_value, score_matrix, CriticPreset, Mode, SeparableCritic};
use crate::models::{
    Action, ContextPair, ContinuousBumpModel, Dataset, DiscreteQuadraticModel,
    GaussianLocationModel, SimulatorModel,
};
use crate::random::{Dist, RngStream};
use crate::trainer::{gumbel_softmax_relax, max_values};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn() -> Result<(bool, String)>;

pub const CHECKS: [(&str, CheckFn); 7] = [
    ("autodiff_finite_differences", autodiff_finite_differences),
    ("infonce_ceiling", infonce_ceiling),
    ("constant_critic_is_zero", constant_critic_is_zero),
    ("discrete_endpoint_identities", discrete_endpoint_identities),
    ("gumbel_argmax_frequencies", gumbel_argmax_frequencies),
    ("snis_matches_quadrature", snis_matches_quadrature),
    ("analytic_critic_matches_mi", analytic_critic_matches_mi),
];

/// Runs every check; a check that errors counts as failed.
pub fn run_all() -> Vec<Check> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
            Check {
                name,
                passed,
                detail,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn randn(rng: &mut RngStream, shape: &[usize]) -> Result<Tensor> {
    rng.sample(Dist::StandardNormal, shape)
}

/// Weighted sum so every output element gets its own cotangent.
fn project<'t>(v: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let w = randn(&mut RngStream::new(seed), &v.shape())?;
    Ok(v.mul(v.tape().constant(w))?.sum_all())
}

pub fn autodiff_finite_differences() -> Result<(bool, String)> {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-6;
    let mut rng = RngStream::new(11);
    let mut worst: Vec<(&str, f64)> = Vec::new();

    let inputs = [
        randn(&mut rng, &[6, 5])?,
        randn(&mut rng, &[5, 4])?,
        randn(&mut rng, &[4])?,
    ];
    worst.push((
        "affine_logsumexp",
        max_relative_error(
            &inputs,
            |_, v| project(v[0].affine(v[1], v[2], false)?.logsumexp(1)?, 1),
            H,
        )?,
    ));
    worst.push((
        "matmul_softmax",
        max_relative_error(
            &inputs[..2],
            |_, v| project(v[0].matmul(v[1])?.softmax(1)?, 2),
            H,
        )?,
    ));
    let norm_inputs = [
        randn(&mut rng, &[9, 3])?,
        randn(&mut rng, &[3])?,
        randn(&mut rng, &[3])?,
    ];
    worst.push((
        "batch_norm_affine",
        max_relative_error(
            &norm_inputs,
            |_, v| project(v[0].batch_norm_affine(v[1], v[2], 1e-5, false)?.0, 3),
            H,
        )?,
    ));
    let s = [randn(&mut rng, &[7, 7])?];
    worst.push((
        "infonce",
        max_relative_error(
            &s,
            |_, v| infonce(crate::mi_bound::ScoreMatrix::from_var(v[0])?),
            H,
        )?,
    ));
    let pos = [
        rng.sample(Dist::Uniform { lo: 0.5, hi: 2.0 }, &[4, 3])?,
        randn(&mut rng, &[4, 3])?,
    ];
    worst.push((
        "div_log_exp",
        max_relative_error(
            &pos,
            |_, v| project(v[1].div(v[0])?.exp().add(v[0].log()?)?.square()?, 4),
            H,
        )?,
    ));
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n}={e:.1e}"))
        .collect::<Vec<_>>()
        .join(" ");
    Ok((max < TOL, detail))
}

pub fn infonce_ceiling() -> Result<(bool, String)> {
    let mut rng = RngStream::new(12);
    let mut worst_gap = f64::INFINITY;
    for i in 0..1000 {
        let b = 2 + rng.below(63);
        let scale = [0.1, 1.0, 10.0, 100.0][i % 4];
        let s = rng.sample(
            Dist::Normal {
                mean: 0.0,
                std: scale,
            },
            &[b, b],
        )?;
        let mut s = s;
        if i % 3 == 0 {
            // strongly diagonal matrices push the bound to its ceiling
            for j in 0..b {
                s.data_mut()[j * b + j] += 1e3;
            }
        }
        let v = infonce_value(&s)?;
        worst_gap = worst_gap.min((b as f64).ln() - v);
    }
    Ok((
        worst_gap >= 0.0,
        format!("min(log B − bound) = {worst_gap:.3e}"),
    ))
}

pub fn constant_critic_is_zero() -> Result<(bool, String)> {
    let mut values = Vec::new();
    for (b, c) in [(2, 0.0), (7, 3.5), (512, -12.25)] {
        values.push(infonce_value(&Tensor::full(&[b, b], c))?);
    }
    let m = ContinuousBumpModel::default();
    let ctx = ContextPair::midpoints(6, -3.5, 3.5);
    let mut critic = SeparableCritic::new(CriticPreset::Continuous, 6, 5, &mut RngStream::new(13));
    critic.zero_parameters();
    let psi = m.sample_prior(&mut RngStream::new(14), 64);
    let tape = Tape::new();
    let a = tape.constant(Tensor::vector(ctx.experimental.clone()));
    let y =
        crate::models::sample_outcomes(&m, &psi, a, &ctx.experimental, &mut RngStream::new(15))?;
    let vars = critic.register(&tape, false);
    let mstar = tape.constant(max_values(&m, &psi, &ctx.evaluation));
    let (s, _) = score_matrix(&critic, &vars, y, mstar, Mode::Train)?;
    values.push(infonce(s)?.item());
    Ok((values.iter().all(|v| *v == 0.0), format!("{values:?}")))
}

pub fn discrete_endpoint_identities() -> Result<(bool, String)> {
    let m = DiscreteQuadraticModel::default();
    let psi = m.sample_prior(&mut RngStream::new(16), 1000);
    let mut worst: f64 = 0.0;
    for row in psi.rows() {
        for k in 0..m.treatments() {
            let lo = m.mean_reward(row, Action::Discrete(k), -3.0)?;
            let hi = m.mean_reward(row, Action::Discrete(k), 3.0)?;
            worst = worst
                .max((lo - row[2 * k]).abs())
                .max((hi - row[2 * k + 1]).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max deviation {worst:.1e}")))
}

pub fn gumbel_argmax_frequencies() -> Result<(bool, String)> {
    let alpha = [0.1, 0.2, 0.3, 0.4];
    let n = 100_000;
    let logits: Vec<f64> = alpha.iter().map(|a: &f64| a.ln()).collect();
    let tape = Tape::new();
    let l = tape.constant(Tensor::new(vec![n, 4], logits.repeat(n))?);
    let pi = gumbel_softmax_relax(l, 1.0, &mut RngStream::new(17), false)?.value();
    let mut freq = [0.0; 4];
    for r in 0..n {
        let row = pi.row(r);
        let k = (0..4).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        freq[k] += 1.0 / n as f64;
    }
    let worst = freq
        .iter()
        .zip(alpha)
        .map(|(f, a)| (f - a).abs())
        .fold(0.0, f64::max);
    Ok((worst < 0.02, format!("frequencies {freq:.4?}")))
}

pub fn snis_matches_quadrature() -> Result<(bool, String)> {
    let m = GaussianLocationModel {
        prior_mean: -0.3,
        prior_std: 1.2,
        noise_std: 0.7,
    };
    let ys = [0.4, 1.1, 0.2, 0.9];
    let data = Dataset::new(vec![0.0; 4], vec![Action::Continuous(0.0); 4], ys.to_vec())?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=40_000 {
        let psi = -10.0 + 20.0 * i as f64 / 40_000.0;
        let lp = -0.5 * ((psi - m.prior_mean) / m.prior_std).powi(2)
            + ys.iter()
                .map(|y| -0.5 * ((y - psi) / m.noise_std).powi(2))
                .sum::<f64>();
        num += lp.exp() * psi;
        den += lp.exp();
    }
    let exact = num / den;
    let post = snis_posterior(&m, &data, 100_000, &mut RngStream::new(18))?;
    let (mean, _) = post.moments();
    let dev = (mean[0] - exact).abs();
    Ok((
        dev < 0.05,
        format!(
            "SNIS {:.4} vs quadrature {exact:.4} (ESS {:.0})",
            mean[0], post.ess
        ),
    ))
}

/// Discretised toy joint: one experimental context on treatment 1, whose
/// two parameters sit on a 5 × 5 grid under the prior; the other
/// treatments are fixed at their prior means.
struct ToyJoint {
    probs: Vec<f64>,
    means: Vec<f64>,
    group: Vec<usize>,
    groups: usize,
    noise: f64,
}

impl ToyJoint {
    fn new() -> Result<ToyJoint> {
        let m = DiscreteQuadraticModel::default();
        let (c, c_star) = (-2.0, 2.0);
        let z = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let sd = m.prior_variances[0].sqrt();
        let mut probs = Vec::new();
        let mut means = Vec::new();
        let mut mstar = Vec::new();
        for a in z {
            for b in z {
                let mut psi: Vec<f64> = m.prior_means.iter().flatten().copied().collect();
                psi[0] += sd * a;
                psi[1] += sd * b;
                probs.push((-0.5 * (a * a + b * b)).exp());
                means.push(m.mean_reward(&psi, Action::Discrete(0), c)?);
                mstar.push(m.max_value(&psi, c_star));
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let mut ids = BTreeMap::new();
        let group = mstar
            .iter()
            .map(|v: &f64| {
                let next = ids.len();
                *ids.entry(v.to_bits()).or_insert(next)
            })
            .collect();
        Ok(ToyJoint {
            probs,
            means,
            group,
            groups: ids.len(),
            noise: m.noise_std(),
        })
    }

    fn density(&self, y: f64, g: usize) -> f64 {
        let z = (y - self.means[g]) / self.noise;
        (-0.5 * z * z).exp() / (self.noise * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// `log p(y | m*)` for every max-value group.
    fn log_conditional(&self, y: f64) -> Vec<f64> {
        let mut num = vec![0.0; self.groups];
        let mut mass = vec![0.0; self.groups];
        for (g, p) in self.probs.iter().enumerate() {
            num[self.group[g]] += p * self.density(y, g);
            mass[self.group[g]] += p;
        }
        num.iter().zip(&mass).map(|(n, m)| (n / m).ln()).collect()
    }

    /// `I(y; m*)` by quadrature over y.
    fn mutual_information(&self) -> f64 {
        let lo = self.means.iter().copied().fold(f64::INFINITY, f64::min) - 10.0 * self.noise;
        let hi = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0 * self.noise;
        let n = 200_000;
        let dy = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let y = lo + i as f64 * dy;
            let cond = self.log_conditional(y);
            let marginal: f64 = (0..self.probs.len())
                .map(|g| self.probs[g] * self.density(y, g))
                .sum();
            if marginal <= 0.0 {
                continue;
            }
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            for (g, p) in self.probs.iter().enumerate() {
                let mass = p * self.density(y, g);
                if mass > 0.0 {
                    total += w * dy * mass * (cond[self.group[g]] - marginal.ln());
                }
            }
        }
        total
    }

    fn sample(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform01();
        let mut acc = 0.0;
        for (g, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return g;
            }
        }
        self.probs.len() - 1
    }
}

pub fn analytic_critic_matches_mi() -> Result<(bool, String)> {
    let toy = ToyJoint::new()?;
    let mi = toy.mutual_information();
    let b = 4096;
    let mut rng = RngStream::new(19);
    let mut bounds = Vec::new();
    for _ in 0..2 {
        let gs: Vec<usize> = (0..b).map(|_| toy.sample(&mut rng)).collect();
        let mut s = Vec::with_capacity(b * b);
        for &gi in &gs {
            let y = toy.means[gi] + toy.noise * rng.standard_normal();
            let cond = toy.log_conditional(y);
            s.extend(gs.iter().map(|&gj| cond[toy.group[gj]]));
        }
        bounds.push(infonce_value(&Tensor::new(vec![b, b], s)?)?);
    }
    let bound = bounds.iter().sum::<f64>() / bounds.len() as f64;
    Ok((
        (mi - bound).abs() < 0.1,
        format!(
            "bound {bound:.4} vs MI {mi:.4} over {} max-value groups",
            toy.groups
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_mi_is_at_most_entropy() {
        let toy = ToyJoint::new().unwrap();
        let mut h = 0.0;
        let mut mass = vec![0.0; toy.groups];
        for (g, p) in toy.probs.iter().enumerate() {
            mass[toy.group[g]] += p;
        }
        for m in mass {
            h -= m * f64::ln(m);
        }
        let mi = toy.mutual_information();
        assert!(mi > 0.0 && mi <= h + 1e-9, "{mi} {h}");
    }

    #[test]
    fn fast_checks_pass() {
        for (name, f) in &CHECKS[..5] {
            let (ok, detail) = f().unwrap();
            assert!(ok, "{name}: {detail}");
        }
    }
}
