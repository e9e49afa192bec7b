//! Deterministic, splittable random streams.
//!
//! A [`RngStream`] is a counter-based generator: draw `n` of a stream with
//! key `k` is a fixed mixing function of `(k, n)`. Child streams get their key
//! by hashing a label into the parent key, so any worker can derive its own
//! stream without coordination and the result never depends on how many
//! draws the parent has made.

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Lower clamp for the uniform variate feeding the Gumbel transform.
pub const GUMBEL_EPS: f64 = 1e-12;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Supported sampling distributions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    StandardNormal,
    Normal { mean: f64, std: f64 },
    Gumbel01,
}

#[derive(Clone, Debug)]
pub struct RngStream {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            key: mix64(seed ^ GOLDEN),
            counter: 0,
            spare_normal: None,
        }
    }

    /// Independent child stream determined by this stream's key and `label`.
    pub fn split(&self, label: &str) -> RngStream {
        RngStream {
            key: mix64(mix64(self.key ^ fnv1a(label)).wrapping_add(GOLDEN)),
            counter: 0,
            spare_normal: None,
        }
    }

    /// Child stream for a numbered work item.
    pub fn split_index(&self, label: &str, index: u64) -> RngStream {
        self.split(&format!("{label}#{index}"))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform01() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform01();
        let u2 = self.uniform01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gumbel01(&mut self) -> f64 {
        gumbel_from_uniform(self.uniform01())
    }

    pub fn draw(&mut self, dist: Dist) -> f64 {
        match dist {
            Dist::Uniform { lo, hi } => self.uniform(lo, hi),
            Dist::StandardNormal => self.standard_normal(),
            Dist::Normal { mean, std } => mean + std * self.standard_normal(),
            Dist::Gumbel01 => self.gumbel01(),
        }
    }

    /// Tensor of independent draws.
    pub fn sample(&mut self, dist: Dist, shape: &[usize]) -> Result<Tensor> {
        match dist {
            Dist::Uniform { lo, hi } if !(hi > lo) => {
                return Err(Error::invalid(format!(
                    "uniform bounds need hi > lo, got [{lo}, {hi}]"
                )))
            }
            Dist::Normal { std, .. } if !(std > 0.0) => {
                return Err(Error::invalid(format!(
                    "normal std must be positive, got {std}"
                )))
            }
            _ => {}
        }
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.draw(dist)).collect();
        Tensor::new(shape.to_vec(), data)
    }
}

/// Reparameterised normal draw `mean + std · noise`; gradients flow to both
/// `mean` and `std` when they are trainable.
pub fn reparam_normal<'t>(mean: Var<'t>, std: Var<'t>, noise: &Tensor) -> Result<Var<'t>> {
    let eps = mean.tape().constant(noise.clone());
    mean.add(std.mul(eps)?)
}

/// `−log(−log u)` with `u` clamped to `[ε, 1 − ε]`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(GUMBEL_EPS, 1.0 - GUMBEL_EPS);
    -(-u.ln()).ln()
}
