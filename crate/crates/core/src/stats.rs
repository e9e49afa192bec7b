//! Order-independent aggregation helpers.
//!
//! Sums sort their inputs by total order before Neumaier-compensated
//! accumulation, so the result is bit-identical for any permutation of the
//! inputs. This keeps parallel and serial evaluation exactly comparable.

use serde::{Deserialize, Serialize};

/// Compensated sum that does not depend on input order.
pub fn stable_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in sorted {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn stable_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    stable_sum(values) / values.len() as f64
}

/// Unbiased sample variance.
pub fn stable_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = stable_mean(values);
    let sq: Vec<f64> = values.iter().map(|x| (x - mean) * (x - mean)).collect();
    stable_sum(&sq) / (n - 1) as f64
}

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> MeanSe {
        let n = values.len();
        let se = if n < 2 {
            f64::NAN
        } else {
            (stable_variance(values) / n as f64).sqrt()
        };
        MeanSe {
            mean: stable_mean(values),
            se,
        }
    }
}
