//! Diagonal Gaussian likelihood model. A window's score is its negative
//! log-likelihood, so the score is minimal exactly at the mean.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>, variance_floor: f64) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: variance.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::invalid("gaussian of dimension 0"));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numerical("non-finite gaussian mean".into()));
        }
        if let Some(v) = variance.iter().find(|&&v| !(v >= variance_floor) || !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "variance {v} below floor {variance_floor}"
            )));
        }
        Ok(GaussianParams { mean, variance })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(1 - rate) * self + rate * other`, entry-wise on mean and variance.
    pub fn blend(&self, other: &GaussianParams, rate: f64) -> Result<GaussianParams> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::invalid(format!("adaptation rate {rate} outside [0, 1]")));
        }
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(x, y)| (1.0 - rate) * x + rate * y)
                .collect()
        };
        Ok(GaussianParams {
            mean: mix(&self.mean, &other.mean),
            variance: mix(&self.variance, &other.variance),
        })
    }
}

/// Per-dimension sample mean and population variance, floored.
pub fn gaussian_fit<S: AsRef<[f64]>>(samples: &[S], variance_floor: f64) -> Result<GaussianParams> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "gaussian fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].as_ref().len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        let s = s.as_ref();
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: s.len(),
            });
        }
        mean.iter_mut().zip(s).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut variance = vec![0.0; dim];
    for s in samples {
        for ((v, x), m) in variance.iter_mut().zip(s.as_ref()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    variance
        .iter_mut()
        .for_each(|v| *v = (*v / n).max(variance_floor));
    GaussianParams::new(mean, variance, variance_floor)
}

/// `0.5 * sum_d [ln(2 pi var_d) + (x_d - mean_d)^2 / var_d]`
pub fn gaussian_score(params: &GaussianParams, features: &[f64]) -> Result<f64> {
    if features.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: features.len(),
        });
    }
    let mut acc = 0.0;
    for ((x, m), v) in features.iter().zip(&params.mean).zip(&params.variance) {
        let d = x - m;
        acc += (2.0 * PI * v).ln() + d * d / v;
    }
    Ok(0.5 * acc)
}
