use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Prior over parameters: either a product of uniforms or an isotropic Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    UniformBox { low: Vec<f64>, high: Vec<f64> },
    IsoGaussian { mean: Vec<f64>, variance: f64 },
}

impl Prior {
    pub fn uniform(dim: usize, low: f64, high: f64) -> Self {
        Prior::UniformBox {
            low: vec![low; dim],
            high: vec![high; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::UniformBox { low, .. } => low.len(),
            Prior::IsoGaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Prior::UniformBox { low, high } => low
                .iter()
                .zip(high)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
            Prior::IsoGaussian { mean, variance } => {
                let sd = variance.sqrt();
                mean.iter()
                    .map(|m| m + sd * { let z: f64 = StandardNormal.sample(rng); z })
                    .collect()
            }
        }
    }

    pub fn sample_n(&self, n: usize, rng: &mut Rng) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            for (dst, v) in row.iter_mut().zip(self.sample(rng)) {
                *dst = v;
            }
        }
        out
    }

    /// Exact log density; `-inf` outside the support.
    pub fn log_prob(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::dims("prior log_prob", self.dim(), theta.len()));
        }
        Ok(match self {
            Prior::UniformBox { low, high } => {
                let mut lp = 0.0;
                for ((t, l), h) in theta.iter().zip(low).zip(high) {
                    if !(*t >= *l && *t <= *h) {
                        return Ok(f64::NEG_INFINITY);
                    }
                    lp -= (h - l).ln();
                }
                lp
            }
            Prior::IsoGaussian { mean, variance } => {
                let d = theta.len() as f64;
                let sq: f64 = theta.iter().zip(mean).map(|(t, m)| (t - m).powi(2)).sum();
                -0.5 * d * (2.0 * std::f64::consts::PI * variance).ln() - 0.5 * sq / variance
            }
        })
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        match self {
            Prior::UniformBox { low, high } => theta
                .iter()
                .zip(low.iter().zip(high))
                .all(|(t, (l, h))| *t >= *l && *t <= *h),
            Prior::IsoGaussian { .. } => theta.iter().all(|t| t.is_finite()),
        }
    }

    /// Marginal standard deviation per dimension.
    pub fn std_dev(&self) -> Vec<f64> {
        match self {
            Prior::UniformBox { low, high } => low
                .iter()
                .zip(high)
                .map(|(l, h)| (h - l) / 12f64.sqrt())
                .collect(),
            Prior::IsoGaussian { mean, variance } => vec![variance.sqrt(); mean.len()],
        }
    }

    /// Axis-aligned box holding (essentially) all prior mass, used for grid searches.
    pub fn grid_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            Prior::UniformBox { low, high } => low.iter().copied().zip(high.iter().copied()).collect(),
            Prior::IsoGaussian { mean, variance } => {
                let r = 6.0 * variance.sqrt();
                mean.iter().map(|m| (m - r, m + r)).collect()
            }
        }
    }
}
