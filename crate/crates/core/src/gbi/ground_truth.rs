//! Reference samplers for the generalized posterior.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CostFn, Method, PosteriorSamples};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tasks::{Prior, TaskId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Proposal {
    Prior,
    /// Isotropic Gaussian.
    Gaussian { mean: Vec<f64>, variance: f64 },
}

impl Proposal {
    fn sample(&self, prior: &Prior, rng: &mut Rng) -> Vec<f64> {
        match self {
            Proposal::Prior => prior.sample(rng),
            Proposal::Gaussian { mean, variance } => {
                let sd = variance.sqrt();
                mean.iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + sd * z
                    })
                    .collect()
            }
        }
    }

    /// Log density up to a constant.
    fn log_density(&self, prior: &Prior, theta: &[f64]) -> Result<f64> {
        match self {
            Proposal::Prior => prior.log_prob(theta),
            Proposal::Gaussian { mean, variance } => Ok(-theta
                .iter()
                .zip(mean)
                .map(|(t, m)| (t - m).powi(2))
                .sum::<f64>()
                / (2.0 * variance)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RejectionConfig {
    /// Points per axis of the dense grid used to bound the acceptance ratio
    /// for prior proposals. Defaults to 10⁴ in 1D and 500 per axis in 2D.
    pub grid_per_dim: Option<usize>,
    /// Proposal draws used to bound the acceptance ratio.
    pub pilot: usize,
    pub batch: usize,
    pub acceptance_floor: f64,
    pub max_proposals: usize,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        Self {
            grid_per_dim: None,
            pilot: 10_000,
            batch: 20_000,
            acceptance_floor: 1e-5,
            max_proposals: 200_000_000,
        }
    }
}

fn grid_points(prior: &Prior, per_dim: usize) -> Vec<Vec<f64>> {
    let bounds = prior.grid_bounds();
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|(lo, hi)| {
            (0..per_dim)
                .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / per_dim as f64)
                .collect()
        })
        .collect();
    let total = per_dim.pow(axes.len() as u32);
    (0..total)
        .map(|mut idx| {
            axes.iter()
                .map(|a| {
                    let v = a[idx % per_dim];
                    idx /= per_dim;
                    v
                })
                .collect()
        })
        .collect()
}

/// Rejection sampling of `exp(−β·ℓ(θ))·p(θ)` from `proposal`. The acceptance
/// bound is the largest importance weight seen on a dense grid (prior
/// proposals in ≤ 2D) and on a pilot batch of proposal draws. Draws whose
/// weight exceeds the bound are accepted with probability one and counted in
/// the `clip_rate` diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn rejection_sample_gt(
    task: TaskId,
    beta: f64,
    cost: &dyn CostFn,
    proposal: &Proposal,
    n: usize,
    observation: &str,
    cfg: &RejectionConfig,
    rng: &mut Rng,
) -> Result<PosteriorSamples> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!("beta must be >= 0, got {beta}")));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidConfig("rejection batch must be >= 1".into()));
    }
    let prior = task.prior();
    let dim = prior.dim();
    if let Proposal::Gaussian { mean, variance } = proposal {
        if mean.len() != dim {
            return Err(Error::dims("proposal mean", dim, mean.len()));
        }
        if !(*variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidConfig("proposal variance must be positive".into()));
        }
    }
    let log_w = |theta: &[f64]| -> Result<f64> {
        let lp = prior.log_prob(theta)?;
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        let c = cost.cost(theta)?;
        if !c.is_finite() {
            return Err(Error::NonFinite("true cost".into()));
        }
        let tempered = if beta == 0.0 { 0.0 } else { -beta * c };
        Ok(tempered + lp - proposal.log_density(&prior, theta)?)
    };
    let max_of = |thetas: &[Vec<f64>]| -> Result<f64> {
        thetas
            .par_iter()
            .map(|t| log_w(t))
            .try_reduce(|| f64::NEG_INFINITY, |a, b| Ok(a.max(b)))
    };

    let mut log_m = f64::NEG_INFINITY;
    if *proposal == Proposal::Prior {
        let per_dim = cfg.grid_per_dim.unwrap_or(match dim {
            1 => 10_000,
            2 => 500,
            _ => 0,
        });
        if per_dim > 0 {
            log_m = log_m.max(max_of(&grid_points(&prior, per_dim))?);
        }
    }
    let pilot: Vec<Vec<f64>> = (0..cfg.pilot).map(|_| proposal.sample(&prior, rng)).collect();
    log_m = log_m.max(max_of(&pilot)?);
    if !log_m.is_finite() {
        return Err(Error::Degenerate("no proposal draw has positive target density".into()));
    }

    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut proposed = 0usize;
    let mut clipped = 0usize;
    while accepted.len() < n {
        let draws: Vec<Vec<f64>> = (0..cfg.batch).map(|_| proposal.sample(&prior, rng)).collect();
        let weights: Vec<f64> = draws.par_iter().map(|t| log_w(t)).collect::<Result<_>>()?;
        for (theta, w) in draws.into_iter().zip(weights) {
            if accepted.len() == n {
                break;
            }
            proposed += 1;
            if w > log_m {
                clipped += 1;
            }
            if rng.random::<f64>().ln() < w - log_m {
                accepted.push(theta);
            }
        }
        let rate = accepted.len() as f64 / proposed as f64;
        if accepted.len() < n
            && (proposed >= cfg.max_proposals || (proposed >= 10 * cfg.batch && rate < cfg.acceptance_floor))
        {
            return Err(Error::AcceptanceFloor {
                rate,
                floor: cfg.acceptance_floor,
            });
        }
    }
    let mut samples = Array2::zeros((n, dim));
    for (mut row, t) in samples.rows_mut().into_iter().zip(&accepted) {
        row.iter_mut().zip(t).for_each(|(a, b)| *a = *b);
    }
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("proposals".into(), proposed as f64);
    diagnostics.insert("acceptance_rate".into(), n as f64 / proposed.max(1) as f64);
    diagnostics.insert("clip_rate".into(), clipped as f64 / proposed.max(1) as f64);
    diagnostics.insert("log_envelope".into(), log_m);
    Ok(PosteriorSamples {
        samples,
        method: Method::GtRejection,
        beta,
        observation: observation.to_string(),
        diagnostics,
    })
}

/// Isotropic Gaussian posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl GaussianPosterior {
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Array2<f64> {
        let sd = self.variance.sqrt();
        Array2::from_shape_fn((n, self.mean.len()), |(_, j)| {
            let z: f64 = StandardNormal.sample(rng);
            self.mean[j] + sd * z
        })
    }

    pub fn samples(&self, n: usize, beta: f64, observation: &str, rng: &mut Rng) -> PosteriorSamples {
        let mut diagnostics = BTreeMap::new();
        diagnostics.insert("variance".into(), self.variance);
        PosteriorSamples {
            samples: self.sample(n, rng),
            method: Method::GtAnalytic,
            beta,
            observation: observation.to_string(),
            diagnostics,
        }
    }
}

/// Exact generalized posterior of the linear Gaussian task under MSE:
/// precision `1/0.1 + 2β/D`, mean `Σ·(2β/D)·x_o`.
pub fn linear_gaussian_gt(beta: f64, x_o: &[f64]) -> Result<GaussianPosterior> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!("beta must be >= 0, got {beta}")));
    }
    let spec = TaskId::LinearGaussian.spec();
    if x_o.len() != spec.data_width() {
        return Err(Error::dims("observation", spec.data_width(), x_o.len()));
    }
    let (prior_var, d) = match TaskId::LinearGaussian.prior() {
        Prior::IsoGaussian { variance, mean } => (variance, mean.len() as f64),
        Prior::UniformBox { .. } => unreachable!("linear gaussian prior is Gaussian"),
    };
    let a = 2.0 * beta / d;
    let variance = 1.0 / (1.0 / prior_var + a);
    Ok(GaussianPosterior {
        mean: x_o.iter().map(|x| variance * a * x).collect(),
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn linear_gaussian_limits() {
        let xo = vec![0.7; 10];
        let p = linear_gaussian_gt(0.0, &xo).unwrap();
        assert!(p.mean.iter().all(|m| *m == 0.0));
        assert!((p.variance - 0.1).abs() < 1e-15);
        let p = linear_gaussian_gt(1e9, &xo).unwrap();
        assert!(p.mean.iter().all(|m| (m - 0.7).abs() < 1e-6));
        let vars: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|b| linear_gaussian_gt(*b, &xo).unwrap().variance)
            .collect();
        assert!(vars.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn beta_zero_accepts_every_prior_draw() {
        let cost = |t: &[f64]| Ok(t[0].abs());
        let cfg = RejectionConfig {
            grid_per_dim: Some(100),
            pilot: 100,
            batch: 500,
            ..Default::default()
        };
        let s = rejection_sample_gt(TaskId::Uniform1d, 0.0, &cost, &Proposal::Prior, 1000, "o", &cfg, &mut rng::seeded(1)).unwrap();
        assert_eq!(s.diagnostics["proposals"], 1000.0);
        assert_eq!(s.diagnostics["clip_rate"], 0.0);
    }

    #[test]
    fn floor_is_enforced() {
        let cost = |t: &[f64]| Ok(1e3 * t[0] * t[0]);
        let cfg = RejectionConfig {
            grid_per_dim: Some(1000),
            pilot: 10,
            batch: 100,
            acceptance_floor: 0.5,
            ..Default::default()
        };
        let e = rejection_sample_gt(TaskId::Uniform1d, 10.0, &cost, &Proposal::Prior, 1000, "o", &cfg, &mut rng::seeded(2));
        assert!(matches!(e, Err(Error::AcceptanceFloor { .. })));
    }

    #[test]
    fn grid_covers_box() {
        let g = grid_points(&TaskId::TwoMoons.prior(), 4);
        assert_eq!(g.len(), 16);
        assert!(g.iter().all(|t| t.iter().all(|v| v.abs() < 1.0)));
    }
}
