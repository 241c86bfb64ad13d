//! Generalized posteriors `p(θ | x_o) ∝ exp(−β·ℓ(θ; x_o))·p(θ)` and their
//! samplers.

mod abc;
mod ground_truth;
mod slice;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use abc::{abc_kernel_sample, AbcOutcome};
pub use ground_truth::{linear_gaussian_gt, rejection_sample_gt, GaussianPosterior, Proposal, RejectionConfig};
pub use slice::{slice_sample, LogDensity, SliceConfig};

use crate::distance::DistanceId;
use crate::error::{Error, Result};
use crate::tasks::{MoonQuadrature, Prior, TaskId};

/// A cost `θ ↦ ℓ(θ)` for one fixed observation.
pub trait CostFn: Sync {
    fn cost(&self, theta: &[f64]) -> Result<f64>;
}

impl<F: Fn(&[f64]) -> Result<f64> + Sync> CostFn for F {
    fn cost(&self, theta: &[f64]) -> Result<f64> {
        self(theta)
    }
}

/// The task's true expected cost at a fixed observation.
pub struct OracleCost {
    pub task: TaskId,
    pub x_o: Vec<f64>,
    pub distance: DistanceId,
    pub quadrature: MoonQuadrature,
}

impl OracleCost {
    pub fn new(task: TaskId, x_o: &[f64], distance: DistanceId) -> Result<Self> {
        let o = Self {
            task,
            x_o: x_o.to_vec(),
            distance,
            quadrature: MoonQuadrature::default(),
        };
        // fail early when no oracle exists
        o.cost(&task.prior().sample(&mut crate::rng::seeded(0)))?;
        Ok(o)
    }
}

impl CostFn for OracleCost {
    fn cost(&self, theta: &[f64]) -> Result<f64> {
        self.task
            .true_cost_with(theta, &self.x_o, &self.distance, &self.quadrature)
    }
}

/// Unnormalized log density `−β·cost(θ) + log p(θ)`.
pub struct Potential<'a> {
    pub cost: &'a dyn CostFn,
    pub prior: Prior,
    pub beta: f64,
}

impl<'a> Potential<'a> {
    pub fn new(cost: &'a dyn CostFn, prior: Prior, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self { cost, prior, beta })
    }
}

impl LogDensity for Potential<'_> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        let lp = self.prior.log_prob(theta)?;
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        let c = self.cost.cost(theta)?;
        if !c.is_finite() {
            return Err(Error::NonFinite("cost prediction".into()));
        }
        if self.beta == 0.0 {
            return Ok(lp);
        }
        Ok(lp - self.beta * c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Slice sampling over the cost network.
    Ace,
    /// Slice sampling over the true cost.
    OracleSlice,
    GtRejection,
    GtAnalytic,
    Abc,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ace => "ace",
            Method::OracleSlice => "oracle-slice",
            Method::GtRejection => "gt-rejection",
            Method::GtAnalytic => "gt-analytic",
            Method::Abc => "abc",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Method::Ace,
            Method::OracleSlice,
            Method::GtRejection,
            Method::GtAnalytic,
            Method::Abc,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub samples: Array2<f64>,
    pub method: Method,
    pub beta: f64,
    pub observation: String,
    pub diagnostics: BTreeMap<String, f64>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }
}

/// Slice sampling of a potential with chains started from prior draws and
/// step widths equal to the prior standard deviations.
pub fn sample_potential(potential: &Potential<'_>, cfg: &SliceConfig, method: Method, observation: &str) -> Result<PosteriorSamples> {
    let prior = potential.prior.clone();
    let mut cfg = cfg.clone();
    if cfg.width.is_none() {
        cfg.width = Some(prior.std_dev());
    }
    let (samples, diagnostics) = slice_sample(potential, |r| prior.sample(r), &cfg)?;
    Ok(PosteriorSamples {
        samples,
        method,
        beta: potential.beta,
        observation: observation.to_string(),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn potential_is_linear_in_beta() {
        let cost = |t: &[f64]| Ok(t[0] * t[0] + 0.5);
        let prior = TaskId::Uniform1d.prior();
        let p1 = Potential::new(&cost, prior.clone(), 3.0).unwrap();
        let p2 = Potential::new(&cost, prior.clone(), 6.0).unwrap();
        let p0 = Potential::new(&cost, prior.clone(), 0.0).unwrap();
        for t in [-1.2, 0.0, 0.7] {
            let diff = p2.log_density(&[t]).unwrap() - p1.log_density(&[t]).unwrap();
            assert!((diff + 3.0 * (t * t + 0.5)).abs() < 1e-12);
            assert_eq!(p0.log_density(&[t]).unwrap(), prior.log_prob(&[t]).unwrap());
        }
        assert_eq!(p1.log_density(&[2.0]).unwrap(), f64::NEG_INFINITY);
        assert!(Potential::new(&cost, prior, -1.0).is_err());
    }

    #[test]
    fn non_finite_cost_is_an_error() {
        let cost = |_: &[f64]| Ok(f64::NAN);
        let p = Potential::new(&cost, TaskId::Uniform1d.prior(), 1.0).unwrap();
        assert!(matches!(p.log_density(&[0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn oracle_requires_known_pairing() {
        assert!(OracleCost::new(TaskId::Uniform1d, &[0.1], DistanceId::Energy { exponent: 1.0 }).is_err());
        let o = OracleCost::new(TaskId::Uniform1d, &[0.1], DistanceId::Mse).unwrap();
        assert!(o.cost(&[0.0]).unwrap() > 0.0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in ["ace", "oracle-slice", "gt-rejection", "gt-analytic", "abc"] {
            assert_eq!(m.parse::<Method>().unwrap().name(), m);
        }
    }
}
