//! The cost network: a regression net `f(θ, x_t)` with task metadata and a
//! versioned on-disk format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distance::DistanceId;
use crate::error::{Error, Result};
use crate::gbi::CostFn;
use crate::nn::{self, Conditioned, FitConfig, FitResult, Loss, NetArch, NetParams, SetEmbedArch};
use crate::rng;
use crate::targets::{CostPairs, SimDataset, TargetSet};
use crate::tasks::TaskId;

pub const FORMAT_VERSION: u32 = 1;

/// Residual trunk over `[θ | x_t]`, with a set embedding for set-valued tasks.
pub fn default_arch(task: TaskId) -> NetArch {
    let spec = task.spec();
    if task.is_set_valued() {
        NetArch::residual(spec.theta_dim).with_embedding(SetEmbedArch::new(spec.x_dim))
    } else {
        NetArch::residual(spec.theta_dim + spec.data_width())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSummary {
    pub fit: FitConfig,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostNet {
    pub version: u32,
    pub task: TaskId,
    pub distance: DistanceId,
    pub params: NetParams,
    pub training: Option<TrainingSummary>,
}

impl CostNet {
    pub fn new(task: TaskId, distance: DistanceId, params: NetParams) -> Result<Self> {
        let net = Self {
            version: FORMAT_VERSION,
            task,
            distance,
            params,
            training: None,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported network format version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        self.distance.validate()?;
        let spec = self.task.spec();
        let width = spec.theta_dim + spec.data_width();
        self.params.arch.set_size(width).map(|_| ())
    }

    /// Trains on pairs of simulations and targets.
    pub fn train(
        sims: &SimDataset,
        targets: &TargetSet,
        distance: DistanceId,
        arch: NetArch,
        cfg: &FitConfig,
    ) -> Result<(Self, FitResult)> {
        let pairs = CostPairs::new(sims, targets, distance.clone())?;
        let init = NetParams::init(&arch, rng::derive_seed(cfg.seed, "init"))?;
        let result = nn::fit_regression(init, &pairs, cfg)?;
        let mut net = Self::new(sims.task, distance, result.params.clone())?;
        net.training = Some(TrainingSummary {
            fit: cfg.clone(),
            epochs: result.history.len(),
            best_epoch: result.best_epoch,
            best_val_loss: result.best_val_loss,
            converged: result.converged,
        });
        Ok((net, result))
    }

    /// Recomputes the validation loss at the best epoch from the training data.
    pub fn recompute_validation_loss(&self, sims: &SimDataset, targets: &TargetSet) -> Result<f64> {
        let t = self
            .training
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("network has no training record".into()))?;
        let pairs = CostPairs::new(sims, targets, self.distance.clone())?;
        let split = nn::split_indices(sims.len(), t.fit.val_fraction, t.fit.seed)?;
        nn::validation_loss(&self.params, &pairs, &split, &t.fit, t.best_epoch, Loss::Mse)
    }

    pub fn predict(&self, theta: &[f64], x_t: &[f64]) -> Result<f64> {
        let mut row = Vec::with_capacity(theta.len() + x_t.len());
        row.extend_from_slice(theta);
        row.extend_from_slice(x_t);
        self.params.predict_row(&row)
    }

    /// The network with `x_t` fixed to an observation.
    pub fn at_observation(&self, x_o: &[f64]) -> Result<ObservationCost<'_>> {
        let spec = self.task.spec();
        if x_o.len() != spec.data_width() {
            return Err(Error::dims("observation", spec.data_width(), x_o.len()));
        }
        Ok(ObservationCost {
            inner: self.params.condition(spec.theta_dim, x_o)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Predicted cost `θ ↦ f(θ, x_o)` for one fixed observation.
pub struct ObservationCost<'a> {
    inner: Conditioned<'a>,
}

impl CostFn for ObservationCost<'_> {
    fn cost(&self, theta: &[f64]) -> Result<f64> {
        self.inner.predict(theta)
    }
}
