//! Mini-batch regression training with early stopping.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::forward::Loss;
use super::params::{NetParams, Standardizer};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Supplies (input row, label) pairs for a base item. Labels may be freshly
/// sampled on every call (for the cost network, a random target is drawn per
/// pair and its distance to the item's simulation becomes the label).
pub trait PairSource {
    fn n_items(&self) -> usize;

    fn row_width(&self) -> usize;

    /// Appends `n_target` rows to `rows` and their labels to `labels`.
    fn draw(
        &self,
        item: usize,
        n_target: usize,
        rng: &mut Rng,
        rows: &mut Vec<f64>,
        labels: &mut Vec<f64>,
    ) -> Result<()>;
}

/// A fixed table of inputs and labels; `n_target` is ignored and each item
/// contributes its single row.
#[derive(Clone, Debug)]
pub struct FixedPairs {
    pub inputs: Array2<f64>,
    pub labels: Vec<f64>,
}

impl FixedPairs {
    pub fn new(inputs: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::dims("fixed pair labels", inputs.nrows(), labels.len()));
        }
        Ok(Self { inputs, labels })
    }
}

impl PairSource for FixedPairs {
    fn n_items(&self) -> usize {
        self.labels.len()
    }

    fn row_width(&self) -> usize {
        self.inputs.ncols()
    }

    fn draw(&self, item: usize, _: usize, _: &mut Rng, rows: &mut Vec<f64>, labels: &mut Vec<f64>) -> Result<()> {
        rows.extend(self.inputs.row(item).iter());
        labels.push(self.labels[item]);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Base items (θ) per optimizer step.
    pub batch_size: usize,
    pub n_target_train: usize,
    pub n_target_val: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            batch_size: 500,
            n_target_train: 2,
            n_target_val: 5,
            patience_epochs: 100,
            max_epochs: 1000,
            val_fraction: 0.1,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if self.patience_epochs > self.max_epochs {
            return bad("patience_epochs must not exceed max_epochs");
        }
        if self.batch_size == 0 || self.n_target_train == 0 || self.n_target_val == 0 || self.max_epochs == 0 {
            return bad("batch_size, target counts and max_epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Random train/validation partition, fixed by `seed`.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<DataSplit> {
    if n == 0 {
        return Err(Error::Empty("training dataset"));
    }
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::Empty("train/validation split (dataset too small)"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(rng::derive_seed(seed, "split")));
    let val = idx.split_off(n - n_val);
    Ok(DataSplit { train: idx, val })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: NetParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// True when training stopped on patience rather than `max_epochs`.
    pub converged: bool,
    pub split: DataSplit,
}

fn gather<S: PairSource + ?Sized>(
    source: &S,
    items: &[usize],
    n_target: usize,
    rng: &mut Rng,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let width = source.row_width();
    let mut rows = Vec::with_capacity(items.len() * n_target * width);
    let mut labels = Vec::with_capacity(items.len() * n_target);
    for &i in items {
        source.draw(i, n_target, rng, &mut rows, &mut labels)?;
    }
    let n = labels.len();
    let rows = Array2::from_shape_vec((n, width), rows)
        .map_err(|_| Error::dims("drawn rows", n * width, 0))?;
    Ok((rows, Array1::from(labels)))
}

/// Validation loss of `params` at `epoch`. Targets for validation items are
/// drawn from a stream keyed by `(seed, epoch)`, so a saved network can
/// reproduce its recorded loss exactly.
pub fn validation_loss<S: PairSource + ?Sized>(
    params: &NetParams,
    source: &S,
    split: &DataSplit,
    cfg: &FitConfig,
    epoch: usize,
    loss: Loss,
) -> Result<f64> {
    let mut rng = rng::substream(rng::derive_seed(cfg.seed, "validation"), epoch as u64);
    let (rows, labels) = gather(source, &split.val, cfg.n_target_val, &mut rng)?;
    params.loss(rows.view(), labels.view(), loss)
}

pub fn fit_regression<S: PairSource + ?Sized>(init: NetParams, source: &S, cfg: &FitConfig) -> Result<FitResult> {
    fit(init, source, cfg, Loss::Mse)
}

pub fn fit<S: PairSource + ?Sized>(
    init: NetParams,
    source: &S,
    cfg: &FitConfig,
    loss: Loss,
) -> Result<FitResult> {
    cfg.validate()?;
    let split = split_indices(source.n_items(), cfg.val_fraction, cfg.seed)?;
    let mut params = init;
    {
        let mut rng = rng::seeded(rng::derive_seed(cfg.seed, "standardize"));
        let (rows, _) = gather(source, &split.train, cfg.n_target_train, &mut rng)?;
        params.standardizer = Standardizer::fit(&params.arch, rows.view())?;
    }
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut since_best = 0usize;
    let mut converged = false;
    let train_seed = rng::derive_seed(cfg.seed, "train");

    for epoch in 0..cfg.max_epochs {
        let mut rng = rng::substream(train_seed, epoch as u64);
        let mut order = split.train.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (rows, labels) = gather(source, chunk, cfg.n_target_train, &mut rng)?;
            let (l, grad) = params.loss_and_gradient(rows.view(), labels.view(), loss)?;
            adam.step(&mut params.values, &grad)?;
            total += l * labels.len() as f64;
            count += labels.len();
        }
        let train_loss = total / count as f64;
        let val_loss = validation_loss(&params, source, &split, cfg, epoch, loss)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience_epochs {
                converged = true;
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, params) = best;
    Ok(FitResult {
        params,
        history,
        best_epoch,
        best_val_loss,
        converged,
        split,
    })
}
