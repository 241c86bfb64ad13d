//! Posterior quality metrics and the benchmark runner.

mod benchmark;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use benchmark::{
    default_betas, run_benchmark, BenchMethod, BenchmarkConfig, BenchmarkReport, CellReport, CellStatus, GroupCache, GroupKey,
    NoCache, ObsClass, ObservationResult, REPORT_SCHEMA_VERSION,
};

use crate::distance::DistanceId;
use crate::error::{Error, Result};
use crate::gbi::CostFn;
use crate::nn::{self, FitConfig, FixedPairs, Loss, NetArch, NetParams};
use crate::rng::{self, Rng};
use crate::stats;
use crate::tasks::TaskId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and std of `d(x, x_o)` with one fresh simulation `x ~ p(x | θ)` per
/// posterior sample.
pub fn predictive_distance(
    task: TaskId,
    samples: ArrayView2<f64>,
    x_o: &[f64],
    distance: &DistanceId,
    rng: &mut Rng,
) -> Result<PredictiveSummary> {
    if samples.nrows() == 0 {
        return Err(Error::Empty("posterior samples"));
    }
    let point_dim = task.spec().x_dim;
    let mut ds = Vec::with_capacity(samples.nrows());
    for theta in samples.rows() {
        let x = task.simulate(theta.as_slice().expect("contiguous row"), rng)?;
        ds.push(distance.eval(&x, x_o, point_dim)?);
    }
    Ok(PredictiveSummary {
        mean: stats::mean(&ds),
        std: if ds.len() > 1 { stats::std_dev(&ds) } else { 0.0 },
        n: ds.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct C2stConfig {
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
    pub n_folds: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience_epochs: usize,
    pub seed: u64,
}

impl Default for C2stConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 100,
            n_hidden_layers: 2,
            n_folds: 5,
            batch_size: 200,
            learning_rate: 1e-3,
            max_epochs: 200,
            patience_epochs: 10,
            seed: 0,
        }
    }
}

/// Classifier two-sample test: mean held-out accuracy of an MLP separating
/// `a` from `b` over `n_folds` cross-validation folds. Inputs are z-scored
/// with pooled statistics.
pub fn c2st(a: ArrayView2<f64>, b: ArrayView2<f64>, cfg: &C2stConfig) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::dims("two-sample dimension", a.ncols(), b.ncols()));
    }
    if cfg.n_folds < 2 {
        return Err(Error::InvalidConfig("C2ST needs at least 2 folds".into()));
    }
    if a.nrows() < cfg.n_folds || b.nrows() < cfg.n_folds {
        return Err(Error::Empty("C2ST sample set"));
    }
    let mut x = ndarray::concatenate(Axis(0), &[a, b]).expect("dims checked");
    let n = x.nrows();
    for mut col in x.columns_mut() {
        let v = col.to_vec();
        let (m, s) = (stats::mean(&v), stats::std_dev(&v));
        if !(s > 1e-12) {
            return Err(Error::Degenerate("zero-variance column in pooled C2ST data".into()));
        }
        col.mapv_inplace(|e| (e - m) / s);
    }
    let labels: Vec<f64> = (0..n).map(|i| if i < a.nrows() { 0.0 } else { 1.0 }).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(rng::derive_seed(cfg.seed, "c2st-folds")));

    let arch = NetArch::mlp(x.ncols(), cfg.hidden_dim, cfg.n_hidden_layers);
    let mut accs = Vec::with_capacity(cfg.n_folds);
    for k in 0..cfg.n_folds {
        let lo = k * n / cfg.n_folds;
        let hi = (k + 1) * n / cfg.n_folds;
        let test = &order[lo..hi];
        let train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
        let pick = |idx: &[usize]| -> Array2<f64> { x.select(Axis(0), idx) };
        let source = FixedPairs::new(pick(&train), train.iter().map(|i| labels[*i]).collect())?;
        let fold_seed = rng::derive_seed(cfg.seed, &format!("c2st-fold-{k}"));
        let fit_cfg = FitConfig {
            batch_size: cfg.batch_size,
            n_target_train: 1,
            n_target_val: 1,
            patience_epochs: cfg.patience_epochs,
            max_epochs: cfg.max_epochs,
            val_fraction: 0.1,
            learning_rate: cfg.learning_rate,
            seed: fold_seed,
        };
        let init = NetParams::init(&arch, fold_seed)?;
        let fitted = nn::fit(init, &source, &fit_cfg, Loss::Logistic)?;
        let logits = fitted.params.forward_batch(pick(test).view())?;
        let hits = logits
            .iter()
            .zip(test)
            .filter(|(z, i)| (**z > 0.0) == (labels[**i] > 0.5))
            .count() as f64;
        accs.push(hits / test.len() as f64);
    }
    Ok(stats::mean(&accs))
}

/// Predicted vs true cost at a set of parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostAccuracy {
    pub predicted: Vec<f64>,
    pub truth: Vec<f64>,
    pub pearson: Option<f64>,
    pub rmse: f64,
    /// Set when the correlation is undefined.
    pub failure: Option<String>,
}

pub fn cost_accuracy(predicted: &dyn CostFn, truth: &dyn CostFn, thetas: ArrayView2<f64>) -> Result<CostAccuracy> {
    if thetas.nrows() == 0 {
        return Err(Error::Empty("cost accuracy parameters"));
    }
    let mut p = Vec::with_capacity(thetas.nrows());
    let mut t = Vec::with_capacity(thetas.nrows());
    for theta in thetas.rows() {
        let theta = theta.as_slice().expect("contiguous row");
        p.push(predicted.cost(theta)?);
        t.push(truth.cost(theta)?);
    }
    let rmse = stats::rmse(&p, &t)?;
    let (pearson, failure) = match stats::pearson(&p, &t) {
        Ok(r) => (Some(r), None),
        Err(Error::Degenerate(_)) => (None, Some("constant_cost".to_string())),
        Err(e) => return Err(e),
    };
    Ok(CostAccuracy {
        predicted: p,
        truth: t,
        pearson,
        rmse,
        failure,
    })
}
