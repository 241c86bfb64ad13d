//! Simulation datasets, target pools, synthetic observations and on-the-fly
//! training-pair sampling for the cost network.

use ndarray::{concatenate, s, Array2, ArrayView1, Axis};
use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distance::DistanceId;
use crate::error::{Error, Result};
use crate::nn::PairSource;
use crate::rng::{self, Rng};
use crate::tasks::{mixture, PriorBounds, TaskId};

/// Paired prior draws and simulations.
#[derive(Clone, Debug, PartialEq)]
pub struct SimDataset {
    pub task: TaskId,
    pub seed: u64,
    pub theta: Array2<f64>,
    pub x: Array2<f64>,
}

impl SimDataset {
    pub fn new(task: TaskId, seed: u64, theta: Array2<f64>, x: Array2<f64>) -> Result<Self> {
        let spec = task.spec();
        if theta.ncols() != spec.theta_dim {
            return Err(Error::dims("dataset parameters", spec.theta_dim, theta.ncols()));
        }
        if x.ncols() != spec.data_width() {
            return Err(Error::dims("dataset simulations", spec.data_width(), x.ncols()));
        }
        if theta.nrows() != x.nrows() {
            return Err(Error::dims("dataset rows", theta.nrows(), x.nrows()));
        }
        Ok(Self { task, seed, theta, x })
    }

    /// Draws `n` parameters from the prior and simulates each on its own
    /// substream, so item `i` does not depend on how many items precede it.
    pub fn generate(task: TaskId, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("simulation budget"));
        }
        let theta = task.prior_sample(n, &mut rng::seeded(rng::derive_seed(seed, "prior")));
        let sim_seed = rng::derive_seed(seed, "simulate");
        let mut x = Array2::zeros((n, task.spec().data_width()));
        for (i, (t, mut row)) in theta.rows().into_iter().zip(x.rows_mut()).enumerate() {
            let mut r = rng::substream(sim_seed, i as u64);
            let sim = task.simulate(t.as_slice().expect("contiguous row"), &mut r)?;
            row.assign(&ArrayView1::from(&sim));
        }
        Self::new(task, seed, theta, x)
    }

    pub fn len(&self) -> usize {
        self.theta.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leading `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            task: self.task,
            seed: self.seed,
            theta: self.theta.slice(s![..n, ..]).to_owned(),
            x: self.x.slice(s![..n, ..]).to_owned(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Specification {
    WellSpecified,
    Misspecified,
}

impl Specification {
    pub fn name(&self) -> &'static str {
        match self {
            Specification::WellSpecified => "well_specified",
            Specification::Misspecified => "misspecified",
        }
    }
}

/// A synthetic observation with the parameter that generated it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub id: String,
    pub kind: Specification,
    /// Whether the observation is part of the training target pool.
    pub seen: bool,
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MisspecConfig {
    pub n_observations: usize,
    /// Random-walk step std as a multiple of the prior-predictive std.
    pub step_multiplier: f64,
    pub max_iterations: usize,
}

impl Default for MisspecConfig {
    fn default() -> Self {
        Self {
            n_observations: 10,
            step_multiplier: 0.5,
            max_iterations: 10_000,
        }
    }
}

impl MisspecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_multiplier > 0.0 && self.step_multiplier.is_finite()) {
            return Err(Error::InvalidConfig("misspecification step must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("misspecification max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fresh prior-predictive draws.
pub fn make_well_specified_observations(
    task: TaskId,
    n: usize,
    prefix: &str,
    seen: bool,
    rng: &mut Rng,
) -> Result<Vec<Observation>> {
    (0..n)
        .map(|i| {
            let theta = task.prior().sample(rng);
            let x = task.simulate(&theta, rng)?;
            Ok(Observation {
                id: format!("{prefix}{i}"),
                kind: Specification::WellSpecified,
                seen,
                theta,
                x,
            })
        })
        .collect()
}

/// Observations the simulator cannot reproduce. Vector-valued tasks take a
/// prior-predictive draw and add `N(0, (m·σ_x)²)` noise until every coordinate
/// leaves the prior-predictive range; the mixture task swaps its narrow
/// component for a distant one.
pub fn make_misspecified_observations(
    task: TaskId,
    bounds: &PriorBounds,
    cfg: &MisspecConfig,
    prefix: &str,
    seen: bool,
    rng: &mut Rng,
) -> Result<Vec<Observation>> {
    cfg.validate()?;
    let width = task.spec().data_width();
    if bounds.std.len() != width {
        return Err(Error::dims("prior bounds", width, bounds.std.len()));
    }
    let steps = bounds
        .std
        .iter()
        .map(|s| Normal::new(0.0, cfg.step_multiplier * s))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    (0..cfg.n_observations)
        .map(|i| {
            let theta = task.prior().sample(rng);
            let x = if task == TaskId::GaussianMixture {
                mixture::simulate_displaced(&theta, rng)
            } else {
                let mut x = task.simulate(&theta, rng)?;
                let mut iter = 0;
                while !bounds.outside_all(&x) {
                    if iter == cfg.max_iterations {
                        return Err(Error::MaxIterations {
                            what: "misspecified observation search",
                            limit: cfg.max_iterations,
                        });
                    }
                    for (v, d) in x.iter_mut().zip(&steps) {
                        *v += d.sample(rng);
                    }
                    iter += 1;
                }
                x
            };
            Ok(Observation {
                id: format!("{prefix}{i}"),
                kind: Specification::Misspecified,
                seen,
                theta,
                x,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Raw,
    Augmented,
    Observation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub n_augmented: usize,
    /// Noise std as a multiple of the prior-predictive std.
    pub sigma_multiplier: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            n_augmented: 100,
            sigma_multiplier: 2.0,
        }
    }
}

/// Pool of targets `x_t` the cost network is trained over.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    pub rows: Array2<f64>,
    pub kinds: Vec<TargetKind>,
    /// For augmented rows, the simulation row they were derived from.
    pub sources: Vec<Option<usize>>,
    pub sigma: Vec<f64>,
    pub dataset: String,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, kind: TargetKind) -> usize {
        self.kinds.iter().filter(|k| **k == kind).count()
    }
}

/// Simulations, then `S` noisy copies of a random subset of them, then the
/// observations. `sigma` holds one noise std per data column.
pub fn build_target_set(
    sims: &SimDataset,
    noise: &NoiseConfig,
    sigma: &[f64],
    observations: &[Observation],
    rng: &mut Rng,
) -> Result<TargetSet> {
    if sims.is_empty() {
        return Err(Error::Empty("simulation dataset"));
    }
    let width = sims.x.ncols();
    if noise.n_augmented > 0 && sigma.len() != width {
        return Err(Error::dims("augmentation noise", width, sigma.len()));
    }
    if noise.n_augmented > sims.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot augment {} rows from {} simulations",
            noise.n_augmented,
            sims.len()
        )));
    }
    let normals = sigma
        .iter()
        .map(|s| Normal::new(0.0, *s))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let picks = index::sample(rng, sims.len(), noise.n_augmented).into_vec();
    let mut aug = Array2::zeros((picks.len(), width));
    for (mut row, &src) in aug.rows_mut().into_iter().zip(&picks) {
        for ((v, x), d) in row.iter_mut().zip(sims.x.row(src)).zip(&normals) {
            *v = x + d.sample(rng);
        }
    }
    let mut obs = Array2::zeros((observations.len(), width));
    for (mut row, o) in obs.rows_mut().into_iter().zip(observations) {
        if o.x.len() != width {
            return Err(Error::dims("observation", width, o.x.len()));
        }
        row.assign(&ArrayView1::from(&o.x));
    }
    let rows = concatenate(Axis(0), &[sims.x.view(), aug.view(), obs.view()])
        .expect("column counts checked");
    let mut kinds = vec![TargetKind::Raw; sims.len()];
    kinds.extend(std::iter::repeat_n(TargetKind::Augmented, picks.len()));
    kinds.extend(std::iter::repeat_n(TargetKind::Observation, observations.len()));
    let mut sources: Vec<Option<usize>> = vec![None; sims.len()];
    sources.extend(picks.iter().map(|p| Some(*p)));
    sources.extend(std::iter::repeat_n(None, observations.len()));
    Ok(TargetSet {
        rows,
        kinds,
        sources,
        sigma: sigma.to_vec(),
        dataset: format!("{}-seed{}-n{}", sims.task, sims.seed, sims.len()),
    })
}

/// Training pairs `([θ_i | x_t], d(x_i, x_t))` with targets drawn uniformly
/// without replacement per parameter. Labels are computed on demand.
pub struct CostPairs<'a> {
    sims: &'a SimDataset,
    targets: &'a TargetSet,
    distance: DistanceId,
    point_dim: usize,
}

impl<'a> CostPairs<'a> {
    pub fn new(sims: &'a SimDataset, targets: &'a TargetSet, distance: DistanceId) -> Result<Self> {
        distance.validate()?;
        if targets.rows.ncols() != sims.x.ncols() {
            return Err(Error::dims("target width", sims.x.ncols(), targets.rows.ncols()));
        }
        if targets.is_empty() {
            return Err(Error::Empty("target set"));
        }
        Ok(Self {
            sims,
            targets,
            distance,
            point_dim: sims.task.spec().x_dim,
        })
    }
}

impl PairSource for CostPairs<'_> {
    fn n_items(&self) -> usize {
        self.sims.len()
    }

    fn row_width(&self) -> usize {
        self.sims.theta.ncols() + self.sims.x.ncols()
    }

    fn draw(
        &self,
        item: usize,
        n_target: usize,
        rng: &mut Rng,
        rows: &mut Vec<f64>,
        labels: &mut Vec<f64>,
    ) -> Result<()> {
        if n_target == 0 || n_target > self.targets.len() {
            return Err(Error::InvalidConfig(format!(
                "n_target {n_target} not in 1..={}",
                self.targets.len()
            )));
        }
        let x = self.sims.x.row(item);
        let x = x.as_slice().expect("contiguous row");
        for t in index::sample(rng, self.targets.len(), n_target) {
            let target = self.targets.rows.row(t);
            let target = target.as_slice().expect("contiguous row");
            rows.extend(self.sims.theta.row(item).iter());
            rows.extend_from_slice(target);
            labels.push(self.distance.eval(x, target, self.point_dim)?);
        }
        Ok(())
    }
}

/// One batch of training pairs for `items`.
pub fn sample_training_pairs(
    pairs: &CostPairs<'_>,
    items: &[usize],
    n_target: usize,
    rng: &mut Rng,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for &i in items {
        if i >= pairs.n_items() {
            return Err(Error::dims("pair item index", pairs.n_items(), i));
        }
        pairs.draw(i, n_target, rng, &mut rows, &mut labels)?;
    }
    let rows = Array2::from_shape_vec((labels.len(), pairs.row_width()), rows)
        .expect("row width is fixed");
    Ok((rows, labels))
}
