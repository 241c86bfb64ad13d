//! Benchmark simulators with priors and true-cost oracles.

pub mod mixture;
mod prior;
pub mod two_moons;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use prior::Prior;
pub use two_moons::MoonQuadrature;

use crate::distance::DistanceId;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Uniform1d,
    TwoMoons,
    LinearGaussian,
    GaussianMixture,
}

/// Static description of a task.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSpec {
    pub theta_dim: usize,
    /// Dimension of a single simulated point.
    pub x_dim: usize,
    /// Number of i.i.d. points per simulation.
    pub n_iid_trials: usize,
    pub prior: &'static str,
    pub distance: &'static str,
}

impl TaskSpec {
    /// Width of a flattened simulation.
    pub fn data_width(&self) -> usize {
        self.x_dim * self.n_iid_trials
    }
}

const LG_DIM: usize = 10;
const LG_VARIANCE: f64 = 0.1;
const UNIFORM_NOISE_HALF_WIDTH: f64 = 0.25;

impl TaskId {
    pub const ALL: [TaskId; 4] = [
        TaskId::Uniform1d,
        TaskId::TwoMoons,
        TaskId::LinearGaussian,
        TaskId::GaussianMixture,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TaskId::Uniform1d => "uniform1d",
            TaskId::TwoMoons => "two_moons",
            TaskId::LinearGaussian => "linear_gaussian",
            TaskId::GaussianMixture => "gaussian_mixture",
        }
    }

    pub fn spec(&self) -> TaskSpec {
        match self {
            TaskId::Uniform1d => TaskSpec {
                theta_dim: 1,
                x_dim: 1,
                n_iid_trials: 1,
                prior: "U(-1.5, 1.5)",
                distance: "mse",
            },
            TaskId::TwoMoons => TaskSpec {
                theta_dim: 2,
                x_dim: 2,
                n_iid_trials: 1,
                prior: "U(-1, 1)^2",
                distance: "mse",
            },
            TaskId::LinearGaussian => TaskSpec {
                theta_dim: LG_DIM,
                x_dim: LG_DIM,
                n_iid_trials: 1,
                prior: "N(0, 0.1 I_10)",
                distance: "mse",
            },
            TaskId::GaussianMixture => TaskSpec {
                theta_dim: 2,
                x_dim: mixture::POINT_DIM,
                n_iid_trials: mixture::N_TRIALS,
                prior: "U(-10, 10)^2",
                distance: "mmd2",
            },
        }
    }

    pub fn is_set_valued(&self) -> bool {
        self.spec().n_iid_trials > 1
    }

    pub fn prior(&self) -> Prior {
        match self {
            TaskId::Uniform1d => Prior::uniform(1, -1.5, 1.5),
            TaskId::TwoMoons => Prior::uniform(2, -1.0, 1.0),
            TaskId::LinearGaussian => Prior::IsoGaussian {
                mean: vec![0.0; LG_DIM],
                variance: LG_VARIANCE,
            },
            TaskId::GaussianMixture => Prior::uniform(2, -10.0, 10.0),
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let d = self.spec().theta_dim;
        if theta.len() != d {
            return Err(Error::dims("parameter vector", d, theta.len()));
        }
        Ok(())
    }

    fn check_data(&self, x: &[f64]) -> Result<()> {
        let w = self.spec().data_width();
        if x.len() != w {
            return Err(Error::dims("data point", w, x.len()));
        }
        Ok(())
    }

    pub fn prior_sample(&self, n: usize, rng: &mut Rng) -> Array2<f64> {
        self.prior().sample_n(n, rng)
    }

    pub fn prior_log_prob(&self, theta: &[f64]) -> Result<f64> {
        self.prior().log_prob(theta)
    }

    /// One stochastic draw from `p(x | θ)`, flattened.
    pub fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(match self {
            TaskId::Uniform1d => {
                let noise = UNIFORM_NOISE_HALF_WIDTH * (2.0 * rng.random::<f64>() - 1.0);
                vec![uniform1d_mean(theta[0]) + noise]
            }
            TaskId::TwoMoons => two_moons::simulate(theta, rng),
            TaskId::LinearGaussian => {
                let sd = LG_VARIANCE.sqrt();
                theta
                    .iter()
                    .map(|t| t + sd * { let z: f64 = StandardNormal.sample(rng); z })
                    .collect()
            }
            TaskId::GaussianMixture => mixture::simulate(theta, rng),
        })
    }

    /// Simulates every row of `thetas` in order.
    pub fn simulate_batch(&self, thetas: ArrayView2<f64>, rng: &mut Rng) -> Result<Array2<f64>> {
        let w = self.spec().data_width();
        let mut out = Array2::zeros((thetas.nrows(), w));
        for (theta, mut dst) in thetas.rows().into_iter().zip(out.rows_mut()) {
            let theta = theta.to_vec();
            for (d, v) in dst.iter_mut().zip(self.simulate(&theta, rng)?) {
                *d = v;
            }
        }
        Ok(out)
    }

    /// The task's distance with default parameters. The mixture task's
    /// bandwidth is data dependent and must be supplied.
    pub fn default_distance(&self, bandwidth: Option<f64>) -> Result<DistanceId> {
        match self {
            TaskId::GaussianMixture => match bandwidth {
                Some(b) => Ok(DistanceId::Mmd2 { bandwidth: b }),
                None => Err(Error::InvalidConfig(
                    "gaussian_mixture needs an MMD bandwidth".into(),
                )),
            },
            _ => Ok(DistanceId::Mse),
        }
    }

    /// `ℓ(θ; x_o) = E_{p(x|θ)}[d(x, x_o)]`, exact or by quadrature.
    pub fn true_cost(&self, theta: &[f64], x_o: &[f64], distance: &DistanceId) -> Result<f64> {
        self.true_cost_with(theta, x_o, distance, &MoonQuadrature::default())
    }

    pub fn true_cost_with(
        &self,
        theta: &[f64],
        x_o: &[f64],
        distance: &DistanceId,
        quadrature: &MoonQuadrature,
    ) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_data(x_o)?;
        match (self, distance) {
            (TaskId::Uniform1d, DistanceId::Mse) => {
                let r = uniform1d_mean(theta[0]) - x_o[0];
                // uniform noise of width w adds w²/12
                Ok(r * r + (2.0 * UNIFORM_NOISE_HALF_WIDTH).powi(2) / 12.0)
            }
            (TaskId::TwoMoons, DistanceId::Mse) => quadrature.expected_mse(theta, x_o),
            (TaskId::LinearGaussian, DistanceId::Mse) => {
                let sq: f64 = theta.iter().zip(x_o).map(|(t, x)| (t - x).powi(2)).sum();
                Ok(sq / LG_DIM as f64 + LG_VARIANCE)
            }
            (TaskId::GaussianMixture, DistanceId::Mmd2 { bandwidth }) => {
                Ok(mixture::expected_mmd2(theta, x_o, *bandwidth))
            }
            _ => Err(Error::NoOracle {
                task: self.name().into(),
                distance: distance.to_string(),
            }),
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task '{s}'")))
    }
}

/// Noiseless output of the uniform task: quartic `g(z)` at `z = 0.8·(θ + 0.25)`.
pub fn uniform1d_mean(theta: f64) -> f64 {
    let z = 0.8 * (theta + 0.25);
    0.1627 + z * (0.9073 + z * (-1.2197 + z * (-1.4639 + z * 1.4381)))
}

/// Elementwise range and spread of prior-predictive simulations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub std: Vec<f64>,
    pub n_sims: usize,
}

impl PriorBounds {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// True when every coordinate lies strictly outside `[min, max]`.
    pub fn outside_all(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(v, (lo, hi))| *v < *lo || *v > *hi)
    }
}

pub fn prior_predictive_bounds(task: TaskId, n: usize, rng: &mut Rng) -> Result<PriorBounds> {
    if n < 2 {
        return Err(Error::InvalidConfig("prior predictive bounds need n >= 2".into()));
    }
    let thetas = task.prior_sample(n, rng);
    let xs = task.simulate_batch(thetas.view(), rng)?;
    let w = xs.ncols();
    let mut min = vec![f64::INFINITY; w];
    let mut max = vec![f64::NEG_INFINITY; w];
    let mut std = Vec::with_capacity(w);
    for (c, col) in xs.columns().into_iter().enumerate() {
        let col = col.to_vec();
        for v in &col {
            min[c] = min[c].min(*v);
            max[c] = max[c].max(*v);
        }
        let s = crate::stats::std_dev(&col);
        if !(s > 0.0) {
            return Err(Error::Degenerate(format!("zero spread in data dimension {c}")));
        }
        std.push(s);
    }
    Ok(PriorBounds { min, max, std, n_sims: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn dimensions_match_task_table() {
        let dims: Vec<(usize, usize, usize)> = TaskId::ALL
            .iter()
            .map(|t| {
                let s = t.spec();
                (s.theta_dim, s.x_dim, s.n_iid_trials)
            })
            .collect();
        assert_eq!(dims, vec![(1, 1, 1), (2, 2, 1), (10, 10, 1), (2, 2, 5)]);
    }

    #[test]
    fn names_round_trip() {
        for t in TaskId::ALL {
            assert_eq!(t.name().parse::<TaskId>().unwrap(), t);
        }
        assert!("moons".parse::<TaskId>().is_err());
    }

    #[test]
    fn prior_support_and_shapes() {
        let mut r = rng::seeded(1);
        let s = TaskId::Uniform1d.prior_sample(10_000, &mut r);
        assert!(s.iter().all(|v| (-1.5..=1.5).contains(v)));
        assert_eq!(TaskId::GaussianMixture.prior_sample(3, &mut r).ncols(), 2);
    }

    #[test]
    fn linear_gaussian_prior_variance() {
        let mut r = rng::seeded(2);
        let s = TaskId::LinearGaussian.prior_sample(100_000, &mut r);
        for col in s.columns() {
            let v = crate::stats::variance(&col.to_vec());
            assert!((v - 0.1).abs() < 0.005, "{v}");
        }
    }

    #[test]
    fn prior_log_prob_examples() {
        assert!((TaskId::Uniform1d.prior_log_prob(&[0.0]).unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert_eq!(TaskId::TwoMoons.prior_log_prob(&[2.0, 0.0]).unwrap(), f64::NEG_INFINITY);
        let lp = TaskId::LinearGaussian.prior_log_prob(&[0.0; 10]).unwrap();
        assert!((lp - 2.3235).abs() < 1e-3, "{lp}");
        assert!(TaskId::Uniform1d.prior_log_prob(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn uniform1d_simulation_range() {
        assert!((uniform1d_mean(0.0) - 0.28596).abs() < 1e-4);
        let mut r = rng::seeded(3);
        for _ in 0..1000 {
            let x = TaskId::Uniform1d.simulate(&[0.0], &mut r).unwrap()[0];
            assert!((x - uniform1d_mean(0.0)).abs() <= 0.25);
        }
    }

    #[test]
    fn mixture_simulation_shape() {
        let mut r = rng::seeded(4);
        assert_eq!(TaskId::GaussianMixture.simulate(&[1.0, 2.0], &mut r).unwrap().len(), 10);
    }

    #[test]
    fn true_cost_closed_forms() {
        let mse = DistanceId::Mse;
        let g = uniform1d_mean(0.3);
        let c = TaskId::Uniform1d.true_cost(&[0.3], &[g], &mse).unwrap();
        assert!((c - 0.5f64.powi(2) / 12.0).abs() < 1e-12);
        let theta = [0.05; 10];
        let c = TaskId::LinearGaussian.true_cost(&theta, &theta, &mse).unwrap();
        assert!((c - 0.1).abs() < 1e-12);
    }

    #[test]
    fn linear_gaussian_cost_against_monte_carlo() {
        let mut r = rng::seeded(5);
        let theta: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 - 0.4).collect();
        let xo: Vec<f64> = (0..10).map(|i| 0.3 - 0.05 * i as f64).collect();
        let exact = TaskId::LinearGaussian.true_cost(&theta, &xo, &DistanceId::Mse).unwrap();
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = TaskId::LinearGaussian.simulate(&theta, &mut r).unwrap();
            acc += crate::distance::mse_distance(&x, &xo).unwrap();
        }
        let mc = acc / n as f64;
        assert!((mc - exact).abs() / exact < 0.01, "{mc} vs {exact}");
    }

    #[test]
    fn linear_gaussian_simulator_is_unbiased() {
        let mut r = rng::seeded(6);
        let theta: Vec<f64> = (0..10).map(|i| 0.2 * i as f64 - 1.0).collect();
        let n = 1_000_000;
        let mut sums = vec![0.0; 10];
        for _ in 0..n {
            for (s, v) in sums.iter_mut().zip(TaskId::LinearGaussian.simulate(&theta, &mut r).unwrap()) {
                *s += v;
            }
        }
        let se = (0.1f64 / n as f64).sqrt();
        for (s, t) in sums.iter().zip(&theta) {
            assert!((s / n as f64 - t).abs() < 4.0 * se);
        }
    }

    #[test]
    fn true_cost_is_nonnegative_and_smooth() {
        let mse = DistanceId::Mse;
        let xo = [0.4];
        let h = 1e-4;
        for i in 0..50 {
            let t = -1.4 + 2.8 * i as f64 / 49.0;
            let c = TaskId::Uniform1d.true_cost(&[t], &xo, &mse).unwrap();
            assert!(c >= 0.0);
            let up = TaskId::Uniform1d.true_cost(&[t + h], &xo, &mse).unwrap();
            let down = TaskId::Uniform1d.true_cost(&[t - h], &xo, &mse).unwrap();
            assert!((up - c).abs() < 1e-3 && (c - down).abs() < 1e-3);
        }
    }

    #[test]
    fn missing_oracle_is_reported() {
        let e = TaskId::TwoMoons.true_cost(&[0.0, 0.0], &[0.0, 0.0], &DistanceId::Energy { exponent: 1.0 });
        assert!(matches!(e, Err(Error::NoOracle { .. })));
    }

    #[test]
    fn bounds_respect_envelope_and_seed() {
        let b1 = prior_predictive_bounds(TaskId::Uniform1d, 100_000, &mut rng::seeded(8)).unwrap();
        let b2 = prior_predictive_bounds(TaskId::Uniform1d, 100_000, &mut rng::seeded(8)).unwrap();
        assert_eq!(b1, b2);
        let envelope = (0..=20_000)
            .map(|i| uniform1d_mean(-1.5 + 3.0 * i as f64 / 20_000.0))
            .fold(f64::NEG_INFINITY, f64::max)
            + 0.25;
        assert!(b1.max[0] <= envelope);
        for t in TaskId::ALL {
            let b = prior_predictive_bounds(t, 1000, &mut rng::seeded(9)).unwrap();
            assert!(b.min.iter().zip(&b.max).all(|(lo, hi)| lo <= hi));
            assert!(b.std.iter().all(|s| *s > 0.0));
        }
        assert!(prior_predictive_bounds(TaskId::Uniform1d, 1, &mut rng::seeded(0)).is_err());
    }
}
