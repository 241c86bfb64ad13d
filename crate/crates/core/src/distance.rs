//! Distances `d(x, x_t)` whose likelihood expectations define the costs.
//!
//! Set-valued data are flat slices of `K × point_dim` values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::seq::index;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistanceId {
    /// Squared error averaged over dimensions.
    Mse,
    /// Biased MMD² with Gaussian kernel of bandwidth `bandwidth`.
    Mmd2 { bandwidth: f64 },
    /// Energy distance with exponent `exponent ∈ (0, 2)`.
    Energy { exponent: f64 },
}

impl DistanceId {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistanceId::Mse => Ok(()),
            DistanceId::Mmd2 { bandwidth } if bandwidth > 0.0 && bandwidth.is_finite() => Ok(()),
            DistanceId::Energy { exponent } if exponent > 0.0 && exponent < 2.0 => Ok(()),
            other => Err(Error::InvalidConfig(format!("invalid distance parameters: {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DistanceId::Mse => "mse",
            DistanceId::Mmd2 { .. } => "mmd2",
            DistanceId::Energy { .. } => "energy",
        }
    }

    /// Distance between two flat datapoints holding points of `point_dim` coordinates.
    pub fn eval(&self, x: &[f64], y: &[f64], point_dim: usize) -> Result<f64> {
        match *self {
            DistanceId::Mse => mse_distance(x, y),
            DistanceId::Mmd2 { bandwidth } => {
                mmd2_biased(PointSet::new(x, point_dim)?, PointSet::new(y, point_dim)?, bandwidth)
            }
            DistanceId::Energy { exponent } => {
                energy_distance(PointSet::new(x, point_dim)?, PointSet::new(y, point_dim)?, exponent)
            }
        }
    }
}

impl std::fmt::Display for DistanceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceId::Mse => write!(f, "mse"),
            DistanceId::Mmd2 { bandwidth } => write!(f, "mmd2(bandwidth={bandwidth})"),
            DistanceId::Energy { exponent } => write!(f, "energy(p={exponent})"),
        }
    }
}

/// Borrowed view of a nonempty set of equal-dimension points.
#[derive(Clone, Copy, Debug)]
pub struct PointSet<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> PointSet<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(Error::Empty("point set"));
        }
        if data.len() % dim != 0 {
            return Err(Error::dims("point set length", dim * (data.len() / dim + 1), data.len()));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.dim)
    }
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `‖x − y‖² / D`.
pub fn mse_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims("mse operands", x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::Empty("mse operands"));
    }
    Ok(squared_euclidean(x, y) / x.len() as f64)
}

#[inline]
pub fn gaussian_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    (-squared_euclidean(a, b) / (2.0 * bandwidth * bandwidth)).exp()
}

fn mean_pairwise(a: PointSet<'_>, b: PointSet<'_>, f: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let mut total = 0.0;
    for p in a.points() {
        for q in b.points() {
            total += f(p, q);
        }
    }
    total / (a.len() * b.len()) as f64
}

fn check_pair(a: &PointSet<'_>, b: &PointSet<'_>) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::dims("point dimension", a.dim, b.dim));
    }
    Ok(())
}

/// V-statistic MMD²: `mean k(X,X) + mean k(Y,Y) − 2 mean k(X,Y)`.
pub fn mmd2_biased(x: PointSet<'_>, y: PointSet<'_>, bandwidth: f64) -> Result<f64> {
    check_pair(&x, &y)?;
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidConfig("MMD bandwidth must be positive".into()));
    }
    let k = |p: &[f64], q: &[f64]| gaussian_kernel(p, q, bandwidth);
    let kxx = mean_pairwise(x, x, k);
    let kyy = mean_pairwise(y, y, k);
    let kxy = mean_pairwise(x, y, k);
    // Rounding can leave a tiny negative value for near-identical sets.
    Ok((kxx + kyy - 2.0 * kxy).max(0.0))
}

/// V-statistic energy distance `2 E‖X−Y‖ᵖ − E‖X−X'‖ᵖ − E‖Y−Y'‖ᵖ`.
pub fn energy_distance(x: PointSet<'_>, y: PointSet<'_>, exponent: f64) -> Result<f64> {
    check_pair(&x, &y)?;
    if !(exponent > 0.0 && exponent < 2.0) {
        return Err(Error::InvalidConfig("energy exponent must lie in (0, 2)".into()));
    }
    let half = exponent / 2.0;
    let d = |p: &[f64], q: &[f64]| squared_euclidean(p, q).powf(half);
    let exy = mean_pairwise(x, y, d);
    let exx = mean_pairwise(x, x, d);
    let eyy = mean_pairwise(y, y, d);
    Ok((2.0 * exy - exx - eyy).max(0.0))
}

/// Median pairwise Euclidean distance over at most `max_points` points drawn
/// without replacement from the pooled sets.
pub fn median_heuristic_bandwidth(
    sets: &[&[f64]],
    point_dim: usize,
    max_points: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if point_dim == 0 {
        return Err(Error::Empty("point dimension"));
    }
    let pooled: Vec<&[f64]> = sets.iter().flat_map(|s| s.chunks_exact(point_dim)).collect();
    if pooled.len() < 2 {
        return Err(Error::Degenerate("median heuristic needs at least two points".into()));
    }
    let chosen: Vec<&[f64]> = if pooled.len() > max_points {
        index::sample(rng, pooled.len(), max_points.max(2))
            .into_iter()
            .map(|i| pooled[i])
            .collect()
    } else {
        pooled
    };
    let mut dists = Vec::with_capacity(chosen.len() * (chosen.len() - 1) / 2);
    for i in 0..chosen.len() {
        for j in i + 1..chosen.len() {
            dists.push(squared_euclidean(chosen[i], chosen[j]).sqrt());
        }
    }
    let m = crate::stats::median(&dists);
    if !(m > 0.0) {
        return Err(Error::Degenerate("all points identical; bandwidth undefined".into()));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn set(v: &[f64], d: usize) -> PointSet<'_> {
        PointSet::new(v, d).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_distance(&[0.0, 0.0], &[2.0, 0.0]).unwrap(), 2.0);
        assert_eq!(mse_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!(mse_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mmd_identical_sets_is_zero() {
        let x = [0.1, 0.2, -1.0, 3.0, 0.5, 0.5];
        assert_eq!(mmd2_biased(set(&x, 2), set(&x, 2), 1.3).unwrap(), 0.0);
    }

    #[test]
    fn mmd_singletons_closed_form() {
        let a = [0.3, -0.4];
        let b = [1.0, 0.6];
        let g = 0.7;
        let expected = 2.0 - 2.0 * (-squared_euclidean(&a, &b) / (2.0 * g * g)).exp();
        let got = mmd2_biased(set(&a, 2), set(&b, 2), g).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn energy_singletons_p1_is_twice_distance() {
        let a = [0.0, 0.0];
        let b = [3.0, 4.0];
        assert!((energy_distance(set(&a, 2), set(&b, 2), 1.0).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_mismatched_sets_error() {
        assert!(PointSet::new(&[], 2).is_err());
        let a = [1.0, 2.0];
        let b = [1.0, 2.0, 3.0];
        assert!(mmd2_biased(set(&a, 2), set(&b, 3), 1.0).is_err());
        assert!(DistanceId::Energy { exponent: 2.0 }.validate().is_err());
        assert!(DistanceId::Mmd2 { bandwidth: 0.0 }.validate().is_err());
    }

    #[test]
    fn energy_nonnegative_on_random_pairs() {
        let mut r = rng::seeded(3);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..10).map(|_| r.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
            assert!(energy_distance(set(&x, 2), set(&y, 2), 1.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn mse_equals_energy_p2_on_singletons_up_to_dimension() {
        // With p = 2 on point masses, energy = 2‖a − b‖² = 2·D·mse.
        let a = [0.2, -1.1, 0.7];
        let b = [1.0, 0.4, -0.3];
        let mse = mse_distance(&a, &b).unwrap();
        let e2 = 2.0 * squared_euclidean(&a, &b);
        assert!((e2 - 2.0 * 3.0 * mse).abs() < 1e-12);
        // The open interval excludes p = 2 itself; approach it from below.
        let near = energy_distance(set(&a, 3), set(&b, 3), 2.0 - 1e-9).unwrap();
        assert!((near - e2).abs() < 1e-6);
    }

    #[test]
    fn median_heuristic_examples() {
        let mut r = rng::seeded(0);
        let pts = [0.0, 0.0, 2.0, 0.0];
        assert_eq!(median_heuristic_bandwidth(&[&pts], 2, 1000, &mut r).unwrap(), 2.0);
        let same = [1.0, 1.0, 1.0, 1.0];
        assert!(median_heuristic_bandwidth(&[&same], 2, 1000, &mut r).is_err());
    }

    #[test]
    fn median_heuristic_is_scale_equivariant_and_seeded() {
        let mut r = rng::seeded(9);
        let pts: Vec<f64> = (0..3000).map(|_| r.random_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = pts.iter().map(|v| v * 3.5).collect();
        let g1 = median_heuristic_bandwidth(&[&pts], 2, 200, &mut rng::seeded(1)).unwrap();
        let g2 = median_heuristic_bandwidth(&[&scaled], 2, 200, &mut rng::seeded(1)).unwrap();
        assert!((g2 - 3.5 * g1).abs() < 1e-12);
        let g3 = median_heuristic_bandwidth(&[&pts], 2, 200, &mut rng::seeded(1)).unwrap();
        assert_eq!(g1, g3);
    }

    proptest! {
        #[test]
        fn distances_symmetric(
            x in prop::collection::vec(-5.0f64..5.0, 2..12),
            y in prop::collection::vec(-5.0f64..5.0, 2..12),
        ) {
            let n = x.len().min(y.len()) / 2 * 2;
            let (x, y) = (&x[..n], &y[..n]);
            for id in [DistanceId::Mse, DistanceId::Mmd2 { bandwidth: 0.8 }, DistanceId::Energy { exponent: 1.0 }] {
                let a = id.eval(x, y, 2).unwrap();
                let b = id.eval(y, x, 2).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(a >= 0.0);
                prop_assert_eq!(id.eval(x, x, 2).unwrap(), 0.0);
            }
        }
    }
}
