//! Gaussian-mixture simulator (five i.i.d. points per draw) and the exact
//! expected MMD² between a simulated set and a fixed observation set.

use rand_distr::{Distribution, StandardNormal};
use rand::Rng as _;

use crate::distance::{gaussian_kernel, squared_euclidean};
use crate::rng::Rng;

pub const N_TRIALS: usize = 5;
pub const POINT_DIM: usize = 2;
/// Component standard deviations (covariances I and 0.01·I), equal weights.
const COMPONENT_STD: [f64; 2] = [1.0, 0.1];

/// Mean of the displaced second component used to generate misspecified data.
pub fn displaced_mean(theta: &[f64]) -> [f64; 2] {
    [12.5 * sign(theta[0]), 12.5 * sign(theta[1])]
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn gaussian_point(mean: &[f64], std: f64, rng: &mut Rng, out: &mut Vec<f64>) {
    for m in mean {
        let z: f64 = StandardNormal.sample(rng);
        out.push(m + std * z);
    }
}

pub fn simulate(theta: &[f64], rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(N_TRIALS * POINT_DIM);
    for _ in 0..N_TRIALS {
        let std = if rng.random::<bool>() { COMPONENT_STD[0] } else { COMPONENT_STD[1] };
        gaussian_point(theta, std, rng, &mut out);
    }
    out
}

/// Like [`simulate`] but the narrow component is replaced by
/// `N(12.5·sign(θ), 0.5²·I)`.
pub fn simulate_displaced(theta: &[f64], rng: &mut Rng) -> Vec<f64> {
    let far = displaced_mean(theta);
    let mut out = Vec::with_capacity(N_TRIALS * POINT_DIM);
    for _ in 0..N_TRIALS {
        if rng.random::<bool>() {
            gaussian_point(theta, COMPONENT_STD[0], rng, &mut out);
        } else {
            gaussian_point(&far, 0.5, rng, &mut out);
        }
    }
    out
}

/// `E_{x ~ N(μ, s²I)} k(x, y)` for the Gaussian kernel in `d` dimensions.
fn expected_kernel(mu: &[f64], var: f64, y: &[f64], bandwidth: f64) -> f64 {
    let g2 = bandwidth * bandwidth;
    let d = mu.len() as f64;
    (g2 / (g2 + var)).powf(0.5 * d) * (-squared_euclidean(mu, y) / (2.0 * (g2 + var))).exp()
}

/// Exact `E_{X ~ p(·|θ)}[MMD²_biased(X, Y)]` for an observation set `y`.
///
/// With `K` simulated points and kernel `k`:
/// `1/K + (K−1)/K · E k(x, x') + mean k(Y, Y) − 2 · mean_j E k(x, y_j)`,
/// where every expectation of a Gaussian kernel under a Gaussian mixture has
/// a closed form.
pub fn expected_mmd2(theta: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    let k = N_TRIALS as f64;
    let d = theta.len() as f64;
    let g2 = bandwidth * bandwidth;
    let mut kxx = 0.0;
    for a in COMPONENT_STD {
        for b in COMPONENT_STD {
            kxx += 0.25 * (g2 / (g2 + a * a + b * b)).powf(0.5 * d);
        }
    }
    let ys: Vec<&[f64]> = y.chunks_exact(theta.len()).collect();
    let mut kyy = 0.0;
    for p in &ys {
        for q in &ys {
            kyy += gaussian_kernel(p, q, bandwidth);
        }
    }
    kyy /= (ys.len() * ys.len()) as f64;
    let mut kxy = 0.0;
    for p in &ys {
        for s in COMPONENT_STD {
            kxy += 0.5 * expected_kernel(theta, s * s, p, bandwidth);
        }
    }
    kxy /= ys.len() as f64;
    1.0 / k + (k - 1.0) / k * kxx + kyy - 2.0 * kxy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::{mmd2_biased, PointSet};
    use crate::rng;

    fn mc_mmd(theta: &[f64], y: &[f64], g: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut r = rng::seeded(seed);
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let x = simulate(theta, &mut r);
                mmd2_biased(PointSet::new(&x, 2).unwrap(), PointSet::new(y, 2).unwrap(), g).unwrap()
            })
            .collect();
        let m = crate::stats::mean(&vals);
        (m, crate::stats::std_dev(&vals) / (n as f64).sqrt())
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        let mut r = rng::seeded(4);
        let y = simulate(&[1.0, -2.0], &mut r);
        for (theta, g) in [([1.0, -2.0], 1.0), ([0.0, 0.0], 2.5), ([1.5, -1.0], 0.5)] {
            let exact = expected_mmd2(&theta, &y, g);
            let (mc, se) = mc_mmd(&theta, &y, g, 20_000, 7);
            assert!((exact - mc).abs() < 4.0 * se, "{exact} vs {mc} ± {se}");
        }
    }

    #[test]
    fn monte_carlo_error_shrinks_like_inverse_sqrt() {
        let mut r = rng::seeded(5);
        let y = simulate(&[0.5, 0.5], &mut r);
        let exact = expected_mmd2(&[0.0, 0.0], &y, 1.0);
        // Root-mean-square error over repeats at two sample sizes; the ratio
        // should be near sqrt(10_000 / 100) = 10.
        let rms = |n: usize| {
            let errs: Vec<f64> = (0..20).map(|s| (mc_mmd(&[0.0, 0.0], &y, 1.0, n, 100 + s).0 - exact).powi(2)).collect();
            crate::stats::mean(&errs).sqrt()
        };
        let ratio = rms(100) / rms(10_000);
        assert!(ratio > 5.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn displaced_component_mean() {
        assert_eq!(displaced_mean(&[1.0, -1.0]), [12.5, -12.5]);
    }
}
