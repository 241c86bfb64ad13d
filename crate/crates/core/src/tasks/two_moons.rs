//! Two-moons simulator and midpoint-rule quadrature of its MSE cost.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const RADIUS_MEAN: f64 = 0.1;
pub const RADIUS_STD: f64 = 0.01;
const CENTER_OFFSET: f64 = 0.25;

/// Parameter-dependent translation of the crescent.
pub fn shift(theta: &[f64]) -> [f64; 2] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [-(theta[0] + theta[1]).abs() * s, (theta[1] - theta[0]) * s]
}

/// Center of the half circle for parameter `theta`.
pub fn center(theta: &[f64]) -> [f64; 2] {
    let t = shift(theta);
    [CENTER_OFFSET + t[0], t[1]]
}

pub fn simulate(theta: &[f64], rng: &mut Rng) -> Vec<f64> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let alpha = -half_pi + std::f64::consts::PI * rng.random::<f64>();
    let r = Normal::new(RADIUS_MEAN, RADIUS_STD).expect("valid normal").sample(rng);
    let c = center(theta);
    vec![r * alpha.cos() + c[0], r * alpha.sin() + c[1]]
}

/// Uniform grid of `bins` cells per axis over a rectangle in data space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoonQuadrature {
    pub x1: (f64, f64),
    pub x2: (f64, f64),
    pub bins: usize,
}

impl Default for MoonQuadrature {
    fn default() -> Self {
        Self {
            x1: (-1.2, 0.4),
            x2: (-1.6, 1.6),
            bins: 500,
        }
    }
}

// Radii beyond 8σ contribute below 1e-13 relative mass and are skipped;
// the bulk (5σ) must lie inside the grid.
const WINDOW_SIGMAS: f64 = 8.0;
const BULK_SIGMAS: f64 = 5.0;

impl MoonQuadrature {
    pub fn with_bins(bins: usize) -> Self {
        Self { bins, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.bins == 0 || !(self.x1.0 < self.x1.1) || !(self.x2.0 < self.x2.1) {
            return Err(Error::Quadrature(format!("invalid grid {self:?}")));
        }
        Ok(())
    }

    /// `E[d(x, x_o)]` under the simulator at `theta`, with `d` the per-dimension MSE.
    pub fn expected_mse(&self, theta: &[f64], x_o: &[f64]) -> Result<f64> {
        self.validate()?;
        let c = center(theta);
        let bulk = RADIUS_MEAN + BULK_SIGMAS * RADIUS_STD;
        if c[0] < self.x1.0 || c[0] + bulk > self.x1.1 || c[1] - bulk < self.x2.0 || c[1] + bulk > self.x2.1 {
            return Err(Error::Quadrature(format!(
                "crescent centred at ({:.3}, {:.3}) is not covered by the grid",
                c[0], c[1]
            )));
        }
        let reach = RADIUS_MEAN + WINDOW_SIGMAS * RADIUS_STD;
        let h1 = (self.x1.1 - self.x1.0) / self.bins as f64;
        let h2 = (self.x2.1 - self.x2.0) / self.bins as f64;
        let cell = |lo: f64, h: f64, v: f64| ((v - lo) / h).floor().clamp(0.0, (self.bins - 1) as f64) as usize;
        let (i_lo, i_hi) = (cell(self.x1.0, h1, c[0]), cell(self.x1.0, h1, c[0] + reach));
        let (j_lo, j_hi) = (cell(self.x2.0, h2, c[1] - reach), cell(self.x2.0, h2, c[1] + reach));
        let inv_two_var = 1.0 / (2.0 * RADIUS_STD * RADIUS_STD);
        let mut mass = 0.0;
        let mut acc = 0.0;
        for i in i_lo..=i_hi {
            let x1 = self.x1.0 + (i as f64 + 0.5) * h1;
            let dx = x1 - c[0];
            if dx <= 0.0 {
                continue;
            }
            let e1 = (x1 - x_o[0]).powi(2);
            for j in j_lo..=j_hi {
                let x2 = self.x2.0 + (j as f64 + 0.5) * h2;
                let dy = x2 - c[1];
                let rho = (dx * dx + dy * dy).sqrt();
                // polar density N(ρ; 0.1, 0.01²) · U(α) with Jacobian 1/ρ
                let w = (-(rho - RADIUS_MEAN).powi(2) * inv_two_var).exp() / rho;
                mass += w;
                acc += w * 0.5 * (e1 + (x2 - x_o[1]).powi(2));
            }
        }
        if !(mass > 0.0) {
            return Err(Error::Quadrature("no grid cell carries probability mass".into()));
        }
        Ok(acc / mass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// E‖x − x_o‖²/2 from the moments of the crescent: E[r cos α] = 0.1·2/π,
    /// E[r sin α] = 0, E[r²] = 0.1² + 0.01².
    fn analytic(theta: &[f64], x_o: &[f64]) -> f64 {
        let c = center(theta);
        let mu = RADIUS_MEAN * 2.0 / std::f64::consts::PI;
        let er2 = RADIUS_MEAN.powi(2) + RADIUS_STD.powi(2);
        let d0 = c[0] - x_o[0];
        let d1 = c[1] - x_o[1];
        0.5 * (d0 * d0 + d1 * d1 + 2.0 * d0 * mu + er2)
    }

    #[test]
    fn shift_example() {
        let t = shift(&[1.0, 1.0]);
        assert!((t[0] + 2f64.sqrt()).abs() < 1e-12);
        assert!(t[1].abs() < 1e-12);
    }

    #[test]
    fn radius_mean_at_origin() {
        let mut r = rng::seeded(0);
        let n = 100_000;
        let c = center(&[0.0, 0.0]);
        let mean_r: f64 = (0..n)
            .map(|_| {
                let x = simulate(&[0.0, 0.0], &mut r);
                ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean_r - 0.1).abs() < 0.002, "{mean_r}");
    }

    #[test]
    fn quadrature_matches_moment_formula() {
        let q = MoonQuadrature::default();
        for (theta, xo) in [
            ([0.0, 0.0], [0.3, 0.0]),
            ([0.5, -0.2], [-0.1, 0.4]),
            ([-0.9, 0.8], [0.0, 1.2]),
            ([0.7, 0.7], [-0.5, -0.5]),
            ([1.0, -1.0], [1.0, 1.0]),
        ] {
            let a = q.expected_mse(&theta, &xo).unwrap();
            let b = analytic(&theta, &xo);
            assert!((a - b).abs() < 1e-3 * b.max(1e-2), "{theta:?} {xo:?}: {a} vs {b}");
        }
    }

    #[test]
    fn quadrature_refinement_is_stable() {
        let coarse = MoonQuadrature::with_bins(500);
        let fine = MoonQuadrature::with_bins(1000);
        for (theta, xo) in [
            ([0.1, 0.2], [0.2, 0.1]),
            ([-0.4, 0.9], [-0.3, 0.9]),
            ([0.9, 0.95], [-1.0, 0.0]),
            ([0.0, -0.6], [0.1, -0.5]),
            ([-1.0, -1.0], [0.4, 1.5]),
        ] {
            let a = coarse.expected_mse(&theta, &xo).unwrap();
            let b = fine.expected_mse(&theta, &xo).unwrap();
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn misconfigured_grid_errors() {
        let q = MoonQuadrature { x1: (0.0, 0.1), ..MoonQuadrature::default() };
        assert!(matches!(q.expected_mse(&[0.0, 0.0], &[0.0, 0.0]), Err(Error::Quadrature(_))));
        assert!(MoonQuadrature::with_bins(0).expected_mse(&[0.0, 0.0], &[0.0, 0.0]).is_err());
    }
}
