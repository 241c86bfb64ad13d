//! Multi-chain, coordinate-wise slice sampling with stepping out and
//! shrinkage.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Unnormalized log density; `−∞` outside the support.
    fn log_density(&self, theta: &[f64]) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SliceConfig {
    pub n_chains: usize,
    /// Total samples returned, pooled across chains.
    pub n_samples: usize,
    pub burn_in: usize,
    /// Initial bracket width per dimension. Defaults to the prior std.
    pub width: Option<Vec<f64>>,
    pub max_step_out: usize,
    pub thin: usize,
    pub max_init_attempts: usize,
    pub seed: u64,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            n_chains: 100,
            n_samples: 5000,
            burn_in: 200,
            width: None,
            max_step_out: 50,
            thin: 1,
            max_init_attempts: 1000,
            seed: 0,
        }
    }
}

impl SliceConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_chains == 0 || self.n_samples == 0 || self.thin == 0 {
            return Err(Error::InvalidConfig(
                "slice sampler needs n_chains, n_samples and thin >= 1".into(),
            ));
        }
        match &self.width {
            Some(w) if w.len() != dim => Err(Error::dims("slice widths", dim, w.len())),
            Some(w) if !w.iter().all(|v| *v > 0.0 && v.is_finite()) => {
                Err(Error::InvalidConfig("slice widths must be positive".into()))
            }
            None => Err(Error::InvalidConfig("slice widths not set".into())),
            _ => Ok(()),
        }
    }
}

const MAX_SHRINK: usize = 200;

struct Chain<'a, D: LogDensity + ?Sized> {
    density: &'a D,
    widths: &'a [f64],
    max_step_out: usize,
    x: Vec<f64>,
    lp: f64,
    evals: usize,
}

impl<D: LogDensity + ?Sized> Chain<'_, D> {
    fn eval_at(&mut self, i: usize, v: f64) -> Result<f64> {
        let old = self.x[i];
        self.x[i] = v;
        let lp = self.density.log_density(&self.x);
        self.x[i] = old;
        self.evals += 1;
        lp
    }

    fn update(&mut self, i: usize, rng: &mut Rng) -> Result<()> {
        let x0 = self.x[i];
        let w = self.widths[i];
        let log_y = self.lp + rng.random::<f64>().ln();
        let mut left = x0 - w * rng.random::<f64>();
        let mut right = left + w;
        let mut j = (self.max_step_out as f64 * rng.random::<f64>()) as usize;
        let mut k = self.max_step_out.saturating_sub(1).saturating_sub(j);
        while j > 0 && self.eval_at(i, left)? > log_y {
            left -= w;
            j -= 1;
        }
        while k > 0 && self.eval_at(i, right)? > log_y {
            right += w;
            k -= 1;
        }
        for _ in 0..MAX_SHRINK {
            let cand = left + rng.random::<f64>() * (right - left);
            let lp = self.eval_at(i, cand)?;
            if lp > log_y {
                self.x[i] = cand;
                self.lp = lp;
                return Ok(());
            }
            if cand < x0 {
                left = cand;
            } else {
                right = cand;
            }
        }
        // bracket collapsed onto the current point; keep it
        Ok(())
    }

    fn sweep(&mut self, rng: &mut Rng) -> Result<()> {
        for i in 0..self.x.len() {
            self.update(i, rng)?;
        }
        Ok(())
    }
}

/// Runs `n_chains` independent chains on per-chain substreams and pools the
/// draws round-robin: sample `j` is step `j / n_chains` of chain
/// `j % n_chains`. Returns the samples and diagnostics.
pub fn slice_sample<D, I>(density: &D, init: I, cfg: &SliceConfig) -> Result<(Array2<f64>, BTreeMap<String, f64>)>
where
    D: LogDensity + ?Sized,
    I: Fn(&mut Rng) -> Vec<f64> + Sync,
{
    let dim = density.dim();
    cfg.validate(dim)?;
    let widths = cfg.width.as_deref().expect("validated");
    let per_chain = cfg.n_samples.div_ceil(cfg.n_chains);

    let chains: Vec<Result<(Vec<Vec<f64>>, usize, usize)>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::substream(cfg.seed, c as u64);
            let mut start = None;
            for attempt in 0..cfg.max_init_attempts {
                let x = init(&mut rng);
                if x.len() != dim {
                    return Err(Error::dims("initial state", dim, x.len()));
                }
                let lp = density.log_density(&x)?;
                if lp.is_finite() {
                    start = Some((x, lp, attempt + 1));
                    break;
                }
            }
            let (x, lp, attempts) = start.ok_or(Error::Initialization(cfg.max_init_attempts))?;
            let mut chain = Chain {
                density,
                widths,
                max_step_out: cfg.max_step_out,
                x,
                lp,
                evals: 0,
            };
            for _ in 0..cfg.burn_in {
                chain.sweep(&mut rng)?;
            }
            let mut out = Vec::with_capacity(per_chain);
            while out.len() < per_chain {
                for _ in 0..cfg.thin {
                    chain.sweep(&mut rng)?;
                }
                out.push(chain.x.clone());
            }
            Ok((out, chain.evals, attempts))
        })
        .collect();

    let mut draws = Vec::with_capacity(chains.len());
    let mut evals = 0usize;
    let mut init_attempts = 0usize;
    for c in chains {
        let (d, e, a) = c?;
        draws.push(d);
        evals += e;
        init_attempts += a;
    }
    let mut samples = Array2::zeros((cfg.n_samples, dim));
    for (j, mut row) in samples.rows_mut().into_iter().enumerate() {
        let v = &draws[j % cfg.n_chains][j / cfg.n_chains];
        row.iter_mut().zip(v).for_each(|(a, b)| *a = *b);
    }
    let sweeps = cfg.n_chains * (cfg.burn_in + per_chain * cfg.thin);
    let mut diag = BTreeMap::new();
    diag.insert("density_evaluations".into(), evals as f64);
    diag.insert("evaluations_per_update".into(), evals as f64 / (sweeps * dim) as f64);
    diag.insert("init_attempts".into(), init_attempts as f64);
    Ok((samples, diag))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Normal1;
    impl LogDensity for Normal1 {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, t: &[f64]) -> Result<f64> {
            Ok(-0.5 * t[0] * t[0])
        }
    }

    fn cfg(seed: u64) -> SliceConfig {
        SliceConfig {
            n_chains: 20,
            n_samples: 2000,
            burn_in: 50,
            width: Some(vec![1.0]),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = slice_sample(&Normal1, |r: &mut Rng| vec![r.random::<f64>()], &cfg(3)).unwrap();
        let b = slice_sample(&Normal1, |r: &mut Rng| vec![r.random::<f64>()], &cfg(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_robin_count_is_exact() {
        let mut c = cfg(1);
        c.n_samples = 2003;
        let (s, _) = slice_sample(&Normal1, |_: &mut Rng| vec![0.0], &c).unwrap();
        assert_eq!(s.nrows(), 2003);
    }

    #[test]
    fn bad_initialization_is_reported() {
        struct Nowhere;
        impl LogDensity for Nowhere {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, _: &[f64]) -> Result<f64> {
                Ok(f64::NEG_INFINITY)
            }
        }
        let mut c = cfg(0);
        c.max_init_attempts = 5;
        let e = slice_sample(&Nowhere, |_: &mut Rng| vec![0.0], &c);
        assert!(matches!(e, Err(Error::Initialization(5))));
    }

    #[test]
    fn width_dimension_is_checked() {
        let mut c = cfg(0);
        c.width = Some(vec![1.0, 1.0]);
        assert!(slice_sample(&Normal1, |_: &mut Rng| vec![0.0], &c).is_err());
    }
}
