//! Kernel ABC over a fixed reference set.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng as _;

use super::{Method, PosteriorSamples};
use crate::distance::DistanceId;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::targets::SimDataset;

#[derive(Clone, Debug, PartialEq)]
pub struct AbcOutcome {
    pub samples: PosteriorSamples,
    /// Temperature at which enough samples were accepted.
    pub final_beta: f64,
    pub halvings: usize,
}

const MAX_HALVINGS: usize = 200;

/// Accepts each reference parameter with probability `exp(−β·d(x_i, x_o))`,
/// halving β and starting over until at least `min_accept` are accepted.
pub fn abc_kernel_sample(
    reference: &SimDataset,
    x_o: &[f64],
    distance: &DistanceId,
    beta0: f64,
    min_accept: usize,
    observation: &str,
    rng: &mut Rng,
) -> Result<AbcOutcome> {
    if reference.is_empty() {
        return Err(Error::Empty("ABC reference set"));
    }
    if min_accept > reference.len() {
        return Err(Error::InvalidConfig(format!(
            "min_accept {min_accept} exceeds reference size {}",
            reference.len()
        )));
    }
    if !(beta0 >= 0.0 && beta0.is_finite()) {
        return Err(Error::InvalidConfig(format!("beta must be >= 0, got {beta0}")));
    }
    let point_dim = reference.task.spec().x_dim;
    let dists: Vec<f64> = reference
        .x
        .rows()
        .into_iter()
        .map(|x| distance.eval(x.as_slice().expect("contiguous row"), x_o, point_dim))
        .collect::<Result<_>>()?;

    let mut beta = beta0;
    for halvings in 0..=MAX_HALVINGS {
        let accepted: Vec<usize> = dists
            .iter()
            .enumerate()
            .filter(|(_, d)| rng.random::<f64>() < (-beta * **d).exp())
            .map(|(i, _)| i)
            .collect();
        if accepted.len() >= min_accept {
            let mut samples = Array2::zeros((accepted.len(), reference.theta.ncols()));
            for (mut row, &i) in samples.rows_mut().into_iter().zip(&accepted) {
                row.assign(&reference.theta.row(i));
            }
            let mut diagnostics = BTreeMap::new();
            diagnostics.insert("final_beta".into(), beta);
            diagnostics.insert("halvings".into(), halvings as f64);
            diagnostics.insert("accepted".into(), accepted.len() as f64);
            return Ok(AbcOutcome {
                samples: PosteriorSamples {
                    samples,
                    method: Method::Abc,
                    beta: beta0,
                    observation: observation.to_string(),
                    diagnostics,
                },
                final_beta: beta,
                halvings,
            });
        }
        beta *= 0.5;
    }
    Err(Error::MaxIterations {
        what: "ABC temperature schedule",
        limit: MAX_HALVINGS,
    })
}
