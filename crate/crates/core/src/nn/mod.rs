//! Minimal dense network stack in double precision.

mod adam;
mod arch;
mod fit;
mod forward;
mod params;

pub use adam::AdamState;
pub use arch::{Activation, LayerShape, Layout, NetArch, Pooling, SetEmbedArch};
pub use fit::{
    fit, fit_regression, split_indices, validation_loss, DataSplit, EpochRecord, FitConfig,
    FitResult, FixedPairs, PairSource,
};
pub use forward::{Conditioned, Loss};
pub use params::{NetParams, Standardizer};
