//! Mixture density regression and Gaussian posterior algebra.

mod mixture;
mod network;
mod train;

pub use mixture::{
    mixture_mode, multiply_gaussians, project_to_gaussian, Bounds, GaussianD, MixtureOfGaussians, MODE_GRID_POINTS,
};
pub use network::{MdnModel, Standardizer, VARIANCE_FLOOR};
pub use train::{train, Optimizer, TrainConfig, TrainReport};
