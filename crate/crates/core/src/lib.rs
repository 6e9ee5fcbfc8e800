pub mod acoustics;
pub mod calibration;
pub mod dynamics;
pub mod error;
pub mod features;
pub mod mdn;
pub mod rng;
pub mod sim;
pub mod tracking;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
