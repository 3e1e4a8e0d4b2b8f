//! Low-light hyperspectral image enhancement: a Laplacian-pyramid split of
//! each band, a channel-attention network that brightens the low-frequency
//! base using adjacent bands, and a learned mask on the averaged
//! high-frequency detail.

pub mod baselines;
pub mod error;
pub mod hsidata;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pyramid;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
