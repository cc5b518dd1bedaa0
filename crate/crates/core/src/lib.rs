//! Rotation-invariant (L0) and rotation-equivariant (L1) point-cloud
//! convolution networks for scalar molecular-property regression.

pub mod autodiff;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod experiments;
pub mod irreps;
pub mod layers;
pub mod model;
pub mod radial;
pub mod train;

pub use error::{Error, Result};
