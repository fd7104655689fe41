pub mod constructions;
pub mod ensembles;
pub mod error;
pub mod experiments;
pub mod matrix;
pub mod ncpoly;
pub mod rng;
pub mod specnorm;
pub mod stats;
pub mod tensorop;

pub use error::{LabError, Result};
pub use matrix::{ComplexMatrix, C64};
