pub mod cli;
pub mod controller;
pub mod datapipe;
pub mod error;
pub mod genotype;
pub mod nn;
pub mod searchspace;
pub mod trainer;

pub use error::{Error, Result};
