pub mod cli;
pub mod error;
pub mod exactloss;
pub mod features;
pub mod fit;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod replica;
pub mod rng;
pub mod selftest;
pub mod spectral;

pub use error::{Error, Result};
