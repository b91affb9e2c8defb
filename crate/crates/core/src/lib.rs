//! Exact simulation and Monte Carlo maximum likelihood for Wright-Fisher
//! diffusions with selection.

pub mod ancestral;
pub mod bridge;
pub mod coupled;
pub mod dd;
pub mod error;
pub mod exactsim;
pub mod inference;
pub mod likelihood;
pub mod model;
pub mod neutral;
pub mod numerics;
pub mod rng;
pub mod selftest;
pub mod series;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
