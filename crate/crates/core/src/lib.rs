pub mod backbones;
pub mod counterfactual;
pub mod dataset;
pub mod error;
pub mod intensity;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod synthgen;
pub mod timeline;
pub mod training;

pub use error::{Error, Result};
