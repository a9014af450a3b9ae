pub mod autodiff;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod localiser;
pub mod metrics;
pub mod radio;
pub mod rvhm;
pub mod scene;
pub mod selflabel;
pub mod ssl;

pub use error::{Error, Result};
