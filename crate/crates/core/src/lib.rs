pub mod cli;
pub mod dsp;
pub mod edit;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod latent;
pub mod metrics;
pub mod net;
pub mod solver;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
