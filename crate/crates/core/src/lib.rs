pub mod agent;
pub mod baselines;
pub mod error;
pub mod harness;
pub mod netsim;
pub mod nn;
pub mod objective;
pub mod transport;
pub mod tuner;

pub use error::{Error, Result};
