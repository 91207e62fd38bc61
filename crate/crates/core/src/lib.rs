pub mod error;
pub mod kernel_mmd;
pub mod net;
pub mod rng;

pub use error::{Error, Result};
pub mod dan;
pub mod toy;
pub mod sim;
pub mod imitation;
pub mod scenarios;
pub mod harness;
