pub mod distill;
pub mod dsp;
pub mod error;
pub mod formats;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rig;

pub use error::{Error, Result};
