pub mod ccp;
pub mod dgp;
pub mod error;
pub mod fie;
pub mod index;
pub mod kernels;
pub mod matrix;
pub mod montecarlo;
pub mod panel;
pub mod pipeline;
pub mod smooth;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
