//! Chebyshev-tensor surrogates for rough Bergomi implied-volatility calibration.

pub mod calibration;
pub mod chebyshev;
pub mod completion;
pub mod error;
pub mod format;
pub mod harness;
pub mod rng;
pub mod rough_bergomi;
pub mod surface;
pub mod tensor_train;

pub use error::{Error, Result};
