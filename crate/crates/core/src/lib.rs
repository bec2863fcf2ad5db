//! Deep-redundancy transport toolkit: Laplace dead-zone quantization with an
//! exact rate model, range coding, redundancy framing with initial states,
//! rate-distortion training of quantizer tables and a burst-loss receiver
//! simulator.

pub mod cli;
pub mod codec;
pub mod error;
pub mod features;
pub mod framer;
pub mod laplace;
pub mod netsim;
pub mod range_coder;
pub mod trainer;

pub use error::{Error, Result};
