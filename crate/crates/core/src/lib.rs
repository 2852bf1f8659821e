pub mod debias;
pub mod error;
pub mod harness;
pub mod init;
pub mod io;
pub mod mask;
pub mod rng;
pub mod sampling;
pub mod spectral;
pub mod tensor;
pub mod tsvd;

pub use error::{Error, Result};
