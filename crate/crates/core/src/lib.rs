//! Noise-robust Conformer-Transducer speech recognition with a noisy
//! disentanglement module and tri-stage training.

pub mod audio;
pub mod backbone;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod losses;
pub mod noisyd;
pub mod numerics;
pub mod rng;
pub mod toy;
pub mod training;
pub mod transducer;

pub use error::{Error, Result};
