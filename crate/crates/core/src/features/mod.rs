//! Acoustic front end: log-mel filterbanks, global mean normalization and
//! SpecAugment masking.

pub mod cache;
pub mod mel;
pub mod norm;
pub mod specaug;

pub use cache::{read_feature_cache, write_feature_cache};
pub use mel::{log_mel, num_frames, LogMel, NUM_MEL_BINS};
pub use norm::{global_mean_norm, NormStats};
pub use specaug::{apply_freq_mask, apply_time_mask, spec_augment, SpecAugmentPolicy};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// T×D feature frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dims: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * dims {
            return Err(Error::Features(format!(
                "{} values for {}×{} features",
                data.len(),
                frames,
                dims
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Features("non-finite feature value".into()));
        }
        Ok(FeatureMatrix { frames, dims, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    /// The matrix as a [1, T, D] tensor (single input channel).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.frames, self.dims], self.data.clone()).expect("consistent shape")
    }
}
