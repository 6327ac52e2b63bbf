use rand::Rng;

use crate::features::FeatureMatrix;

/// Time/frequency masking policy (no time warping).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecAugmentPolicy {
    pub num_time_masks: usize,
    pub max_time_width: usize,
    pub num_freq_masks: usize,
    pub max_freq_width: usize,
}

impl Default for SpecAugmentPolicy {
    fn default() -> Self {
        SpecAugmentPolicy {
            num_time_masks: 2,
            max_time_width: 40,
            num_freq_masks: 2,
            max_freq_width: 27,
        }
    }
}

impl SpecAugmentPolicy {
    pub fn disabled() -> Self {
        SpecAugmentPolicy {
            num_time_masks: 0,
            max_time_width: 0,
            num_freq_masks: 0,
            max_freq_width: 0,
        }
    }
}

/// Zeroes frames [start, start + width).
pub fn apply_time_mask(f: &mut FeatureMatrix, start: usize, width: usize) {
    let end = (start + width).min(f.frames());
    let d = f.dims();
    for t in start.min(end)..end {
        f.data_mut()[t * d..(t + 1) * d]
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
}

/// Zeroes mel bins [start, start + width) in every frame.
pub fn apply_freq_mask(f: &mut FeatureMatrix, start: usize, width: usize) {
    let d = f.dims();
    let end = (start + width).min(d);
    for t in 0..f.frames() {
        f.data_mut()[t * d + start.min(end)..t * d + end]
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
}

/// Masks random time and frequency bands with 0, the post-normalization mean.
/// Each mask width is drawn from [0, max_width] and clipped to the axis size.
pub fn spec_augment<R: Rng + ?Sized>(
    features: &FeatureMatrix,
    policy: &SpecAugmentPolicy,
    rng: &mut R,
) -> FeatureMatrix {
    let mut out = features.clone();
    for _ in 0..policy.num_freq_masks {
        let width = rng.gen_range(0..=policy.max_freq_width.min(out.dims()));
        let start = rng.gen_range(0..=out.dims() - width);
        apply_freq_mask(&mut out, start, width);
    }
    for _ in 0..policy.num_time_masks {
        let width = rng.gen_range(0..=policy.max_time_width.min(out.frames()));
        let start = rng.gen_range(0..=out.frames() - width);
        apply_time_mask(&mut out, start, width);
    }
    out
}
