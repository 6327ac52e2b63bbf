use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Per-dimension feature mean over a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
}

impl NormStats {
    /// Frame-pooled mean over every utterance of the corpus.
    pub fn compute<'a>(corpus: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for f in corpus {
            if sum.is_empty() {
                sum = vec![0.0; f.dims()];
            } else if f.dims() != sum.len() {
                return Err(Error::Features(format!(
                    "corpus mixes {}- and {}-dimensional features",
                    sum.len(),
                    f.dims()
                )));
            }
            for t in 0..f.frames() {
                for (s, v) in sum.iter_mut().zip(f.row(t)) {
                    *s += v;
                }
            }
            count += f.frames();
        }
        if count == 0 {
            return Err(Error::Features(
                "cannot compute statistics of an empty corpus".into(),
            ));
        }
        Ok(NormStats {
            mean: sum.into_iter().map(|s| s / count as f64).collect(),
        })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }
}

/// Subtracts the corpus mean from every frame.
pub fn global_mean_norm(features: &FeatureMatrix, stats: &NormStats) -> Result<FeatureMatrix> {
    if stats.dims() != features.dims() {
        return Err(Error::Features(format!(
            "statistics of dimension {} for {}-dimensional features",
            stats.dims(),
            features.dims()
        )));
    }
    let d = features.dims();
    let data = features
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v - stats.mean[i % d])
        .collect();
    FeatureMatrix::new(features.frames(), d, data)
}
