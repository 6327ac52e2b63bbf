//! Turns manifests into normalized, tokenized training items.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::audio::{read_wav, Manifest};
use crate::error::{Error, Result};
use crate::features::{global_mean_norm, log_mel, FeatureMatrix, NormStats};
use crate::rng::derive_rng;
use crate::transducer::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    CleanClean,
    CleanNoisy,
}

/// One training example. For clean-clean items `clean` and `input` are the
/// same matrix.
#[derive(Debug, Clone)]
pub struct PairedItem {
    pub id: String,
    pub clean: Arc<FeatureMatrix>,
    pub input: Arc<FeatureMatrix>,
    pub tokens: Vec<usize>,
    pub kind: PairKind,
}

/// Raw (un-normalized) features of one manifest entry.
#[derive(Debug, Clone)]
pub struct RawUtterance {
    pub id: String,
    pub transcript: String,
    /// Path of the clean recording; equals the entry's audio for clean entries.
    pub clean_key: String,
    pub clean: Arc<FeatureMatrix>,
    /// Present for paired entries.
    pub noisy: Option<Arc<FeatureMatrix>>,
}

/// Log-mel features for every entry, computed in parallel.
pub fn extract_features(manifest: &Manifest) -> Result<Vec<RawUtterance>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let audio = log_mel(&read_wav(manifest.resolve(&e.audio_path), Some(0))?)?;
            match &e.pairing {
                None => Ok(RawUtterance {
                    id: e.id.clone(),
                    transcript: e.transcript.clone(),
                    clean_key: e.audio_path.clone(),
                    clean: Arc::new(audio),
                    noisy: None,
                }),
                Some(p) => {
                    let clean = log_mel(&read_wav(manifest.resolve(&p.clean_path), Some(0))?)?;
                    if clean.frames() != audio.frames() {
                        return Err(Error::Training(format!(
                            "{}: clean and noisy recordings differ in length ({} vs {} frames)",
                            e.id,
                            clean.frames(),
                            audio.frames()
                        )));
                    }
                    Ok(RawUtterance {
                        id: e.id.clone(),
                        transcript: e.transcript.clone(),
                        clean_key: p.clean_path.clone(),
                        clean: Arc::new(clean),
                        noisy: Some(Arc::new(audio)),
                    })
                }
            }
        })
        .collect()
}

/// Which items a stage draws from its manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSelector {
    /// Clean entries only; paired entries are an error.
    CleanOnly,
    /// One clean-clean item per distinct clean recording plus one
    /// clean-noisy item per paired entry.
    Paired,
}

pub fn norm_stats_for(raw: &[RawUtterance], selector: DataSelector) -> Result<NormStats> {
    match selector {
        DataSelector::CleanOnly => NormStats::compute(raw.iter().map(|r| r.clean.as_ref())),
        DataSelector::Paired => {
            let mut seen = BTreeSet::new();
            let clean = raw
                .iter()
                .filter(|r| seen.insert(r.clean_key.clone()))
                .map(|r| r.clean.as_ref());
            let noisy = raw.iter().filter_map(|r| r.noisy.as_deref());
            NormStats::compute(clean.chain(noisy))
        }
    }
}

pub fn build_items(
    raw: &[RawUtterance],
    norm: &NormStats,
    vocab: &Vocabulary,
    selector: DataSelector,
) -> Result<Vec<PairedItem>> {
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    let mut paired = 0;
    for r in raw {
        let tokens = vocab
            .encode(&r.transcript)
            .map_err(|e| Error::Training(format!("{}: {}", r.id, e)))?;
        if selector == DataSelector::CleanOnly && r.noisy.is_some() {
            return Err(Error::Training(format!(
                "{}: paired entry in a clean-only training set",
                r.id
            )));
        }
        if seen.insert(r.clean_key.clone()) {
            let clean = Arc::new(global_mean_norm(&r.clean, norm)?);
            items.push(PairedItem {
                id: format!("{}#clean", r.id),
                clean: clean.clone(),
                input: clean,
                tokens: tokens.clone(),
                kind: PairKind::CleanClean,
            });
        }
        if let Some(noisy) = &r.noisy {
            paired += 1;
            items.push(PairedItem {
                id: r.id.clone(),
                clean: Arc::new(global_mean_norm(&r.clean, norm)?),
                input: Arc::new(global_mean_norm(noisy, norm)?),
                tokens,
                kind: PairKind::CleanNoisy,
            });
        }
    }
    if items.is_empty() {
        return Err(Error::Training("training set is empty".into()));
    }
    if selector == DataSelector::Paired && paired == 0 {
        return Err(Error::Training(
            "paired training needs clean-noisy entries; the manifest has none".into(),
        ));
    }
    Ok(items)
}

/// Epoch-wise shuffled batches, deterministic in (seed, epoch).
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    key: String,
    epoch: usize,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64, key: impl Into<String>) -> Self {
        let mut s = BatchSampler {
            n,
            batch: batch.min(n).max(1),
            seed,
            key: key.into(),
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order = (0..self.n).collect();
        let mut rng = derive_rng(self.seed, &format!("{}.epoch{}", self.key, self.epoch));
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.n {
            self.epoch += 1;
            self.shuffle();
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}
