use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, Manifest, ManifestEntry};
use crate::error::Result;
use crate::eval::wer::{wer, ErrorCounts};
use crate::training::Recognizer;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Bucketing {
    pub by_snr: bool,
    pub by_noise: bool,
}

/// Bucket identity; `None` fields are pooled.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum BucketKey {
    Clean,
    Noisy {
        noise_type: Option<String>,
        /// SNR in millidecibels for exact ordering.
        snr_mdb: Option<i64>,
    },
}

impl BucketKey {
    pub fn clean() -> Self {
        BucketKey::Clean
    }

    pub fn noisy(noise_type: Option<String>, snr_db: Option<f64>) -> Self {
        BucketKey::Noisy {
            noise_type,
            snr_mdb: snr_db.map(|s| (s * 1000.0).round() as i64),
        }
    }

    fn noise_type(&self) -> Option<String> {
        match self {
            BucketKey::Clean => None,
            BucketKey::Noisy { noise_type, .. } => noise_type.clone(),
        }
    }

    fn snr_db(&self) -> Option<f64> {
        match self {
            BucketKey::Clean => None,
            BucketKey::Noisy { snr_mdb, .. } => snr_mdb.map(|s| s as f64 / 1000.0),
        }
    }

    pub fn for_entry(e: &ManifestEntry, b: Bucketing) -> Self {
        match &e.pairing {
            None => BucketKey::Clean,
            Some(p) => BucketKey::Noisy {
                noise_type: b.by_noise.then(|| p.noise_type.clone()),
                snr_mdb: b.by_snr.then(|| (p.snr_db * 1000.0).round() as i64),
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            BucketKey::Clean => "clean".into(),
            BucketKey::Noisy {
                noise_type,
                snr_mdb,
            } => {
                let mut parts = vec![noise_type.clone().unwrap_or_else(|| "noisy".into())];
                if let Some(s) = snr_mdb {
                    parts.push(format!("{}dB", *s as f64 / 1000.0));
                }
                parts.join("@")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: String,
    pub noise_type: Option<String>,
    pub snr_db: Option<f64>,
    pub utterances: usize,
    #[serde(flatten)]
    pub counts: ErrorCounts,
    /// Percentage; absent when the bucket has no reference words.
    pub wer: Option<f64>,
    pub degenerate: bool,
}

impl BucketRow {
    fn new(
        bucket: String,
        noise_type: Option<String>,
        snr_db: Option<f64>,
        utterances: usize,
        counts: ErrorCounts,
    ) -> Self {
        BucketRow {
            bucket,
            noise_type,
            snr_db,
            utterances,
            counts,
            wer: counts.wer_percent(),
            degenerate: counts.ref_words == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub id: String,
    pub bucket: String,
    pub reference: String,
    pub hypothesis: String,
    #[serde(flatten)]
    pub counts: ErrorCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Erratum {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub buckets: Vec<BucketRow>,
    pub aggregate: BucketRow,
    pub errata: Vec<Erratum>,
    pub utterances: Vec<UtteranceResult>,
    /// Effective configuration of the evaluated model.
    pub config: String,
}

impl WerReport {
    pub fn bucket(&self, label: &str) -> Option<&BucketRow> {
        self.buckets.iter().find(|b| b.bucket == label)
    }

    /// Counts pooled over the buckets accepted by `keep`.
    pub fn pooled(&self, keep: impl Fn(&BucketRow) -> bool) -> ErrorCounts {
        let mut c = ErrorCounts::default();
        for b in self.buckets.iter().filter(|b| keep(b)) {
            c.merge(&b.counts);
        }
        c
    }

    /// Pooled WER over every noisy bucket.
    pub fn noisy_wer(&self) -> Option<f64> {
        self.pooled(|b| b.bucket != "clean").wer_percent()
    }

    pub fn clean_wer(&self) -> Option<f64> {
        self.pooled(|b| b.bucket == "clean").wer_percent()
    }

    /// Pooled WER over noisy buckets at `snr_db`.
    pub fn wer_at_snr(&self, snr_db: f64) -> Option<f64> {
        self.pooled(|b| b.snr_db == Some(snr_db)).wer_percent()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>6} {:>6} {:>5} {:>5} {:>5} {:>8}",
            "bucket", "utts", "words", "sub", "del", "ins", "WER%"
        );
        for row in self.buckets.iter().chain(std::iter::once(&self.aggregate)) {
            let w = row
                .wer
                .map(|w| format!("{:.2}", w))
                .unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                s,
                "{:<24} {:>6} {:>6} {:>5} {:>5} {:>5} {:>8}",
                row.bucket,
                row.utterances,
                row.counts.ref_words,
                row.counts.substitutions,
                row.counts.deletions,
                row.counts.insertions,
                w
            );
        }
        if !self.errata.is_empty() {
            let _ = writeln!(s, "skipped {} utterance(s)", self.errata.len());
        }
        s
    }
}

/// Count-pooled report over per-utterance results.
pub fn aggregate(
    results: &[(BucketKey, UtteranceResult)],
    errata: Vec<Erratum>,
    config: String,
) -> WerReport {
    let mut buckets: BTreeMap<&BucketKey, (usize, ErrorCounts)> = BTreeMap::new();
    let mut total = ErrorCounts::default();
    for (key, r) in results {
        let e = buckets.entry(key).or_default();
        e.0 += 1;
        e.1.merge(&r.counts);
        total.merge(&r.counts);
    }
    let rows = buckets
        .into_iter()
        .map(|(k, (n, c))| BucketRow::new(k.label(), k.noise_type(), k.snr_db(), n, c))
        .collect();
    WerReport {
        buckets: rows,
        aggregate: BucketRow::new("all".into(), None, None, results.len(), total),
        errata,
        utterances: results.iter().map(|(_, r)| r.clone()).collect(),
        config,
    }
}

/// Decodes every entry of every manifest and scores it. Unreadable audio
/// is skipped and listed in the errata.
pub fn evaluate_set(
    recognizer: &Recognizer,
    manifests: &[Manifest],
    bucketing: Bucketing,
    config: String,
) -> Result<WerReport> {
    let jobs: Vec<(&Manifest, &ManifestEntry)> = manifests
        .iter()
        .flat_map(|m| m.entries.iter().map(move |e| (m, e)))
        .collect();
    let outcomes: Vec<std::result::Result<(BucketKey, UtteranceResult), Erratum>> = jobs
        .par_iter()
        .map(|(m, e)| {
            let key = BucketKey::for_entry(e, bucketing);
            let fail = |reason: String| Erratum {
                id: e.id.clone(),
                reason,
            };
            let clip =
                read_wav(m.resolve(&e.audio_path), Some(0)).map_err(|err| fail(err.to_string()))?;
            let hyp = recognizer
                .transcribe(&clip)
                .map_err(|err| fail(err.to_string()))?;
            let counts = wer(&e.transcript, &hyp);
            Ok((
                key.clone(),
                UtteranceResult {
                    id: e.id.clone(),
                    bucket: key.label(),
                    reference: e.transcript.clone(),
                    hypothesis: hyp,
                    counts,
                },
            ))
        })
        .collect();
    let mut results = Vec::new();
    let mut errata = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(e) => {
                log::warn!("skipping {}: {}", e.id, e.reason);
                errata.push(e);
            }
        }
    }
    Ok(aggregate(&results, errata, config))
}
