//! Noisy-corpus simulation: SNR-controlled mixing of clean utterances with
//! noise drawn from disjoint train/test partitions of a noise pool.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::manifest::{Manifest, ManifestEntry, Pairing};
use crate::audio::mix::mix_for_storage;
use crate::audio::wav::{read_wav, read_wav_channels, write_pcm16, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionRole {
    Train,
    Test,
}

impl fmt::Display for PartitionRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionRole::Train => "train",
            PartitionRole::Test => "test",
        })
    }
}

impl FromStr for PartitionRole {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(PartitionRole::Train),
            "test" => Ok(PartitionRole::Test),
            other => Err(Error::Simulation(format!("unknown partition `{}`", other))),
        }
    }
}

/// A noise recording with all of its channels.
#[derive(Debug, Clone)]
pub struct NoiseFile {
    /// Path string recorded in manifests.
    pub path: String,
    pub noise_type: String,
    pub channels: Vec<Vec<f64>>,
}

impl NoiseFile {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Half-open sample interval [start, end) of one noise file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSegment {
    pub file: usize,
    pub start: usize,
    pub end: usize,
}

impl NoiseSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// The noise available to one role. Train and test partitions of the same
/// pool cover disjoint sample intervals.
#[derive(Debug, Clone)]
pub struct NoisePartition {
    pub role: PartitionRole,
    pub files: Arc<Vec<NoiseFile>>,
    pub segments: Vec<NoiseSegment>,
}

impl NoisePartition {
    pub fn noise_types(&self) -> BTreeSet<String> {
        self.segments
            .iter()
            .map(|s| self.files[s.file].noise_type.clone())
            .collect()
    }

    fn segments_of(&self, noise_type: Option<&str>) -> Vec<NoiseSegment> {
        self.segments
            .iter()
            .copied()
            .filter(|s| !s.is_empty())
            .filter(|s| noise_type.is_none_or(|t| self.files[s.file].noise_type == t))
            .collect()
    }
}

/// Noise files split per file into a leading train interval and a trailing
/// test interval.
#[derive(Debug, Clone)]
pub struct NoisePool {
    files: Arc<Vec<NoiseFile>>,
    test_fraction: f64,
}

impl NoisePool {
    pub fn from_files(files: Vec<NoiseFile>, test_fraction: f64) -> Result<Self> {
        if files.is_empty() {
            return Err(Error::Simulation("empty noise pool".into()));
        }
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Simulation(format!(
                "test fraction {} outside [0, 1)",
                test_fraction
            )));
        }
        Ok(NoisePool {
            files: Arc::new(files),
            test_fraction,
        })
    }

    /// Loads every `.wav` under `dir`. The noise type is the name of the
    /// first-level subdirectory, or the file stem for files directly in `dir`.
    pub fn load(dir: impl AsRef<Path>, test_fraction: f64) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths = Vec::new();
        collect_wavs(dir, &mut paths)?;
        paths.sort();
        let mut files = Vec::with_capacity(paths.len());
        for p in paths {
            let rel = p.strip_prefix(dir).unwrap_or(&p);
            let noise_type = match rel.components().count() {
                1 => rel.file_stem().map(|s| s.to_string_lossy().into_owned()),
                _ => rel
                    .components()
                    .next()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned()),
            }
            .unwrap_or_default();
            files.push(NoiseFile {
                path: p.to_string_lossy().into_owned(),
                noise_type,
                channels: read_wav_channels(&p)?,
            });
        }
        NoisePool::from_files(files, test_fraction)
    }

    pub fn files(&self) -> &[NoiseFile] {
        &self.files
    }

    pub fn partition(&self, role: PartitionRole) -> NoisePartition {
        let segments = self
            .files
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let split = ((f.len() as f64) * (1.0 - self.test_fraction)).floor() as usize;
                match role {
                    PartitionRole::Train => NoiseSegment {
                        file: i,
                        start: 0,
                        end: split,
                    },
                    PartitionRole::Test => NoiseSegment {
                        file: i,
                        start: split,
                        end: f.len(),
                    },
                }
            })
            .collect();
        NoisePartition {
            role,
            files: Arc::clone(&self.files),
            segments,
        }
    }
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            collect_wavs(&p, out)?;
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    Ok(())
}

/// How target SNRs are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum SnrPolicy {
    /// Continuous Uniform[min, max] per utterance; one output set.
    Uniform { min: f64, max: f64 },
    /// One output set per (noise type, grid SNR).
    Grid(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SimulationOptions {
    pub snr: SnrPolicy,
    pub seed: u64,
    /// Wrap noise around within its segment when the segment is shorter
    /// than the utterance.
    pub allow_loop: bool,
}

/// One simulated manifest. Grid simulation tags each set with its noise
/// type and SNR.
#[derive(Debug, Clone)]
pub struct SimulatedSet {
    pub noise_type: Option<String>,
    pub snr_db: Option<f64>,
    pub entries: Vec<ManifestEntry>,
}

impl SimulatedSet {
    /// File-name stem for this set, e.g. `babble.snr-5`.
    pub fn label(&self) -> String {
        match (&self.noise_type, self.snr_db) {
            (Some(t), Some(s)) => format!("{}.snr{}", t, s),
            _ => "noisy".into(),
        }
    }
}

/// Simulates one noisy counterpart per clean entry (per set) and writes
/// the emitted clean/noisy waveforms under `out_dir/audio/`. Returned
/// manifest paths are relative to `out_dir`.
pub fn simulate_corpus(
    clean: &Manifest,
    partition: &NoisePartition,
    split: PartitionRole,
    opts: &SimulationOptions,
    out_dir: &Path,
) -> Result<Vec<SimulatedSet>> {
    if partition.role != split {
        return Err(Error::Simulation(format!(
            "{} manifest cannot draw from the {} noise partition",
            split, partition.role
        )));
    }
    if partition.segments_of(None).is_empty() {
        return Err(Error::Simulation("empty noise pool".into()));
    }
    let specs: Vec<(Option<String>, Option<f64>)> = match &opts.snr {
        SnrPolicy::Uniform { min, max } => {
            if !(min <= max) {
                return Err(Error::Simulation(format!(
                    "snr range [{}, {}] is empty",
                    min, max
                )));
            }
            vec![(None, None)]
        }
        SnrPolicy::Grid(grid) => {
            if grid.is_empty() {
                return Err(Error::Simulation("empty SNR grid".into()));
            }
            partition
                .noise_types()
                .into_iter()
                .flat_map(|t| grid.iter().map(move |&s| (Some(t.clone()), Some(s))))
                .collect()
        }
    };
    if clean.entries.iter().any(ManifestEntry::is_paired) {
        return Err(Error::Simulation(
            "input manifest must contain clean entries only".into(),
        ));
    }

    let per_entry: Vec<Vec<ManifestEntry>> = clean
        .entries
        .par_iter()
        .map(|entry| simulate_entry(clean, entry, partition, opts, &specs, out_dir))
        .collect::<Result<_>>()?;

    Ok(specs
        .iter()
        .enumerate()
        .map(|(k, (t, s))| SimulatedSet {
            noise_type: t.clone(),
            snr_db: *s,
            entries: per_entry.iter().map(|v| v[k].clone()).collect(),
        })
        .collect())
}

fn simulate_entry(
    manifest: &Manifest,
    entry: &ManifestEntry,
    partition: &NoisePartition,
    opts: &SimulationOptions,
    specs: &[(Option<String>, Option<f64>)],
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    let clip = read_wav(manifest.resolve(&entry.audio_path), None)?;
    if clip.is_empty() {
        return Err(Error::Simulation(format!(
            "utterance {} is empty",
            entry.id
        )));
    }
    let mut out = Vec::with_capacity(specs.len());
    for (noise_type, grid_snr) in specs {
        let key = match (noise_type, grid_snr) {
            (Some(t), Some(s)) => format!("{}\u{1f}{}\u{1f}{}", entry.id, t, s),
            _ => entry.id.clone(),
        };
        let mut rng = derive_rng(opts.seed, &key);
        let mut candidates = partition.segments_of(noise_type.as_deref());
        if !opts.allow_loop {
            candidates.retain(|s| s.len() >= clip.len());
        }
        if candidates.is_empty() {
            return Err(Error::Simulation(format!(
                "no noise segment{} can cover utterance {} ({} samples){}",
                noise_type
                    .as_ref()
                    .map(|t| format!(" of type {}", t))
                    .unwrap_or_default(),
                entry.id,
                clip.len(),
                if opts.allow_loop {
                    ""
                } else {
                    " without looping"
                }
            )));
        }
        let seg = candidates[rng.gen_range(0..candidates.len())];
        let file = &partition.files[seg.file];
        let channel = rng.gen_range(0..file.channels.len());
        let offset = if opts.allow_loop {
            rng.gen_range(0..seg.len())
        } else {
            rng.gen_range(0..=seg.len() - clip.len())
        };
        let snr = match (&opts.snr, grid_snr) {
            (_, Some(s)) => *s,
            (SnrPolicy::Uniform { min, max }, None) => {
                if min == max {
                    *min
                } else {
                    rng.gen_range(*min..*max)
                }
            }
            (SnrPolicy::Grid(_), None) => unreachable!("grid specs carry an SNR"),
        };
        let src = &file.channels[channel];
        let noise: Vec<f64> = (0..clip.len())
            .map(|i| src[seg.start + (offset + i) % seg.len()])
            .collect();
        let pair = mix_for_storage(&clip.samples, &noise, snr)?;

        let new_id = match (noise_type, grid_snr) {
            (Some(t), Some(s)) => format!("{}__{}__snr{}", entry.id, t, s),
            _ => format!("{}__noisy", entry.id),
        };
        let noisy_rel = format!("audio/{}.wav", new_id);
        let clean_rel = format!("audio/{}.clean.wav", new_id);
        write_pcm16(&out_dir.join(&noisy_rel), &[&pair.noisy], SAMPLE_RATE)?;
        write_pcm16(&out_dir.join(&clean_rel), &[&pair.clean], SAMPLE_RATE)?;
        out.push(ManifestEntry {
            id: new_id,
            audio_path: noisy_rel,
            transcript: entry.transcript.clone(),
            pairing: Some(Pairing {
                clean_path: clean_rel,
                noise_path: file.path.clone(),
                noise_offset_samples: (seg.start + offset) as u64,
                snr_db: snr,
                noise_type: file.noise_type.clone(),
                noise_channel: channel,
                gain: pair.gain,
                peak_scale: pair.peak_scale,
            }),
        });
    }
    Ok(out)
}

/// Sample intervals of `file` touched by an utterance of `len` samples
/// starting at absolute `offset` inside `segment`, accounting for wrap-around.
pub fn used_intervals(segment: NoiseSegment, offset: usize, len: usize) -> Vec<(usize, usize)> {
    let seg_len = segment.len();
    let rel = offset - segment.start;
    if len >= seg_len {
        return vec![(segment.start, segment.end)];
    }
    if rel + len <= seg_len {
        vec![(offset, offset + len)]
    } else {
        vec![
            (offset, segment.end),
            (segment.start, segment.start + rel + len - seg_len),
        ]
    }
}
