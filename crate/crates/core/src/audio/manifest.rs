use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise metadata attached to a simulated utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub clean_path: String,
    pub noise_path: String,
    pub noise_offset_samples: u64,
    pub snr_db: f64,
    pub noise_type: String,
    #[serde(default)]
    pub noise_channel: usize,
    /// Noise gain applied before peak renormalization.
    #[serde(default = "one")]
    pub gain: f64,
    /// Common factor applied to both emitted waveforms.
    #[serde(default = "one")]
    pub peak_scale: f64,
}

fn one() -> f64 {
    1.0
}

/// One utterance record. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio_path: String,
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairing: Option<Pairing>,
}

impl ManifestEntry {
    pub fn clean(
        id: impl Into<String>,
        audio_path: impl Into<String>,
        transcript: impl Into<String>,
    ) -> Self {
        ManifestEntry {
            id: id.into(),
            audio_path: audio_path.into(),
            transcript: transcript.into(),
            pairing: None,
        }
    }

    pub fn is_paired(&self) -> bool {
        self.pairing.is_some()
    }
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        resolve_path(&self.base_dir, rel)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Manifest {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries: read_manifest(path)?,
        })
    }
}

pub fn resolve_path(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a JSON-lines manifest; blank lines are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> Result<String> {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(manifest_to_string(entries)?.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
