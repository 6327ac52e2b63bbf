use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate every pipeline input must have.
pub const SAMPLE_RATE: u32 = 16_000;

const PCM16_SCALE: f64 = 32768.0;

/// Mono waveform with samples in [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidAudio("NaN sample".into()));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared sample over the whole clip.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

pub fn power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// Rounds a sample to its PCM16 word.
pub fn quantize_sample(x: f64) -> i16 {
    (x * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

pub fn dequantize_sample(q: i16) -> f64 {
    q as f64 / PCM16_SCALE
}

/// The value a sample takes after a PCM16 write/read round trip.
pub fn pcm16_round_trip(x: f64) -> f64 {
    dequantize_sample(quantize_sample(x))
}

fn audio_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads every channel of a PCM16 16 kHz RIFF/WAVE file.
pub fn read_wav_channels(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(audio_err(
            path,
            format!(
                "unsupported encoding {:?} {}-bit, expected PCM16",
                spec.sample_format, spec.bits_per_sample
            ),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(audio_err(
            path,
            format!(
                "sample rate {} Hz, expected {} Hz",
                spec.sample_rate, SAMPLE_RATE
            ),
        ));
    }
    let nch = spec.channels as usize;
    let mut channels = vec![Vec::with_capacity(reader.len() as usize / nch.max(1)); nch];
    for (i, s) in reader.samples::<i16>().enumerate() {
        let s = s.map_err(|e| audio_err(path, e.to_string()))?;
        channels[i % nch].push(dequantize_sample(s));
    }
    Ok(channels)
}

/// Reads a mono clip. Multi-channel files require an explicit `channel`.
pub fn read_wav(path: impl AsRef<Path>, channel: Option<usize>) -> Result<AudioClip> {
    let path = path.as_ref();
    let mut channels = read_wav_channels(path)?;
    let idx = match (channels.len(), channel) {
        (1, None) => 0,
        (n, None) => {
            return Err(audio_err(
                path,
                format!("{} channels but no channel index given", n),
            ));
        }
        (n, Some(c)) if c >= n => {
            return Err(audio_err(
                path,
                format!("channel {} requested from {} channels", c, n),
            ));
        }
        (_, Some(c)) => c,
    };
    AudioClip::new(channels.swap_remove(idx), SAMPLE_RATE)
}

/// Writes a mono PCM16 file. Samples are rounded to the nearest PCM word.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    if clip.sample_rate != SAMPLE_RATE {
        return Err(audio_err(
            path,
            format!("refusing to write {} Hz audio", clip.sample_rate),
        ));
    }
    write_pcm16(path, &[&clip.samples], clip.sample_rate)
}

/// Writes interleaved PCM16 channels of equal length.
pub fn write_pcm16(path: &Path, channels: &[&[f64]], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| audio_err(path, e.to_string()))?;
    let len = channels.first().map_or(0, |c| c.len());
    for i in 0..len {
        for ch in channels {
            w.write_sample(quantize_sample(ch[i]))
                .map_err(|e| audio_err(path, e.to_string()))?;
        }
    }
    w.finalize().map_err(|e| audio_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ramp.wav");
        let words: Vec<i16> = (0..160).map(|i| (i * 400 - 32000) as i16).collect();
        let clip = AudioClip::new(
            words.iter().map(|&w| dequantize_sample(w)).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        write_wav(&p, &clip).unwrap();
        let back = read_wav(&p, None).unwrap();
        let back_words: Vec<i16> = back.samples.iter().map(|&s| quantize_sample(s)).collect();
        assert_eq!(words, back_words);
    }

    #[test]
    fn stereo_requires_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let a = vec![0.1; 32];
        let b = vec![-0.2; 32];
        write_pcm16(&p, &[&a, &b], SAMPLE_RATE).unwrap();
        assert!(read_wav(&p, None).is_err());
        let right = read_wav(&p, Some(1)).unwrap();
        assert!((right.samples[0] - pcm16_round_trip(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn wrong_rate_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("8k.wav");
        write_pcm16(&p, &[&[0.0; 16]], 8000).unwrap();
        let err = read_wav(&p, None).unwrap_err().to_string();
        assert!(err.contains("8000"), "{}", err);
    }
}
