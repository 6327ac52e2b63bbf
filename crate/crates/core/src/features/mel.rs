use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const NUM_MEL_BINS: usize = 80;
pub const WINDOW_LENGTH: usize = 400;
pub const HOP_LENGTH: usize = 160;
pub const FFT_SIZE: usize = 512;
/// Energy floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Number of frames produced for `num_samples` samples (no padding).
pub fn num_frames(num_samples: usize) -> usize {
    if num_samples < WINDOW_LENGTH {
        0
    } else {
        1 + (num_samples - WINDOW_LENGTH) / HOP_LENGTH
    }
}

/// Edge frequencies of the triangular filters: `NUM_MEL_BINS + 2` points
/// equally spaced on the mel scale over 0..8000 Hz. Filter m has its peak at
/// `edges[m + 1]`.
pub fn mel_edges_hz() -> Vec<f64> {
    let top = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    (0..NUM_MEL_BINS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (NUM_MEL_BINS + 1) as f64))
        .collect()
}

/// Short-time log-mel front end with precomputed window, FFT plan and filters.
pub struct LogMel {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    /// Per filter: first FFT bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl Default for LogMel {
    fn default() -> Self {
        Self::new()
    }
}

impl LogMel {
    pub fn new() -> Self {
        let window = (0..WINDOW_LENGTH)
            .map(|n| {
                0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW_LENGTH as f64).cos()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        let edges = mel_edges_hz();
        let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
        let filters = (0..NUM_MEL_BINS)
            .map(|m| {
                let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..=FFT_SIZE / 2 {
                    let f = k as f64 * bin_hz;
                    let w = if f > lo && f <= center {
                        (f - lo) / (center - lo)
                    } else if f > center && f < hi {
                        (hi - f) / (hi - center)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                        weights.push(w);
                    } else if first.is_some() {
                        break;
                    }
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        LogMel {
            window,
            fft,
            filters,
        }
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        if clip.sample_rate != SAMPLE_RATE {
            return Err(Error::Features(format!(
                "sample rate {} Hz, expected {} Hz",
                clip.sample_rate, SAMPLE_RATE
            )));
        }
        let frames = num_frames(clip.len());
        if frames == 0 {
            return Err(Error::Features(format!(
                "clip of {} samples is shorter than one {}-sample window",
                clip.len(),
                WINDOW_LENGTH
            )));
        }
        let mut out = Vec::with_capacity(frames * NUM_MEL_BINS);
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut power = vec![0.0; FFT_SIZE / 2 + 1];
        for t in 0..frames {
            let frame = &clip.samples[t * HOP_LENGTH..t * HOP_LENGTH + WINDOW_LENGTH];
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < WINDOW_LENGTH {
                    Complex::new(frame[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for (first, weights) in &self.filters {
                let e: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * power[first + j])
                    .sum();
                out.push(e.max(LOG_FLOOR).ln());
            }
        }
        FeatureMatrix::new(frames, NUM_MEL_BINS, out)
    }
}

/// 80-dimensional log-mel filterbank features of a 16 kHz clip.
pub fn log_mel(clip: &AudioClip) -> Result<FeatureMatrix> {
    LogMel::new().compute(clip)
}
