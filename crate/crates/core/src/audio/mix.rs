use crate::audio::wav::{dequantize_sample, power, quantize_sample, AudioClip};
use crate::error::{Error, Result};

/// Signal-to-noise ratio in dB between two powers.
pub fn snr_db(signal_power: f64, noise_power: f64) -> f64 {
    10.0 * (signal_power / noise_power).log10()
}

/// Noise gain that places `noise` at `snr_db` below `clean`, with powers
/// measured as the mean squared sample over the full clip.
pub fn snr_gain(clean_power: f64, noise_power: f64, snr_db: f64) -> Result<f64> {
    if !(clean_power > 0.0) {
        return Err(Error::Mixing("clean signal has zero power".into()));
    }
    if !(noise_power > 0.0) {
        return Err(Error::Mixing("noise segment has zero power".into()));
    }
    Ok((clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// noisy = clean + gain·noise with the gain chosen for the requested SNR.
pub fn mix_at_snr(clean: &AudioClip, noise: &[f64], snr_db: f64) -> Result<(AudioClip, f64)> {
    if noise.len() != clean.len() {
        return Err(Error::Mixing(format!(
            "noise segment of {} samples for a clip of {}",
            noise.len(),
            clean.len()
        )));
    }
    let gain = snr_gain(clean.power(), power(noise), snr_db)?;
    let samples = clean
        .samples
        .iter()
        .zip(noise)
        .map(|(c, n)| c + gain * n)
        .collect();
    Ok((AudioClip::new(samples, clean.sample_rate)?, gain))
}

/// A mixed pair ready to be written as PCM16, with all samples already on
/// the PCM grid so the stored files reproduce the pair exactly.
#[derive(Debug, Clone)]
pub struct QuantizedPair {
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    /// Noise gain before peak renormalization.
    pub gain: f64,
    /// Common factor applied to both waveforms (1 when no peak exceeded 1).
    pub peak_scale: f64,
}

/// Mixes `clean` and `noise` at `snr_db` and prepares both waveforms for
/// PCM16 storage.
///
/// If the mixture peaks above 1.0 both waveforms are scaled by the same
/// factor. The effective noise scale is then refined so that the SNR
/// recomputed from the stored words (noisy − clean against clean) matches
/// the target, which the quantization grid would otherwise perturb.
pub fn mix_for_storage(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<QuantizedPair> {
    let clip = AudioClip::new(clean.to_vec(), crate::audio::SAMPLE_RATE)?;
    let (mixed, gain) = mix_at_snr(&clip, noise, snr_db)?;
    let peak = mixed.peak().max(clip.peak());
    let peak_scale = if peak > 1.0 { 0.999 / peak } else { 1.0 };

    let clean_q: Vec<i16> = clean
        .iter()
        .map(|&c| quantize_sample(c * peak_scale))
        .collect();
    let pc = code_power(&clean_q);
    if !(pc > 0.0) {
        return Err(Error::Mixing(
            "clean signal has zero power after quantization".into(),
        ));
    }
    let target = pc / 10f64.powf(snr_db / 10.0);
    let codes = |s: f64| -> Vec<i16> { noise.iter().map(|&n| quantize_sample(n * s)).collect() };
    let noise_power = |s: f64| code_power(&codes(s));

    // Quantized noise power is non-decreasing in the scale: bisect for the
    // largest scale whose power does not exceed the target.
    let (mut lo, mut hi) = (gain * peak_scale, gain * peak_scale);
    for _ in 0..200 {
        if noise_power(lo) <= target {
            break;
        }
        lo *= 0.98;
    }
    for _ in 0..200 {
        if noise_power(hi) > target {
            break;
        }
        hi *= 1.02;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if noise_power(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut noise_q = codes(lo);
    let deficit = target - code_power(&noise_q);
    fill_power_deficit(&mut noise_q, &clean_q, noise, deficit);
    if !(code_power(&noise_q) > 0.0) {
        return Err(Error::Mixing(
            "scaled noise vanishes at PCM16 resolution".into(),
        ));
    }
    let noisy = clean_q
        .iter()
        .zip(&noise_q)
        .map(|(&c, &n)| dequantize_sample(c) + dequantize_sample(n))
        .collect();
    Ok(QuantizedPair {
        clean: clean_q.iter().map(|&c| dequantize_sample(c)).collect(),
        noisy,
        gain: lo / peak_scale,
        peak_scale,
    })
}

/// Sum of squared PCM words; exact in f64 for any clip length in use.
fn code_power(q: &[i16]) -> f64 {
    q.iter().map(|&v| (v as f64) * (v as f64)).sum()
}

/// Closes a remaining power gap below one bisection step by moving single
/// noise words one step away from zero. A word at q adds 2|q|+1; largest
/// first, each word at most once, skipping moves that would overflow.
fn fill_power_deficit(noise_q: &mut [i16], clean_q: &[i16], noise: &[f64], mut deficit: f64) {
    let mut order: Vec<usize> = (0..noise_q.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(noise_q[i].unsigned_abs()), i));
    for i in order {
        if deficit < 1.0 {
            break;
        }
        let q = noise_q[i] as i32;
        let inc = (2 * q.abs() + 1) as f64;
        if inc > deficit {
            continue;
        }
        let step = if q != 0 {
            q.signum()
        } else if noise[i] < 0.0 {
            -1
        } else {
            1
        };
        let moved = q + step;
        let mixed = clean_q[i] as i32 + moved;
        if moved.abs() > 32767 || !(-32768..=32767).contains(&mixed) {
            continue;
        }
        noise_q[i] = moved as i16;
        deficit -= inc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, crate::audio::SAMPLE_RATE).unwrap()
    }

    #[test]
    fn equal_power_gains() {
        let c = clip(vec![0.5, -0.5, 0.5, -0.5]);
        let n = vec![-0.5, 0.5, 0.5, -0.5];
        assert!((mix_at_snr(&c, &n, 0.0).unwrap().1 - 1.0).abs() < 1e-15);
        assert!((mix_at_snr(&c, &n, 20.0).unwrap().1 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_power_rejected() {
        let c = clip(vec![0.0; 8]);
        assert!(mix_at_snr(&c, &[0.1; 8], 5.0).is_err());
        let c = clip(vec![0.1; 8]);
        assert!(mix_at_snr(&c, &[0.0; 8], 5.0).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        let c = clip(vec![0.1; 8]);
        assert!(mix_at_snr(&c, &[0.1; 7], 5.0).is_err());
    }
}
