use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::features::{global_mean_norm, log_mel, FeatureMatrix};
use crate::noisyd::Disentangler;
use crate::numerics::{Session, Tensor};
use crate::training::{Checkpoint, Model};

/// File names of the three exported matrices, in display order.
pub const ROLES: [&str; 3] = ["h_noisy", "h_clean_tilde", "h_t"];

/// The encoder output for the noisy input, its extracted clean part, and
/// the reference representation of the clean input.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationTriple {
    pub h_noisy: Tensor,
    pub h_clean: Tensor,
    pub h_t: Tensor,
}

/// Element-mean squared distance.
pub fn mean_sq_distance(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.numel().max(1) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Rescales to zero mean and unit variance over all entries.
pub fn standardize(t: &Tensor) -> Tensor {
    let n = t.numel().max(1) as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    let var = t
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        t.map(|_| 0.0)
    } else {
        t.map(|v| (v - mean) / sd)
    }
}

impl RepresentationTriple {
    /// (d(h̃_clean, h_t), d(h_noisy, h_t)) on raw values.
    pub fn raw_distances(&self) -> (f64, f64) {
        (
            mean_sq_distance(&self.h_clean, &self.h_t),
            mean_sq_distance(&self.h_noisy, &self.h_t),
        )
    }

    /// Same distances after standardizing each matrix separately.
    pub fn standardized_distances(&self) -> (f64, f64) {
        let t = standardize(&self.h_t);
        (
            mean_sq_distance(&standardize(&self.h_clean), &t),
            mean_sq_distance(&standardize(&self.h_noisy), &t),
        )
    }
}

/// Representations for normalized clean/noisy features of equal length.
pub fn representations(
    model: &Model,
    clean: &FeatureMatrix,
    noisy: &FeatureMatrix,
) -> Result<RepresentationTriple> {
    if clean.frames() != noisy.frames() {
        return Err(Error::Eval(format!(
            "clean and noisy inputs differ in length ({} vs {} frames)",
            clean.frames(),
            noisy.frames()
        )));
    }
    if !model.has_noisyd() {
        return Err(Error::Eval(format!(
            "heatmaps need a stage-2 or later checkpoint, got stage {}",
            model.stage
        )));
    }
    let nd = model.noisyd()?;
    let mut s = Session::inference(&model.params);
    let h_noisy = model.encoder().encode(&mut s, noisy, false)?;
    let h_t = model.branch().encode(&mut s, clean, false)?;
    let h_clean = nd.clean(&mut s, h_noisy)?;
    Ok(RepresentationTriple {
        h_noisy: s.graph.value(h_noisy).clone(),
        h_clean: s.graph.value(h_clean).clone(),
        h_t: s.graph.value(h_t).clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub stage: u8,
    pub frames: usize,
    pub dims: usize,
    pub files: Vec<String>,
    pub distance_clean_tilde_vs_t: f64,
    pub distance_noisy_vs_t: f64,
    pub standardized_distance_clean_tilde_vs_t: f64,
    pub standardized_distance_noisy_vs_t: f64,
}

fn write_csv(path: &Path, t: &Tensor) -> Result<()> {
    let mut s = String::new();
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|v| format!("{}", v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes `h_noisy.csv`, `h_clean_tilde.csv`, `h_t.csv` and `meta.json`.
pub fn export_heatmaps(
    ckpt: Checkpoint,
    clean: &AudioClip,
    noisy: &AudioClip,
    out_dir: impl AsRef<Path>,
) -> Result<HeatmapMeta> {
    if clean.len() != noisy.len() {
        return Err(Error::Eval(format!(
            "clean and noisy recordings differ in duration ({} vs {} samples)",
            clean.len(),
            noisy.len()
        )));
    }
    let model = Model::from_checkpoint(ckpt, None)?;
    let c = global_mean_norm(&log_mel(clean)?, &model.norm)?;
    let n = global_mean_norm(&log_mel(noisy)?, &model.norm)?;
    let reps = representations(&model, &c, &n)?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mats = [&reps.h_noisy, &reps.h_clean, &reps.h_t];
    let mut files = Vec::new();
    for (role, m) in ROLES.iter().zip(mats) {
        if !m.is_finite() {
            return Err(Error::Eval(format!("{} contains non-finite values", role)));
        }
        let name = format!("{}.csv", role);
        write_csv(&dir.join(&name), m)?;
        files.push(name);
    }
    let (raw_c, raw_n) = reps.raw_distances();
    let (std_c, std_n) = reps.standardized_distances();
    let meta = HeatmapMeta {
        stage: model.stage,
        frames: reps.h_t.rows(),
        dims: reps.h_t.cols(),
        files,
        distance_clean_tilde_vs_t: raw_c,
        distance_noisy_vs_t: raw_n,
        standardized_distance_clean_tilde_vs_t: std_c,
        standardized_distance_noisy_vs_t: std_n,
    };
    let path = dir.join("meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_copy_has_zero_distance() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = a.map(|v| 10.0 * v - 3.0);
        assert!(mean_sq_distance(&standardize(&a), &standardize(&b)) < 1e-24);
        assert!(mean_sq_distance(&a, &b) > 1.0);
    }
}
