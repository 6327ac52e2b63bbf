//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use noisyd_ct::config::RunConfig;
use noisyd_ct::features::{FeatureMatrix, NormStats, NUM_MEL_BINS};
use noisyd_ct::numerics::{Graph, Tensor, Var};
use noisyd_ct::training::{Model, PairKind, PairedItem};
use noisyd_ct::transducer::Vocabulary;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod checks;
pub mod gradsuite;
pub mod losscheck;
pub mod simcheck;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Row-wise log-softmax in plain arithmetic.
pub fn log_softmax_rows(logits: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        out.extend(row.iter().map(|v| v - z));
    }
    out
}

/// −log Σ P(path) over every length-t label path that collapses to
/// `target`, by listing all |V|^t paths.
pub fn brute_ctc(
    logprobs: &[f64],
    t: usize,
    v: usize,
    target: &[usize],
    blank: usize,
) -> Option<f64> {
    let mut total = 0.0;
    let mut any = false;
    for code in 0..v.pow(t as u32) {
        let mut c = code;
        let mut path = Vec::with_capacity(t);
        for _ in 0..t {
            path.push(c % v);
            c /= v;
        }
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &s in &path {
            if Some(s) != prev && s != blank {
                collapsed.push(s);
            }
            prev = Some(s);
        }
        if collapsed == target {
            any = true;
            let lp: f64 = path
                .iter()
                .enumerate()
                .map(|(i, &s)| logprobs[i * v + s])
                .sum();
            total += lp.exp();
        }
    }
    any.then(|| -total.ln())
}

/// −log Σ P(alignment) over every transducer alignment: all orderings of
/// t blanks and the U labels that end in a blank.
pub fn brute_rnnt(lattice: &[f64], t: usize, v: usize, target: &[usize], blank: usize) -> f64 {
    let u_len = target.len();
    let n = t + u_len;
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        // bit set = label emission
        if mask.count_ones() as usize != u_len || mask & (1 << (n - 1)) != 0 {
            continue;
        }
        let (mut ti, mut ui, mut lp) = (0, 0, 0.0);
        for k in 0..n {
            let row = (ti * (u_len + 1) + ui) * v;
            if mask & (1 << k) != 0 {
                lp += lattice[row + target[ui]];
                ui += 1;
            } else {
                lp += lattice[row + blank];
                ti += 1;
            }
        }
        total += lp.exp();
    }
    -total.ln()
}

pub const TINY_CONFIG: &str = "\
encoder.layers = 1
encoder.d_model = 4
encoder.heads = 2
encoder.ffn_dim = 8
encoder.conv_kernel = 3
encoder.dropout = 0.1
encoder.max_positions = 8
decoder.embed_dim = 3
decoder.hidden = 4
decoder.joint_dim = 4
noisyd.hidden = 4
train.peak_lr = 0.001
train.warmup_steps = 5
train.batch_size = 2
specaug.max_time_width = 3
specaug.max_freq_width = 10
";

pub fn tiny_config() -> RunConfig {
    RunConfig::parse(TINY_CONFIG).unwrap()
}

pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::from_words(["ba", "di"]).unwrap()
}

pub fn random_features(rng: &mut ChaCha8Rng, frames: usize) -> FeatureMatrix {
    let data = (0..frames * NUM_MEL_BINS)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    FeatureMatrix::new(frames, NUM_MEL_BINS, data).unwrap()
}

/// A clean-clean or clean-noisy item with random features of `frames`
/// frames and random word tokens.
pub fn random_item(rng: &mut ChaCha8Rng, id: &str, frames: usize, noisy: bool) -> PairedItem {
    let clean = Arc::new(random_features(rng, frames));
    let input = if noisy {
        let d: Vec<f64> = clean
            .data()
            .iter()
            .map(|v| v + rng.gen_range(-0.5..0.5))
            .collect();
        Arc::new(FeatureMatrix::new(frames, NUM_MEL_BINS, d).unwrap())
    } else {
        clean.clone()
    };
    let n = rng.gen_range(1..=2);
    PairedItem {
        id: id.to_string(),
        clean,
        input,
        tokens: (0..n).map(|_| rng.gen_range(1..3)).collect(),
        kind: if noisy {
            PairKind::CleanNoisy
        } else {
            PairKind::CleanClean
        },
    }
}

pub fn random_items(rng: &mut ChaCha8Rng, n: usize, frames: usize) -> Vec<PairedItem> {
    (0..n)
        .map(|i| random_item(rng, &format!("u{}", i), frames, i % 2 == 1))
        .collect()
}

pub fn unit_norm() -> NormStats {
    NormStats::compute([&FeatureMatrix::new(1, NUM_MEL_BINS, vec![0.0; NUM_MEL_BINS]).unwrap()])
        .unwrap()
}

/// Fresh model after the given stage: 1 = encoder + decoder, 2 adds
/// NoisyD, 3 also forks the reference branch.
pub fn tiny_model(config: RunConfig, stage: u8) -> Model {
    let mut m = Model::init(config, tiny_vocab(), unit_norm()).unwrap();
    m.stage = 1;
    if stage >= 2 {
        m.add_noisyd().unwrap();
        m.stage = 2;
    }
    if stage >= 3 {
        m.fork_branch();
        m.stage = 3;
    }
    m
}

/// Fixed pseudo-random weights so that a sum reduction does not hide
/// sign errors through symmetry.
pub fn reduce(g: &mut Graph, y: Var) -> noisyd_ct::Result<Var> {
    let n = g.value(y).numel();
    let w: Vec<f64> = (0..n).map(|i| (0.7 * i as f64 + 0.3).cos() + 0.2).collect();
    let m = g.mask_mul(y, w)?;
    Ok(g.sum(m))
}

/// Every parameter name of `store` under `prefix`.
pub fn names_with_prefix(model: &Model, prefix: &str) -> Vec<String> {
    model
        .params
        .names()
        .filter(|n| n.starts_with(prefix))
        .cloned()
        .collect()
}

/// Human-readable verdict line for the acceptance target.
pub fn verdict(criterion: u32, title: &str, passed: bool, detail: &str) -> String {
    format!(
        "criterion {:>2} [{}] {}: {}",
        criterion,
        if passed { "PASS" } else { "FAIL" },
        title,
        detail
    )
}
