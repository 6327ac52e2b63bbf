//! Synthetic micro-corpus for end-to-end runs on a laptop.
//!
//! Ten "words", each a pair of synthetic phones (formant-shaped harmonic
//! complexes or band-limited hiss), strung into 3–8 word utterances with a
//! per-utterance pitch. Four noise types (white, brown, babble, hum) are
//! written as one long file each.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_manifest, write_wav, AudioClip, Manifest, ManifestEntry, SAMPLE_RATE};
use crate::error::Result;
use crate::rng::derive_rng;
use crate::transducer::Vocabulary;

pub const WORDS: [&str; 10] = ["ba", "di", "gu", "ko", "ma", "ne", "pi", "ro", "su", "te"];

#[derive(Debug, Clone, Copy)]
enum Phone {
    /// Harmonic complex shaped by two formants (Hz).
    Voiced { f1: f64, f2: f64 },
    /// Noise band between two frequencies (Hz).
    Hiss { lo: f64, hi: f64 },
}

const A: Phone = Phone::Voiced {
    f1: 730.0,
    f2: 1090.0,
};
const I: Phone = Phone::Voiced {
    f1: 270.0,
    f2: 2290.0,
};
const U: Phone = Phone::Voiced {
    f1: 300.0,
    f2: 870.0,
};
const O: Phone = Phone::Voiced {
    f1: 570.0,
    f2: 840.0,
};
const E: Phone = Phone::Voiced {
    f1: 530.0,
    f2: 1840.0,
};
const M: Phone = Phone::Voiced {
    f1: 250.0,
    f2: 1200.0,
};
const S: Phone = Phone::Hiss {
    lo: 4000.0,
    hi: 7000.0,
};
const SH: Phone = Phone::Hiss {
    lo: 2000.0,
    hi: 3500.0,
};
const R: Phone = Phone::Voiced {
    f1: 450.0,
    f2: 1350.0,
};

fn phones(word: &str) -> [Phone; 2] {
    match word {
        "ba" => [M, A],
        "di" => [E, I],
        "gu" => [SH, U],
        "ko" => [SH, O],
        "ma" => [U, A],
        "ne" => [I, E],
        "pi" => [S, I],
        "ro" => [R, O],
        "su" => [S, U],
        "te" => [A, E],
        _ => unreachable!("closed word list"),
    }
}

fn envelope(i: usize, n: usize) -> f64 {
    let ramp = (0.012 * SAMPLE_RATE as f64) as usize;
    let r = ramp.min(n / 2).max(1);
    if i < r {
        0.5 - 0.5 * (PI * i as f64 / r as f64).cos()
    } else if i >= n - r {
        0.5 - 0.5 * (PI * (n - i) as f64 / r as f64).cos()
    } else {
        1.0
    }
}

fn synth_phone(p: Phone, dur_s: f64, f0: f64, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let sr = SAMPLE_RATE as f64;
    let n = (dur_s * sr) as usize;
    let start = out.len();
    out.resize(start + n, 0.0);
    match p {
        Phone::Voiced { f1, f2 } => {
            let jitter = 1.0 + rng.gen_range(-0.03..0.03);
            let f0 = f0 * jitter;
            let mut k = 1;
            while (k as f64) * f0 < 4000.0 {
                let f = k as f64 * f0;
                let amp = (-((f - f1) / 120.0).powi(2)).exp()
                    + 0.7 * (-((f - f2) / 180.0).powi(2)).exp()
                    + 0.02;
                let phase = rng.gen_range(0.0..2.0 * PI);
                for i in 0..n {
                    out[start + i] += amp * (2.0 * PI * f * i as f64 / sr + phase).sin();
                }
                k += 1;
            }
        }
        Phone::Hiss { lo, hi } => {
            for _ in 0..40 {
                let f = rng.gen_range(lo..hi);
                let phase = rng.gen_range(0.0..2.0 * PI);
                for i in 0..n {
                    out[start + i] += 0.25 * (2.0 * PI * f * i as f64 / sr + phase).sin();
                }
            }
        }
    }
    for i in 0..n {
        out[start + i] *= envelope(i, n);
    }
}

fn silence(dur_s: f64, out: &mut Vec<f64>) {
    out.resize(out.len() + (dur_s * SAMPLE_RATE as f64) as usize, 0.0);
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Waveform for a word sequence.
pub fn synthesize(words: &[&str], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f0 = rng.gen_range(100.0..220.0);
    let mut out = Vec::new();
    silence(rng.gen_range(0.04..0.08), &mut out);
    for (k, w) in words.iter().enumerate() {
        if k > 0 {
            silence(rng.gen_range(0.08..0.14), &mut out);
        }
        for p in phones(w) {
            synth_phone(p, rng.gen_range(0.08..0.12), f0, rng, &mut out);
        }
    }
    silence(rng.gen_range(0.04..0.08), &mut out);
    normalize_peak(&mut out, 0.5);
    out
}

/// Random transcript of 3–8 words.
pub fn random_transcript(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let n = rng.gen_range(3..=8);
    (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect()
}

pub const NOISE_TYPES: [&str; 4] = ["babble", "brown", "hum", "white"];

/// `seconds` of the named noise type.
pub fn noise(kind: &str, seconds: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let n = (seconds * sr) as usize;
    let mut x = vec![0.0; n];
    match kind {
        "white" => x.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0)),
        "brown" => {
            let mut acc = 0.0;
            for v in x.iter_mut() {
                acc = 0.995 * acc + rng.gen_range(-1.0..1.0);
                *v = acc;
            }
        }
        "hum" => {
            let f = rng.gen_range(55.0..65.0);
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / sr;
                *v = (1..=8)
                    .map(|k| (2.0 * PI * k as f64 * f * t).sin() / k as f64)
                    .sum::<f64>()
                    + 0.3
                        * (2.0 * PI * 1000.0 * t).sin()
                        * (1.0 + 0.5 * (2.0 * PI * 0.5 * t).sin())
                    + 0.05 * rng.gen_range(-1.0..1.0);
            }
        }
        "babble" => {
            for _ in 0..4 {
                let mut talker = Vec::new();
                while talker.len() < n {
                    let words = random_transcript(rng);
                    talker.extend(synthesize(&words, rng));
                }
                let shift = rng.gen_range(0..n);
                for i in 0..n {
                    x[i] += talker[(i + shift) % talker.len()];
                }
            }
        }
        other => panic!("unknown toy noise type {}", other),
    }
    normalize_peak(&mut x, 0.5);
    x
}

/// Model and training configuration sized for the toy corpus.
pub const TOY_CONFIG: &str = "\
encoder.layers = 2
encoder.d_model = 32
encoder.heads = 2
encoder.ffn_dim = 64
encoder.conv_kernel = 7
encoder.dropout = 0.05
encoder.max_positions = 256
decoder.embed_dim = 16
decoder.hidden = 32
decoder.joint_dim = 32
noisyd.hidden = 128
train.peak_lr = 0.003
train.warmup_steps = 100
train.batch_size = 8
train.steps = 1000
specaug.time_masks = 2
specaug.max_time_width = 8
specaug.freq_masks = 2
specaug.max_freq_width = 10
vocab.path = vocab.tsv
";

#[derive(Debug, Clone, Copy)]
pub struct ToySizes {
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub noise_seconds: f64,
}

impl Default for ToySizes {
    fn default() -> Self {
        ToySizes {
            train_utterances: 60,
            test_utterances: 20,
            noise_seconds: 30.0,
        }
    }
}

/// Paths of a generated corpus.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub root: PathBuf,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub noise_dir: PathBuf,
    pub config: PathBuf,
    pub vocab: PathBuf,
}

/// Writes clean train/test utterances, the noise pool, the word vocabulary
/// and a matching configuration under `root`.
pub fn write_corpus(root: impl AsRef<Path>, seed: u64, sizes: ToySizes) -> Result<ToyCorpus> {
    let root = root.as_ref().to_path_buf();
    let mut manifests = Vec::new();
    for (split, count) in [
        ("train", sizes.train_utterances),
        ("test", sizes.test_utterances),
    ] {
        let mut entries = Vec::with_capacity(count);
        for k in 0..count {
            let id = format!("{}{:03}", split, k);
            let mut rng = derive_rng(seed, &format!("toy.{}", id));
            let words = random_transcript(&mut rng);
            let wav = synthesize(&words, &mut rng);
            let rel = format!("clean/{}.wav", id);
            write_wav(root.join(&rel), &AudioClip::new(wav, SAMPLE_RATE)?)?;
            entries.push(ManifestEntry::clean(id, rel, words.join(" ")));
        }
        let path = root.join(format!("{}.jsonl", split));
        write_manifest(&path, &entries)?;
        manifests.push(path);
    }
    let noise_dir = root.join("noise");
    for kind in NOISE_TYPES {
        let mut rng = derive_rng(seed, &format!("toy.noise.{}", kind));
        let x = noise(kind, sizes.noise_seconds, &mut rng);
        write_wav(
            noise_dir.join(kind).join(format!("{}.wav", kind)),
            &AudioClip::new(x, SAMPLE_RATE)?,
        )?;
    }
    let vocab = root.join("vocab.tsv");
    let v = Vocabulary::from_words(WORDS)?;
    std::fs::write(&vocab, v.to_tsv()).map_err(|e| crate::Error::io(&vocab, e))?;
    let config = root.join("toy.cfg");
    std::fs::write(&config, format!("{}seed = {}\n", TOY_CONFIG, seed))
        .map_err(|e| crate::Error::io(&config, e))?;
    let test_manifest = manifests.pop().expect("two splits");
    let train_manifest = manifests.pop().expect("two splits");
    Ok(ToyCorpus {
        root,
        train_manifest,
        test_manifest,
        noise_dir,
        config,
        vocab,
    })
}

impl ToyCorpus {
    pub fn train(&self) -> Result<Manifest> {
        Manifest::load(&self.train_manifest)
    }

    pub fn test(&self) -> Result<Manifest> {
        Manifest::load(&self.test_manifest)
    }
}


/// Optimizer steps per stage; the baseline gets their sum.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub stage1: usize,
    pub stage2: usize,
    pub stage3: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            stage1: 1000,
            stage2: 2000,
            stage3: 1000,
        }
    }
}

pub const TRAIN_SNR: (f64, f64) = (-5.0, 15.0);
pub const TEST_SNRS: [f64; 4] = [-5.0, 0.0, 5.0, 15.0];

/// Manifests produced by noise simulation.
#[derive(Debug, Clone)]
pub struct SimulatedCorpus {
    pub noisy_train: PathBuf,
    pub test_sets: Vec<PathBuf>,
}

/// Mixes the training split with training-partition noise at uniform SNRs
/// and the test split with held-out noise on the test SNR grid.
pub fn simulate(corpus: &ToyCorpus, seed: u64) -> Result<SimulatedCorpus> {
    use crate::audio::{simulate_corpus, NoisePool, PartitionRole, SimulationOptions, SnrPolicy};
    let pool = NoisePool::load(&corpus.noise_dir, 0.2)?;
    let train_dir = corpus.root.join("sim").join("train");
    let sets = simulate_corpus(
        &corpus.train()?,
        &pool.partition(PartitionRole::Train),
        PartitionRole::Train,
        &SimulationOptions {
            snr: SnrPolicy::Uniform {
                min: TRAIN_SNR.0,
                max: TRAIN_SNR.1,
            },
            seed,
            allow_loop: false,
        },
        &train_dir,
    )?;
    let noisy_train = train_dir.join("noisy.jsonl");
    write_manifest(&noisy_train, &sets[0].entries)?;
    let test_dir = corpus.root.join("sim").join("test");
    let sets = simulate_corpus(
        &corpus.test()?,
        &pool.partition(PartitionRole::Test),
        PartitionRole::Test,
        &SimulationOptions {
            snr: SnrPolicy::Grid(TEST_SNRS.to_vec()),
            seed,
            allow_loop: false,
        },
        &test_dir,
    )?;
    let mut test_sets = Vec::new();
    for set in sets {
        let path = test_dir.join(format!("{}.jsonl", set.label()));
        write_manifest(&path, &set.entries)?;
        test_sets.push(path);
    }
    Ok(SimulatedCorpus {
        noisy_train,
        test_sets,
    })
}

/// Everything one seed of the toy experiment produces.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub stage1: crate::training::Checkpoint,
    pub stage2: crate::training::Checkpoint,
    pub stage3: crate::training::Checkpoint,
    pub baseline: crate::training::Checkpoint,
    pub summaries: Vec<(crate::training::Stage, crate::training::StageSummary)>,
    /// Tri-stage model on the clean and noisy test sets.
    pub noisyd_report: crate::eval::WerReport,
    pub baseline_report: crate::eval::WerReport,
    /// Per held-out noisy utterance: standardized (d(h̃_clean, h_t), d(h_noisy, h_t))
    /// under the stage-2 model.
    pub stage2_distances: Vec<(f64, f64)>,
}

/// Generated corpus plus simulation, trained with all three stages and the
/// baseline, then evaluated.
pub fn run(corpus: &ToyCorpus, sim: &SimulatedCorpus, seed: u64, budget: Budget) -> Result<ToyRun> {
    use crate::config::RunConfig;
    use crate::eval::{evaluate_set, Bucketing};
    use crate::features::global_mean_norm;
    use crate::training::{self, extract_features, Recognizer, Stage};

    let config =
        RunConfig::load(&corpus.config)?.with_overrides(&[("seed".into(), seed.to_string())])?;
    let vocab = config.vocabulary()?;
    let clean_raw = extract_features(&corpus.train()?)?;
    let paired_raw = extract_features(&Manifest::load(&sim.noisy_train)?)?;

    let (m1, s1) = training::pretrain(
        config.clone(),
        vocab.clone(),
        &clean_raw,
        budget.stage1,
        None,
    )?;
    let stage1 = m1.to_checkpoint();
    let (m2, s2) = training::train_noisyd(m1, &paired_raw, budget.stage2, None)?;
    let stage2 = m2.to_checkpoint();

    let mut test_manifests = vec![corpus.test()?];
    for p in &sim.test_sets {
        test_manifests.push(Manifest::load(p)?);
    }
    let mut stage2_distances = Vec::new();
    for m in &test_manifests[1..] {
        for raw in extract_features(m)? {
            let noisy = raw.noisy.as_ref().expect("simulated entries are paired");
            let c = global_mean_norm(&raw.clean, &m2.norm)?;
            let n = global_mean_norm(noisy, &m2.norm)?;
            let reps = crate::eval::visualize::representations(&m2, &c, &n)?;
            stage2_distances.push(reps.standardized_distances());
        }
    }

    let (m3, s3) = training::finetune(m2, &paired_raw, budget.stage3, None)?;
    let stage3 = m3.to_checkpoint();
    let total = budget.stage1 + budget.stage2 + budget.stage3;
    let (mb, sb) = training::train_baseline(config, vocab, &paired_raw, total, None)?;
    let baseline = mb.to_checkpoint();

    let bucketing = Bucketing {
        by_snr: true,
        by_noise: false,
    };
    let noisyd_report = evaluate_set(
        &Recognizer::from_checkpoint(stage3.clone())?,
        &test_manifests,
        bucketing,
        stage3.config_text.clone(),
    )?;
    let baseline_report = evaluate_set(
        &Recognizer::from_checkpoint(baseline.clone())?,
        &test_manifests,
        bucketing,
        baseline.config_text.clone(),
    )?;
    Ok(ToyRun {
        stage1,
        stage2,
        stage3,
        baseline,
        summaries: vec![
            (Stage::Pretrain, s1),
            (Stage::NoisyD, s2),
            (Stage::Finetune, s3),
            (Stage::Baseline, sb),
        ],
        noisyd_report,
        baseline_report,
        stage2_distances,
    })
}
