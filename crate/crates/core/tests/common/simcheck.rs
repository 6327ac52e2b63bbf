//! SNR recomputation from emitted waveforms.

use std::path::Path;

use noisyd_ct::audio::{
    power, read_wav, simulate_corpus, snr_db, Manifest, NoisePool, PartitionRole,
    SimulationOptions, SnrPolicy,
};
use noisyd_ct::toy::{self, ToyCorpus, ToySizes};

pub fn small_corpus(root: &Path, seed: u64) -> ToyCorpus {
    let sizes = ToySizes {
        train_utterances: 25,
        test_utterances: 10,
        noise_seconds: 20.0,
    };
    toy::write_corpus(root, seed, sizes).unwrap()
}

/// Simulates the training split once per seed with SNRs drawn from
/// [−5, 15] dB and returns (target, recomputed) for every mix.
pub fn recomputed_snrs(
    corpus: &ToyCorpus,
    out: &Path,
    seeds: std::ops::Range<u64>,
) -> Vec<(f64, f64)> {
    let pool = NoisePool::load(&corpus.noise_dir, 0.2).unwrap();
    let train = corpus.train().unwrap();
    let mut pairs = Vec::new();
    for seed in seeds {
        let dir = out.join(format!("s{}", seed));
        let sets = simulate_corpus(
            &train,
            &pool.partition(PartitionRole::Train),
            PartitionRole::Train,
            &SimulationOptions {
                snr: SnrPolicy::Uniform {
                    min: -5.0,
                    max: 15.0,
                },
                seed,
                allow_loop: false,
            },
            &dir,
        )
        .unwrap();
        let m = Manifest {
            base_dir: dir.clone(),
            entries: sets[0].entries.clone(),
        };
        for e in &m.entries {
            let p = e.pairing.as_ref().unwrap();
            let noisy = read_wav(m.resolve(&e.audio_path), None).unwrap().samples;
            let clean = read_wav(m.resolve(&p.clean_path), None).unwrap().samples;
            let residual: Vec<f64> = noisy.iter().zip(&clean).map(|(n, c)| n - c).collect();
            pairs.push((p.snr_db, snr_db(power(&clean), power(&residual))));
        }
    }
    pairs
}
