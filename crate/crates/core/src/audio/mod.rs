//! WAV I/O, SNR-controlled mixing and noisy-corpus simulation.

pub mod manifest;
pub mod mix;
pub mod simulate;
pub mod wav;

pub use manifest::{read_manifest, write_manifest, Manifest, ManifestEntry, Pairing};
pub use mix::{mix_at_snr, mix_for_storage, snr_db, snr_gain, QuantizedPair};
pub use simulate::{
    simulate_corpus, used_intervals, NoiseFile, NoisePartition, NoisePool, NoiseSegment,
    PartitionRole, SimulatedSet, SimulationOptions, SnrPolicy,
};
pub use wav::{power, read_wav, read_wav_channels, write_wav, AudioClip, SAMPLE_RATE};
