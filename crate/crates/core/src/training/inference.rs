use crate::audio::AudioClip;
use crate::backbone::Encoder;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::{global_mean_norm, log_mel, FeatureMatrix, NormStats};
use crate::noisyd::{Mlp, NoisyD, ENCODER_C};
use crate::numerics::{ParamStore, Session};
use crate::training::checkpoint::Checkpoint;
use crate::training::model::{DECODER_PREFIX, ENCODER_PREFIX};
use crate::transducer::{TransducerDecoder, Vocabulary};

/// Deployment model: encoder, Encoder-C when present, and the transducer
/// decoder. Encoder-N, Decoder-CN and the reference branch are dropped on
/// load.
#[derive(Debug, Clone)]
pub struct Recognizer {
    encoder: Encoder,
    encoder_c: Option<Mlp>,
    decoder: TransducerDecoder,
    params: ParamStore,
    norm: NormStats,
    vocab: Vocabulary,
    max_symbols: usize,
}

impl Recognizer {
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let config = RunConfig::parse(&ckpt.config_text)?;
        let keep = |n: &str| {
            n.starts_with(&format!("{}.", ENCODER_PREFIX))
                || n.starts_with(DECODER_PREFIX)
                || n.starts_with(&format!("{}.", ENCODER_C))
        };
        let mut params = ParamStore::new();
        for (name, p) in ckpt.params.iter().filter(|(n, _)| keep(n)) {
            params.insert(name.clone(), p.value.clone());
        }
        params.freeze_all();
        let has_c = params.count_with_prefix(&format!("{}.", ENCODER_C)) > 0;
        if ckpt.stage >= 2 && !has_c {
            return Err(Error::Inference(format!(
                "stage-{} checkpoint has no {} tensors",
                ckpt.stage, ENCODER_C
            )));
        }
        let encoder_c = if has_c {
            Some(NoisyD::new(config.noisyd())?.encoder_c)
        } else {
            None
        };
        Ok(Recognizer {
            encoder: Encoder::new(ENCODER_PREFIX, config.encoder),
            encoder_c,
            decoder: TransducerDecoder::new(
                config.decoder,
                config.encoder.d_model,
                ckpt.vocab.len(),
            ),
            params,
            norm: ckpt.norm,
            vocab: ckpt.vocab,
            max_symbols: config.max_symbols_per_frame,
        })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    /// Names of every tensor held in memory.
    pub fn resident_tensors(&self) -> Vec<String> {
        self.params.names().cloned().collect()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    /// Token ids for normalized features.
    pub fn decode_normalized(&self, feats: &FeatureMatrix) -> Result<Vec<usize>> {
        let mut s = Session::inference(&self.params);
        let mut h = self.encoder.encode(&mut s, feats, false)?;
        if let Some(c) = &self.encoder_c {
            h = c.forward(&mut s, h)?;
        }
        let h = s.graph.value(h).clone();
        self.decoder
            .greedy_decode(&self.params, &h, self.max_symbols)
    }

    /// Transcript for raw log-mel features.
    pub fn transcribe_features(&self, raw: &FeatureMatrix) -> Result<String> {
        let feats = global_mean_norm(raw, &self.norm)?;
        Ok(self.vocab.decode(&self.decode_normalized(&feats)?))
    }

    pub fn transcribe(&self, clip: &AudioClip) -> Result<String> {
        self.transcribe_features(&log_mel(clip)?)
    }
}
