use std::collections::BTreeSet;

use crate::backbone::Encoder;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::noisyd::{NoisyD, PREFIX as NOISYD_PREFIX};
use crate::numerics::ParamStore;
use crate::rng::derive_rng;
use crate::training::checkpoint::Checkpoint;
use crate::transducer::{TransducerDecoder, Vocabulary};

pub const ENCODER_PREFIX: &str = "encoder";
pub const DECODER_PREFIX: &str = "decoder.";
/// Frozen copy of the stage-1 encoder used from stage 3 on.
pub const BRANCH_PREFIX: &str = "pretrained.encoder";

/// Parameters plus everything needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub norm: NormStats,
    pub params: ParamStore,
    /// Last completed stage (0 for the baseline recipe).
    pub stage: u8,
}

impl Model {
    /// Fresh encoder and decoder parameters.
    pub fn init(config: RunConfig, vocab: Vocabulary, norm: NormStats) -> Result<Self> {
        let mut params = ParamStore::new();
        Encoder::new(ENCODER_PREFIX, config.encoder)
            .init_params(&mut params, &mut derive_rng(config.seed, "init.encoder"));
        TransducerDecoder::new(config.decoder, config.encoder.d_model, vocab.len())
            .init_params(&mut params, &mut derive_rng(config.seed, "init.decoder"));
        Ok(Model {
            config,
            vocab,
            norm,
            params,
            stage: 0,
        })
    }

    pub fn encoder(&self) -> Encoder {
        Encoder::new(ENCODER_PREFIX, self.config.encoder)
    }

    /// Encoder producing the clean reference representation: the forked
    /// copy when present, otherwise the shared encoder weights.
    pub fn branch(&self) -> Encoder {
        if self.has_branch() {
            Encoder::new(BRANCH_PREFIX, self.config.encoder)
        } else {
            self.encoder()
        }
    }

    pub fn has_branch(&self) -> bool {
        self.params
            .count_with_prefix(&format!("{}.", BRANCH_PREFIX))
            > 0
    }

    pub fn has_noisyd(&self) -> bool {
        self.params.count_with_prefix(NOISYD_PREFIX) > 0
    }

    pub fn decoder(&self) -> TransducerDecoder {
        TransducerDecoder::new(
            self.config.decoder,
            self.config.encoder.d_model,
            self.vocab.len(),
        )
    }

    pub fn noisyd(&self) -> Result<NoisyD> {
        NoisyD::new(self.config.noisyd())
    }

    pub fn add_noisyd(&mut self) -> Result<()> {
        if self.has_noisyd() {
            return Err(Error::Training(
                "model already has NoisyD parameters".into(),
            ));
        }
        self.noisyd()?.init_params(
            &mut self.params,
            &mut derive_rng(self.config.seed, "init.noisyd"),
        );
        Ok(())
    }

    /// Copies the encoder into the frozen reference branch.
    pub fn fork_branch(&mut self) {
        self.params.fork_prefix(
            &format!("{}.", ENCODER_PREFIX),
            &format!("{}.", BRANCH_PREFIX),
            false,
        );
    }

    /// Parameter layout (names and shapes) expected after `stage`.
    pub fn expected_layout(
        config: &RunConfig,
        vocab: &Vocabulary,
        stage: u8,
    ) -> Result<ParamStore> {
        let mut m = Model::init(
            config.clone(),
            vocab.clone(),
            NormStats { mean: Vec::new() },
        )?;
        if stage >= 2 {
            m.add_noisyd()?;
        }
        if stage >= 3 {
            m.fork_branch();
        }
        Ok(m.params)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.stage,
            self.config.to_text(),
            self.vocab.clone(),
            self.norm.clone(),
            &self.params,
        )
    }

    /// Restores a model. `config` overrides the stored configuration (for
    /// training hyperparameters); the architecture must still match.
    pub fn from_checkpoint(ckpt: Checkpoint, config: Option<RunConfig>) -> Result<Self> {
        let config = match config {
            Some(c) => c,
            None => RunConfig::parse(&ckpt.config_text)?,
        };
        let expected = Self::expected_layout(&config, &ckpt.vocab, ckpt.stage)?;
        check_layout(&ckpt.params, &expected)?;
        Ok(Model {
            config,
            vocab: ckpt.vocab,
            norm: ckpt.norm,
            params: ckpt.params,
            stage: ckpt.stage,
        })
    }

    /// Rounds parameters to checkpoint precision so that continuing in
    /// memory and reloading from disk are indistinguishable.
    pub fn round_to_storage(&mut self) {
        let ckpt = self.to_checkpoint();
        let trainable: Vec<(String, bool)> = self
            .params
            .iter()
            .map(|(n, p)| (n.clone(), p.trainable))
            .collect();
        self.params = ckpt.params;
        self.norm = ckpt.norm;
        for (n, t) in trainable {
            self.params.get_mut(&n).expect("same names").trainable = t;
        }
    }
}

/// Errors unless `have` matches `expected` in names and shapes.
pub fn check_layout(have: &ParamStore, expected: &ParamStore) -> Result<()> {
    let names: BTreeSet<String> = expected.names().cloned().collect();
    let have_names: BTreeSet<String> = have.names().cloned().collect();
    if names != have_names {
        let missing: Vec<&String> = names.difference(&have_names).collect();
        let unexpected: Vec<&String> = have_names.difference(&names).collect();
        let show = |v: &[&String]| {
            let mut s: Vec<&str> = v.iter().take(8).map(|x| x.as_str()).collect();
            if v.len() > 8 {
                s.push("…");
            }
            s.join(", ")
        };
        return Err(Error::Checkpoint(format!(
            "tensor names do not match the configuration; missing: [{}]; unexpected: [{}]",
            show(&missing),
            show(&unexpected)
        )));
    }
    for (name, p) in expected.iter() {
        let got = have.tensor(name)?.shape();
        if got != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, configuration expects {:?}",
                name,
                got,
                p.value.shape()
            )));
        }
    }
    Ok(())
}
