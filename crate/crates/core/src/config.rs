//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Every key has a default; unknown
//! keys are rejected. [`RunConfig::to_text`] renders the effective
//! configuration, which is embedded in every checkpoint and report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::features::SpecAugmentPolicy;
use crate::losses::LossWeights;
use crate::noisyd::NoisyDConfig;
use crate::transducer::{DecoderConfig, Vocabulary};

/// (key, default, description)
pub const KEYS: &[(&str, &str, &str)] = &[
    ("encoder.layers", "4", "number of Conformer blocks"),
    ("encoder.d_model", "128", "model width"),
    ("encoder.heads", "4", "attention heads"),
    ("encoder.ffn_dim", "512", "feed-forward inner width"),
    (
        "encoder.conv_kernel",
        "15",
        "depthwise convolution kernel (odd)",
    ),
    ("encoder.dropout", "0.1", "dropout rate inside the encoder"),
    (
        "encoder.max_positions",
        "1024",
        "length of the learned position table",
    ),
    (
        "decoder.embed_dim",
        "128",
        "prediction-network embedding width",
    ),
    ("decoder.hidden", "128", "prediction-network LSTM width"),
    ("decoder.joint_dim", "128", "joint-network width"),
    (
        "noisyd.hidden",
        "auto",
        "NoisyD inner width; auto = encoder.d_model",
    ),
    ("loss.mu", "0.3", "CTC weight"),
    ("loss.gamma", "1", "transducer weight"),
    ("loss.alpha", "0.3", "consistency weight"),
    ("loss.beta", "1", "reconstruction weight"),
    ("train.peak_lr", "0.001", "peak learning rate"),
    ("train.warmup_steps", "1000", "linear warmup length"),
    ("train.batch_size", "8", "utterances per step"),
    ("train.steps", "1000", "optimizer steps per stage"),
    (
        "train.grad_clip",
        "5",
        "global gradient-norm clip; 0 disables",
    ),
    ("train.adam_beta1", "0.9", "first-moment decay"),
    ("train.adam_beta2", "0.98", "second-moment decay"),
    ("train.adam_eps", "1e-9", "denominator epsilon"),
    ("specaug.time_masks", "2", "time masks per utterance"),
    (
        "specaug.max_time_width",
        "40",
        "maximum time-mask width (frames)",
    ),
    ("specaug.freq_masks", "2", "frequency masks per utterance"),
    (
        "specaug.max_freq_width",
        "27",
        "maximum frequency-mask width (bins)",
    ),
    (
        "decode.max_symbols_per_frame",
        "10",
        "greedy-search emission cap",
    ),
    ("vocab.path", "", "token<TAB>id table; empty = characters"),
    ("seed", "0", "base seed for every random stream"),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub grad_clip: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub encoder: BackboneConfig,
    pub decoder: DecoderConfig,
    pub noisyd_hidden: usize,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub specaug: SpecAugmentPolicy,
    pub max_symbols_per_frame: usize,
    /// Resolved against the config file's directory.
    pub vocab_path: Option<PathBuf>,
    /// `vocab.path` as written, echoed by [`RunConfig::to_text`].
    pub vocab_path_text: String,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_map(&BTreeMap::new(), None).expect("defaults are valid")
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{} = {:?} is not a valid number", key, v)))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_base(text, None)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_with_base(&text, path.parent())
    }

    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse_with_base(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {:?}",
                    n + 1,
                    raw
                ))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.iter().any(|(key, _, _)| *key == k) {
                return Err(Error::Config(format!(
                    "line {}: unknown key {:?}",
                    n + 1,
                    k
                )));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {:?}",
                    n + 1,
                    k
                )));
            }
        }
        Self::from_map(&map, base)
    }

    /// Applies `key=value` overrides on top of this configuration.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut text = self.to_text();
        for (k, v) in overrides {
            text = text
                .lines()
                .filter(|l| l.split('=').next().map(str::trim) != Some(k.as_str()))
                .map(|l| format!("{}\n", l))
                .collect();
            text.push_str(&format!("{} = {}\n", k, v));
        }
        let mut out = Self::parse(&text)?;
        if out.vocab_path_text == self.vocab_path_text {
            out.vocab_path = self.vocab_path.clone();
        }
        Ok(out)
    }

    fn from_map(map: &BTreeMap<String, String>, base: Option<&Path>) -> Result<Self> {
        let get = |key: &str| -> String {
            map.get(key).cloned().unwrap_or_else(|| {
                KEYS.iter()
                    .find(|(k, _, _)| *k == key)
                    .map(|(_, d, _)| d.to_string())
                    .expect("known key")
            })
        };
        let encoder = BackboneConfig {
            num_layers: parse_num("encoder.layers", &get("encoder.layers"))?,
            d_model: parse_num("encoder.d_model", &get("encoder.d_model"))?,
            num_heads: parse_num("encoder.heads", &get("encoder.heads"))?,
            ffn_dim: parse_num("encoder.ffn_dim", &get("encoder.ffn_dim"))?,
            conv_kernel: parse_num("encoder.conv_kernel", &get("encoder.conv_kernel"))?,
            dropout: parse_num("encoder.dropout", &get("encoder.dropout"))?,
            max_positions: parse_num("encoder.max_positions", &get("encoder.max_positions"))?,
        };
        encoder.validate()?;
        let decoder = DecoderConfig {
            embed_dim: parse_num("decoder.embed_dim", &get("decoder.embed_dim"))?,
            hidden: parse_num("decoder.hidden", &get("decoder.hidden"))?,
            joint_dim: parse_num("decoder.joint_dim", &get("decoder.joint_dim"))?,
        };
        decoder.validate()?;
        let hidden = get("noisyd.hidden");
        let noisyd_hidden = if hidden == "auto" {
            encoder.d_model
        } else {
            parse_num("noisyd.hidden", &hidden)?
        };
        NoisyDConfig {
            d_model: encoder.d_model,
            hidden: noisyd_hidden,
        }
        .validate()?;
        let loss = LossWeights {
            mu: parse_num("loss.mu", &get("loss.mu"))?,
            gamma: parse_num("loss.gamma", &get("loss.gamma"))?,
            alpha: parse_num("loss.alpha", &get("loss.alpha"))?,
            beta: parse_num("loss.beta", &get("loss.beta"))?,
        };
        loss.validate()?;
        let train = TrainConfig {
            peak_lr: parse_num("train.peak_lr", &get("train.peak_lr"))?,
            warmup_steps: parse_num("train.warmup_steps", &get("train.warmup_steps"))?,
            batch_size: parse_num("train.batch_size", &get("train.batch_size"))?,
            steps: parse_num("train.steps", &get("train.steps"))?,
            grad_clip: parse_num("train.grad_clip", &get("train.grad_clip"))?,
            adam_beta1: parse_num("train.adam_beta1", &get("train.adam_beta1"))?,
            adam_beta2: parse_num("train.adam_beta2", &get("train.adam_beta2"))?,
            adam_eps: parse_num("train.adam_eps", &get("train.adam_eps"))?,
        };
        if train.warmup_steps == 0 {
            return Err(Error::Config(
                "train.warmup_steps must be at least 1".into(),
            ));
        }
        if train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(train.peak_lr > 0.0) || train.grad_clip < 0.0 {
            return Err(Error::Config(
                "train.peak_lr must be positive and train.grad_clip non-negative".into(),
            ));
        }
        let specaug = SpecAugmentPolicy {
            num_time_masks: parse_num("specaug.time_masks", &get("specaug.time_masks"))?,
            max_time_width: parse_num("specaug.max_time_width", &get("specaug.max_time_width"))?,
            num_freq_masks: parse_num("specaug.freq_masks", &get("specaug.freq_masks"))?,
            max_freq_width: parse_num("specaug.max_freq_width", &get("specaug.max_freq_width"))?,
        };
        let max_symbols_per_frame = parse_num(
            "decode.max_symbols_per_frame",
            &get("decode.max_symbols_per_frame"),
        )?;
        if max_symbols_per_frame == 0 {
            return Err(Error::Config(
                "decode.max_symbols_per_frame must be at least 1".into(),
            ));
        }
        let vp = get("vocab.path");
        let vocab_path = if vp.is_empty() {
            None
        } else {
            let p = PathBuf::from(&vp);
            Some(match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            })
        };
        Ok(RunConfig {
            encoder,
            decoder,
            noisyd_hidden,
            loss,
            train,
            specaug,
            max_symbols_per_frame,
            vocab_path,
            vocab_path_text: vp,
            seed: parse_num("seed", &get("seed"))?,
        })
    }

    pub fn noisyd(&self) -> NoisyDConfig {
        NoisyDConfig {
            d_model: self.encoder.d_model,
            hidden: self.noisyd_hidden,
        }
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        match &self.vocab_path {
            Some(p) => Vocabulary::load(p),
            None => Ok(Vocabulary::characters()),
        }
    }

    /// Every key with its effective value, in table order.
    pub fn to_text(&self) -> String {
        let e = &self.encoder;
        let values: Vec<String> = vec![
            e.num_layers.to_string(),
            e.d_model.to_string(),
            e.num_heads.to_string(),
            e.ffn_dim.to_string(),
            e.conv_kernel.to_string(),
            e.dropout.to_string(),
            e.max_positions.to_string(),
            self.decoder.embed_dim.to_string(),
            self.decoder.hidden.to_string(),
            self.decoder.joint_dim.to_string(),
            self.noisyd_hidden.to_string(),
            self.loss.mu.to_string(),
            self.loss.gamma.to_string(),
            self.loss.alpha.to_string(),
            self.loss.beta.to_string(),
            self.train.peak_lr.to_string(),
            self.train.warmup_steps.to_string(),
            self.train.batch_size.to_string(),
            self.train.steps.to_string(),
            self.train.grad_clip.to_string(),
            self.train.adam_beta1.to_string(),
            self.train.adam_beta2.to_string(),
            self.train.adam_eps.to_string(),
            self.specaug.num_time_masks.to_string(),
            self.specaug.max_time_width.to_string(),
            self.specaug.num_freq_masks.to_string(),
            self.specaug.max_freq_width.to_string(),
            self.max_symbols_per_frame.to_string(),
            self.vocab_path_text.clone(),
            self.seed.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|((k, _, _), v)| format!("{} = {}\n", k, v))
            .collect()
    }

    /// Key/description listing for help output.
    pub fn describe() -> String {
        KEYS.iter()
            .map(|(k, d, doc)| {
                format!(
                    "{:<30} {:<8} {}\n",
                    k,
                    if d.is_empty() { "\"\"" } else { d },
                    doc
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(c.noisyd_hidden, c.encoder.d_model);
        assert_eq!(c.loss, LossWeights::default());
    }

    #[test]
    fn comments_and_overrides() {
        let c =
            RunConfig::parse("# toy\nencoder.d_model = 32 # narrow\nnoisyd.hidden=400\n").unwrap();
        assert_eq!(c.encoder.d_model, 32);
        assert_eq!(c.noisyd_hidden, 400);
        let d = c.with_overrides(&[("seed".into(), "7".into())]).unwrap();
        assert_eq!(d.seed, 7);
        assert_eq!(d.encoder.d_model, 32);
    }

    #[test]
    fn rejections() {
        assert!(RunConfig::parse("encoder.colour = red\n").is_err());
        assert!(RunConfig::parse("encoder.heads = 3\n").is_err());
        assert!(RunConfig::parse("loss.alpha = 2\n").is_err());
        assert!(RunConfig::parse("noisyd.hidden = 0\n").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("just words\n").is_err());
    }
}
