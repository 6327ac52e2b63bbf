//! Noisy-disentanglement module: Encoder-C and Encoder-N split a noisy
//! representation into clean and noise parts, Decoder-CN recombines them.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{init, ParamStore, Session, Tensor, Var};

pub const PREFIX: &str = "noisyd.";
pub const ENCODER_C: &str = "noisyd.encoder_c";
pub const ENCODER_N: &str = "noisyd.encoder_n";
pub const DECODER_CN: &str = "noisyd.decoder_cn";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoisyDConfig {
    pub d_model: usize,
    pub hidden: usize,
}

impl NoisyDConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.hidden == 0 {
            return Err(Error::Config(format!(
                "noisyd widths must be positive (d_model = {}, hidden = {})",
                self.d_model, self.hidden
            )));
        }
        Ok(())
    }

    /// Weights and biases of Encoder-C, Encoder-N and Decoder-CN.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        let (d, h) = (self.d_model, self.hidden);
        Ok(2 * Mlp::count(d, h, d) + Mlp::count(2 * d, h, d))
    }
}

/// Four linear layers, ReLU after the first three and Sigmoid after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    prefix: &'static str,
    input: usize,
    hidden: usize,
    output: usize,
}

impl Mlp {
    pub fn param_count(&self) -> usize {
        Self::count(self.input, self.hidden, self.output)
    }

    fn count(i: usize, h: usize, o: usize) -> usize {
        i * h + h + 2 * (h * h + h) + h * o + o
    }

    fn dims(&self) -> [(usize, usize); 4] {
        let (i, h, o) = (self.input, self.hidden, self.output);
        [(i, h), (h, h), (h, h), (h, o)]
    }

    fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        // He-normal ahead of the ReLUs keeps the input's temporal variation
        // alive through four layers; the sigmoid layer gets unit gain.
        for (k, (fan_in, fan_out)) in self.dims().into_iter().enumerate() {
            let gain = if k < 3 { 2.0 } else { 1.0 };
            let std = (gain / fan_in.max(1) as f64).sqrt();
            store.insert(
                format!("{}.l{}.weight", self.prefix, k + 1),
                init::normal(rng, &[fan_in, fan_out], std),
            );
            store.insert(
                format!("{}.l{}.bias", self.prefix, k + 1),
                Tensor::zeros(&[fan_out]),
            );
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let width = s.graph.value(x).cols();
        if width != self.input {
            return Err(Error::shape(
                self.prefix,
                format!(
                    "input width {} but the first layer expects {}",
                    width, self.input
                ),
            ));
        }
        let mut y = x;
        for k in 1..=4 {
            let w = s.param(&format!("{}.l{}.weight", self.prefix, k))?;
            let b = s.param(&format!("{}.l{}.bias", self.prefix, k))?;
            y = s.graph.linear(y, w, Some(b))?;
            y = if k < 4 {
                s.graph.relu(y)
            } else {
                s.graph.sigmoid(y)
            };
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct NoisyD {
    config: NoisyDConfig,
    pub encoder_c: Mlp,
    pub encoder_n: Mlp,
    pub decoder_cn: Mlp,
}

impl NoisyD {
    pub fn new(config: NoisyDConfig) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.d_model, config.hidden);
        Ok(NoisyD {
            config,
            encoder_c: Mlp {
                prefix: ENCODER_C,
                input: d,
                hidden: h,
                output: d,
            },
            encoder_n: Mlp {
                prefix: ENCODER_N,
                input: d,
                hidden: h,
                output: d,
            },
            decoder_cn: Mlp {
                prefix: DECODER_CN,
                input: 2 * d,
                hidden: h,
                output: d,
            },
        })
    }

    pub fn config(&self) -> &NoisyDConfig {
        &self.config
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.encoder_c.init_params(store, rng);
        self.encoder_n.init_params(store, rng);
        self.decoder_cn.init_params(store, rng);
    }

    pub fn decode_pair(&self, s: &mut Session, clean: Var, noise: Var) -> Result<Var> {
        let (tc, tn) = (s.graph.value(clean).rows(), s.graph.value(noise).rows());
        if tc != tn {
            return Err(Error::shape(
                "decoder_cn",
                format!("clean part has {} frames, noise part {}", tc, tn),
            ));
        }
        let cat = s.graph.concat_cols(&[clean, noise])?;
        self.decoder_cn.forward(s, cat)
    }
}

/// Splits a noisy representation into clean/noise parts and recombines them.
/// The training stages only see this interface, so a pass-through stand-in
/// can replace the learned module.
pub trait Disentangler {
    fn clean(&self, s: &mut Session, h_noisy: Var) -> Result<Var>;
    fn noise(&self, s: &mut Session, h_noisy: Var) -> Result<Var>;
    fn reconstruct(&self, s: &mut Session, clean: Var, noise: Var) -> Result<Var>;
}

impl Disentangler for NoisyD {
    fn clean(&self, s: &mut Session, h: Var) -> Result<Var> {
        self.encoder_c.forward(s, h)
    }

    fn noise(&self, s: &mut Session, h: Var) -> Result<Var> {
        self.encoder_n.forward(s, h)
    }

    fn reconstruct(&self, s: &mut Session, clean: Var, noise: Var) -> Result<Var> {
        self.decode_pair(s, clean, noise)
    }
}

/// Passes the representation through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDisentangler;

impl Disentangler for IdentityDisentangler {
    fn clean(&self, _s: &mut Session, h: Var) -> Result<Var> {
        Ok(h)
    }

    fn noise(&self, _s: &mut Session, h: Var) -> Result<Var> {
        Ok(h)
    }

    fn reconstruct(&self, _s: &mut Session, clean: Var, _noise: Var) -> Result<Var> {
        Ok(clean)
    }
}

/// Consistency loss: element-mean squared distance between the clean
/// representation and the extracted clean part.
pub fn l_con(s: &mut Session, h_t: Var, h_clean: Var) -> Result<Var> {
    s.graph.mse(h_t, h_clean)
}

/// Reconstruction loss between the recombined and the original noisy
/// representation.
pub fn l_r(s: &mut Session, h_hat: Var, h_noisy: Var) -> Result<Var> {
    s.graph.mse(h_hat, h_noisy)
}
