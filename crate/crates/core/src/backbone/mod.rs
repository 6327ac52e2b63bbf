//! Convolutional subsampling front end followed by a stack of Conformer
//! blocks.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, NUM_MEL_BINS};
use crate::numerics::layers::glu;
use crate::numerics::{init, ParamStore, Session, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub conv_kernel: usize,
    pub dropout: f64,
    /// Length of the learned absolute position table (in subsampled frames).
    pub max_positions: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            num_layers: 4,
            d_model: 128,
            num_heads: 4,
            ffn_dim: 512,
            conv_kernel: 15,
            dropout: 0.1,
            max_positions: 1024,
        }
    }
}

impl BackboneConfig {
    /// 15 layers, 256-wide attention with 4 heads and a 1024-wide FFN.
    pub fn full_size() -> Self {
        BackboneConfig {
            num_layers: 15,
            d_model: 256,
            num_heads: 4,
            ffn_dim: 1024,
            conv_kernel: 31,
            dropout: 0.1,
            max_positions: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(Error::Config(format!(
                "encoder.d_model = {} must be even and positive",
                self.d_model
            )));
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "encoder.d_model = {} is not divisible by encoder.heads = {}",
                self.d_model, self.num_heads
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "encoder.conv_kernel = {} must be odd",
                self.conv_kernel
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("encoder.ffn_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "encoder.dropout = {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Closed-form number of encoder parameters.
    pub fn param_count(&self) -> usize {
        self.feature_encoder_param_count() + self.num_layers * self.block_param_count()
    }

    /// Subsampling convolutions, input projection and position table.
    pub fn feature_encoder_param_count(&self) -> usize {
        let d = self.d_model;
        let c1 = d / 2;
        let f2 = subsample(subsample(NUM_MEL_BINS));
        (c1 * 9 + c1) + (d * c1 * 9 + d) + (d * f2 * d + d) + self.max_positions * d
    }

    /// One Conformer block including its final norm.
    pub fn block_param_count(&self) -> usize {
        let d = self.d_model;
        let norm = 2 * d;
        let ffn = norm + d * self.ffn_dim + self.ffn_dim + self.ffn_dim * d + d;
        let mhsa = norm + 4 * (d * d + d);
        let conv = norm + (d * 2 * d + 2 * d) + (d * self.conv_kernel + d) + norm + (d * d + d);
        2 * ffn + mhsa + conv + norm
    }
}

/// Output length of one stride-2, kernel-3, padding-1 convolution.
pub fn subsample(n: usize) -> usize {
    (n.saturating_sub(1)) / 2 + 1
}

/// Encoder output length for `frames` input frames (4× subsampling).
pub fn subsampled_length(frames: usize) -> usize {
    subsample(subsample(frames))
}

/// Smallest accepted input length.
pub const MIN_FRAMES: usize = 4;

/// Feature encoder plus Conformer stack, with parameters under `prefix`.
#[derive(Debug, Clone)]
pub struct Encoder {
    prefix: String,
    config: BackboneConfig,
}

impl Encoder {
    pub fn new(prefix: impl Into<String>, config: BackboneConfig) -> Self {
        Encoder {
            prefix: prefix.into(),
            config,
        }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{}", self.prefix, suffix)
    }

    fn layer(&self, i: usize, suffix: &str) -> String {
        format!("{}.layers.{}.{}", self.prefix, i, suffix)
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let d = self.config.d_model;
        let c1 = d / 2;
        let f2 = subsample(subsample(NUM_MEL_BINS));
        store.insert(
            self.name("subsample.conv1.weight"),
            init::uniform_fan_in(rng, &[c1, 1, 3, 3], 9),
        );
        store.insert(
            self.name("subsample.conv1.bias"),
            crate::numerics::Tensor::zeros(&[c1]),
        );
        store.insert(
            self.name("subsample.conv2.weight"),
            init::uniform_fan_in(rng, &[d, c1, 3, 3], c1 * 9),
        );
        store.insert(
            self.name("subsample.conv2.bias"),
            crate::numerics::Tensor::zeros(&[d]),
        );
        store.insert(
            self.name("subsample.proj.weight"),
            init::uniform_fan_in(rng, &[d * f2, d], d * f2),
        );
        store.insert(
            self.name("subsample.proj.bias"),
            crate::numerics::Tensor::zeros(&[d]),
        );
        store.insert(
            self.name("pos_emb"),
            init::normal(rng, &[self.config.max_positions, d], 0.02),
        );
        for i in 0..self.config.num_layers {
            self.init_block(store, rng, i);
        }
    }

    fn init_norm(&self, store: &mut ParamStore, name: String) {
        let d = self.config.d_model;
        store.insert(
            format!("{}.gamma", name),
            crate::numerics::Tensor::full(&[d], 1.0),
        );
        store.insert(
            format!("{}.beta", name),
            crate::numerics::Tensor::zeros(&[d]),
        );
    }

    fn init_linear(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: String,
        fan_in: usize,
        fan_out: usize,
    ) {
        store.insert(
            format!("{}.weight", name),
            init::uniform_fan_in(rng, &[fan_in, fan_out], fan_in),
        );
        store.insert(
            format!("{}.bias", name),
            crate::numerics::Tensor::zeros(&[fan_out]),
        );
    }

    fn init_block(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng, i: usize) {
        let d = self.config.d_model;
        let f = self.config.ffn_dim;
        let k = self.config.conv_kernel;
        for ffn in ["ffn1", "ffn2"] {
            self.init_norm(store, self.layer(i, &format!("{}.norm", ffn)));
            Self::init_linear(store, rng, self.layer(i, &format!("{}.w1", ffn)), d, f);
            Self::init_linear(store, rng, self.layer(i, &format!("{}.w2", ffn)), f, d);
        }
        self.init_norm(store, self.layer(i, "mhsa.norm"));
        for proj in ["q", "k", "v", "out"] {
            Self::init_linear(store, rng, self.layer(i, &format!("mhsa.{}", proj)), d, d);
        }
        self.init_norm(store, self.layer(i, "conv.norm"));
        Self::init_linear(store, rng, self.layer(i, "conv.pw1"), d, 2 * d);
        store.insert(
            self.layer(i, "conv.dw.weight"),
            init::uniform_fan_in(rng, &[d, k], k),
        );
        store.insert(
            self.layer(i, "conv.dw.bias"),
            crate::numerics::Tensor::zeros(&[d]),
        );
        self.init_norm(store, self.layer(i, "conv.norm2"));
        Self::init_linear(store, rng, self.layer(i, "conv.pw2"), d, d);
        self.init_norm(store, self.layer(i, "final_norm"));
    }

    /// Two stride-2 convolutions over (time, mel), flatten, linear projection
    /// and learned absolute positions: T×80 → t×d with t = sub(sub(T)).
    pub fn feature_encoder(&self, s: &mut Session, x: &FeatureMatrix) -> Result<Var> {
        if x.frames() < MIN_FRAMES {
            return Err(Error::shape(
                "feature_encoder",
                format!("{} frames, need at least {}", x.frames(), MIN_FRAMES),
            ));
        }
        if x.dims() != NUM_MEL_BINS {
            return Err(Error::shape(
                "feature_encoder",
                format!(
                    "{}-dimensional features, expected {}",
                    x.dims(),
                    NUM_MEL_BINS
                ),
            ));
        }
        let t = subsampled_length(x.frames());
        if t > self.config.max_positions {
            return Err(Error::shape(
                "feature_encoder",
                format!(
                    "{} subsampled frames exceed {} positions",
                    t, self.config.max_positions
                ),
            ));
        }
        let input = s.input(x.to_tensor());
        let w1 = s.param(&self.name("subsample.conv1.weight"))?;
        let b1 = s.param(&self.name("subsample.conv1.bias"))?;
        let w2 = s.param(&self.name("subsample.conv2.weight"))?;
        let b2 = s.param(&self.name("subsample.conv2.bias"))?;
        let pw = s.param(&self.name("subsample.proj.weight"))?;
        let pb = s.param(&self.name("subsample.proj.bias"))?;
        let pos = s.param(&self.name("pos_emb"))?;
        let g = &mut s.graph;
        let y = g.conv2d(input, w1, b1, 2, 1)?;
        let y = g.relu(y);
        let y = g.conv2d(y, w2, b2, 2, 1)?;
        let y = g.relu(y);
        let rows = g.chw_to_rows(y)?;
        let z = g.linear(rows, pw, Some(pb))?;
        let p = g.slice_rows(pos, 0, t)?;
        g.add(z, p)
    }

    fn norm(&self, s: &mut Session, x: Var, name: &str) -> Result<Var> {
        let gamma = s.param(&format!("{}.gamma", name))?;
        let beta = s.param(&format!("{}.beta", name))?;
        s.graph.layer_norm(x, gamma, beta)
    }

    fn linear(&self, s: &mut Session, x: Var, name: &str) -> Result<Var> {
        let w = s.param(&format!("{}.weight", name))?;
        let b = s.param(&format!("{}.bias", name))?;
        s.graph.linear(x, w, Some(b))
    }

    fn ffn(&self, s: &mut Session, i: usize, which: &str, x: Var, train: bool) -> Result<Var> {
        let p = self.config.dropout;
        let y = self.norm(s, x, &self.layer(i, &format!("{}.norm", which)))?;
        let y = self.linear(s, y, &self.layer(i, &format!("{}.w1", which)))?;
        let y = s.graph.silu(y);
        let y = s.dropout(y, p, train)?;
        let y = self.linear(s, y, &self.layer(i, &format!("{}.w2", which)))?;
        s.dropout(y, p, train)
    }

    fn mhsa(&self, s: &mut Session, i: usize, x: Var, train: bool) -> Result<Var> {
        let heads = self.config.num_heads;
        let dk = self.config.d_model / heads;
        let y = self.norm(s, x, &self.layer(i, "mhsa.norm"))?;
        let q = self.linear(s, y, &self.layer(i, "mhsa.q"))?;
        let k = self.linear(s, y, &self.layer(i, "mhsa.k"))?;
        let v = self.linear(s, y, &self.layer(i, "mhsa.v"))?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let g = &mut s.graph;
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax(scores);
            outs.push(g.matmul(attn, vh)?);
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            s.graph.concat_cols(&outs)?
        };
        let o = self.linear(s, cat, &self.layer(i, "mhsa.out"))?;
        s.dropout(o, self.config.dropout, train)
    }

    fn conv_module(&self, s: &mut Session, i: usize, x: Var, train: bool) -> Result<Var> {
        let y = self.norm(s, x, &self.layer(i, "conv.norm"))?;
        let y = self.linear(s, y, &self.layer(i, "conv.pw1"))?;
        let y = glu(&mut s.graph, y)?;
        let w = s.param(&self.layer(i, "conv.dw.weight"))?;
        let b = s.param(&self.layer(i, "conv.dw.bias"))?;
        let y = s.graph.depthwise_conv1d(y, w, b)?;
        let y = self.norm(s, y, &self.layer(i, "conv.norm2"))?;
        let y = s.graph.silu(y);
        let y = self.linear(s, y, &self.layer(i, "conv.pw2"))?;
        s.dropout(y, self.config.dropout, train)
    }

    /// z + ½FFN → + MHSA → + CONV → + ½FFN → LayerNorm.
    pub fn conformer_block(&self, s: &mut Session, i: usize, z: Var, train: bool) -> Result<Var> {
        let f1 = self.ffn(s, i, "ffn1", z, train)?;
        let f1 = s.graph.scale(f1, 0.5);
        let z = s.graph.add(z, f1)?;
        let a = self.mhsa(s, i, z, train)?;
        let z = s.graph.add(z, a)?;
        let c = self.conv_module(s, i, z, train)?;
        let z = s.graph.add(z, c)?;
        let f2 = self.ffn(s, i, "ffn2", z, train)?;
        let f2 = s.graph.scale(f2, 0.5);
        let z = s.graph.add(z, f2)?;
        self.norm(s, z, &self.layer(i, "final_norm"))
    }

    /// h = blockᴹ(…block¹(feature_encoder(x))).
    pub fn encode(&self, s: &mut Session, x: &FeatureMatrix, train: bool) -> Result<Var> {
        let mut h = self.feature_encoder(s, x)?;
        for i in 0..self.config.num_layers {
            h = self.conformer_block(s, i, h, train)?;
        }
        Ok(h)
    }
}
