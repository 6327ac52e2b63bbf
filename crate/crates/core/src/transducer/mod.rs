//! Transducer decoder: LSTM prediction network, additive joint network,
//! auxiliary CTC head and greedy search.

pub mod vocab;

use rand_chacha::ChaCha8Rng;

pub use vocab::{Vocabulary, BLANK};

use crate::error::{Error, Result};
use crate::numerics::layers::lstm_step;
use crate::numerics::{init, ParamStore, Session, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub joint_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            embed_dim: 128,
            hidden: 128,
            joint_dim: 128,
        }
    }
}

impl DecoderConfig {
    pub fn full_size() -> Self {
        DecoderConfig {
            embed_dim: 256,
            hidden: 320,
            joint_dim: 320,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 || self.joint_dim == 0 {
            return Err(Error::Config("decoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Prediction network, joint network and CTC head with parameters under
/// `decoder.`.
#[derive(Debug, Clone)]
pub struct TransducerDecoder {
    config: DecoderConfig,
    d_model: usize,
    vocab_size: usize,
}

impl TransducerDecoder {
    pub fn new(config: DecoderConfig, d_model: usize, vocab_size: usize) -> Self {
        TransducerDecoder {
            config,
            d_model,
            vocab_size,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn param_count(&self) -> usize {
        let (e, h, j, d, v) = (
            self.config.embed_dim,
            self.config.hidden,
            self.config.joint_dim,
            self.d_model,
            self.vocab_size,
        );
        v * e + e * 4 * h + h * 4 * h + 4 * h + d * j + h * j + j + j * v + d * v + v
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let (e, h, j, d, v) = (
            self.config.embed_dim,
            self.config.hidden,
            self.config.joint_dim,
            self.d_model,
            self.vocab_size,
        );
        store.insert(
            "decoder.embed.weight",
            init::normal(rng, &[v, e], 1.0 / (e as f64).sqrt()),
        );
        store.insert(
            "decoder.lstm.w_ih",
            init::uniform_fan_in(rng, &[e, 4 * h], h),
        );
        store.insert(
            "decoder.lstm.w_hh",
            init::uniform_fan_in(rng, &[h, 4 * h], h),
        );
        store.insert("decoder.lstm.bias", Tensor::zeros(&[4 * h]));
        store.insert(
            "decoder.joint.enc.weight",
            init::uniform_fan_in(rng, &[d, j], d),
        );
        store.insert(
            "decoder.joint.pred.weight",
            init::uniform_fan_in(rng, &[h, j], h),
        );
        store.insert("decoder.joint.bias", Tensor::zeros(&[j]));
        store.insert(
            "decoder.joint.out.weight",
            init::uniform_fan_in(rng, &[j, v], j),
        );
        store.insert("decoder.ctc.weight", init::uniform_fan_in(rng, &[d, v], d));
        store.insert("decoder.ctc.bias", Tensor::zeros(&[v]));
    }

    fn check_target(&self, target: &[usize]) -> Result<()> {
        if let Some(&bad) = target.iter().find(|&&y| y == BLANK || y >= self.vocab_size) {
            return Err(Error::shape(
                "prediction network",
                format!(
                    "target id {} is blank or outside a vocabulary of {}",
                    bad, self.vocab_size
                ),
            ));
        }
        Ok(())
    }

    /// Prediction-network states h_u for u = 0..=U; row 0 is conditioned on
    /// the start symbol only. Output (U+1)×H.
    pub fn predict(&self, s: &mut Session, target: &[usize]) -> Result<Var> {
        self.check_target(target)?;
        let hidden = self.config.hidden;
        let embed = s.param("decoder.embed.weight")?;
        let w_ih = s.param("decoder.lstm.w_ih")?;
        let w_hh = s.param("decoder.lstm.w_hh")?;
        let b = s.param("decoder.lstm.bias")?;
        let ids: Vec<Option<usize>> = std::iter::once(None)
            .chain(target.iter().map(|&y| Some(y)))
            .collect();
        let g = &mut s.graph;
        let emb = g.gather_rows(embed, &ids)?;
        let xp = g.linear(emb, w_ih, Some(b))?;
        let mut h = g.constant(Tensor::zeros(&[1, hidden]));
        let mut c = g.constant(Tensor::zeros(&[1, hidden]));
        let mut outs = Vec::with_capacity(ids.len());
        for u in 0..ids.len() {
            let x = g.slice_rows(xp, u, 1)?;
            let (hn, cn) = lstm_step(g, x, h, c, w_hh)?;
            outs.push(hn);
            h = hn;
            c = cn;
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            g.concat_rows(&outs)
        }
    }

    /// Log-probability lattice over (t, u): row t·(U+1)+u holds
    /// log_softmax(W_out · tanh(W_enc h_t + W_pred h_u + b)).
    pub fn joint(&self, s: &mut Session, enc: Var, pred: Var) -> Result<Var> {
        let we = s.param("decoder.joint.enc.weight")?;
        let wp = s.param("decoder.joint.pred.weight")?;
        let b = s.param("decoder.joint.bias")?;
        let wo = s.param("decoder.joint.out.weight")?;
        let g = &mut s.graph;
        let a = g.matmul(enc, we)?;
        let p = g.linear(pred, wp, Some(b))?;
        let sum = g.outer_add(a, p)?;
        let act = g.tanh(sum);
        let logits = g.matmul(act, wo)?;
        Ok(g.log_softmax(logits))
    }

    /// Frame-level CTC log-probabilities, t×V.
    pub fn ctc_logprobs(&self, s: &mut Session, enc: Var) -> Result<Var> {
        let w = s.param("decoder.ctc.weight")?;
        let b = s.param("decoder.ctc.bias")?;
        let logits = s.graph.linear(enc, w, Some(b))?;
        Ok(s.graph.log_softmax(logits))
    }

    /// Greedy transducer search over encoder outputs `enc` (t×d).
    pub fn greedy_decode(
        &self,
        store: &ParamStore,
        enc: &Tensor,
        max_symbols: usize,
    ) -> Result<Vec<usize>> {
        let mut scorer = DecoderScorer::new(self, store, enc)?;
        greedy_search(&mut scorer, enc.rows(), BLANK, max_symbols)
    }
}

/// Scores for one decoding step, abstracted so the search can be exercised
/// against hand-built lattices.
pub trait StepScorer {
    type State: Clone;
    fn initial(&mut self) -> Result<Self::State>;
    /// Log-probabilities over the vocabulary at frame `t` given `state`.
    fn scores(&mut self, t: usize, state: &Self::State) -> Result<Vec<f64>>;
    fn advance(&mut self, state: &Self::State, token: usize) -> Result<Self::State>;
}

/// At each frame, emit the argmax symbol until blank wins or `max_symbols`
/// symbols have been emitted, then move to the next frame.
pub fn greedy_search<S: StepScorer>(
    scorer: &mut S,
    frames: usize,
    blank: usize,
    max_symbols: usize,
) -> Result<Vec<usize>> {
    let mut state = scorer.initial()?;
    let mut out = Vec::new();
    for t in 0..frames {
        for _ in 0..max_symbols {
            let scores = scorer.scores(t, &state)?;
            let best = argmax(&scores);
            if best == blank {
                break;
            }
            out.push(best);
            state = scorer.advance(&state, best)?;
        }
    }
    Ok(out)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Plain-arithmetic mirror of [`TransducerDecoder::predict`] and
/// [`TransducerDecoder::joint`] for step-wise search.
pub struct DecoderScorer<'a> {
    store: &'a ParamStore,
    enc_proj: Vec<f64>,
    joint_dim: usize,
    hidden: usize,
    vocab: usize,
}

#[derive(Debug, Clone)]
pub struct PredState {
    h: Vec<f64>,
    c: Vec<f64>,
    /// W_pred h + b, reused across frames until the next emission.
    proj: Vec<f64>,
}

fn vec_mat(x: &[f64], w: &Tensor, out: &mut [f64]) {
    let cols = w.cols();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w.data()[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'a> DecoderScorer<'a> {
    pub fn new(dec: &TransducerDecoder, store: &'a ParamStore, enc: &Tensor) -> Result<Self> {
        let we = store.tensor("decoder.joint.enc.weight")?;
        if enc.cols() != we.rows() {
            return Err(Error::shape(
                "greedy_decode",
                format!("encoder width {} vs joint input {}", enc.cols(), we.rows()),
            ));
        }
        let j = dec.config.joint_dim;
        let mut enc_proj = vec![0.0; enc.rows() * j];
        for t in 0..enc.rows() {
            vec_mat(enc.row(t), we, &mut enc_proj[t * j..(t + 1) * j]);
        }
        Ok(DecoderScorer {
            store,
            enc_proj,
            joint_dim: j,
            hidden: dec.config.hidden,
            vocab: dec.vocab_size,
        })
    }

    fn step(&self, token: Option<usize>, h: &[f64], c: &[f64]) -> Result<PredState> {
        let hd = self.hidden;
        let w_ih = self.store.tensor("decoder.lstm.w_ih")?;
        let w_hh = self.store.tensor("decoder.lstm.w_hh")?;
        let mut gates = self.store.tensor("decoder.lstm.bias")?.data().to_vec();
        if let Some(tok) = token {
            let embed = self.store.tensor("decoder.embed.weight")?;
            vec_mat(embed.row(tok), w_ih, &mut gates);
        }
        vec_mat(h, w_hh, &mut gates);
        let mut hn = vec![0.0; hd];
        let mut cn = vec![0.0; hd];
        for k in 0..hd {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[hd + k]);
            let g = gates[2 * hd + k].tanh();
            let o = sigmoid(gates[3 * hd + k]);
            cn[k] = f * c[k] + i * g;
            hn[k] = o * cn[k].tanh();
        }
        let mut proj = self.store.tensor("decoder.joint.bias")?.data().to_vec();
        vec_mat(
            &hn,
            self.store.tensor("decoder.joint.pred.weight")?,
            &mut proj,
        );
        Ok(PredState { h: hn, c: cn, proj })
    }
}

impl StepScorer for DecoderScorer<'_> {
    type State = PredState;

    fn initial(&mut self) -> Result<PredState> {
        let zeros = vec![0.0; self.hidden];
        self.step(None, &zeros, &zeros)
    }

    fn scores(&mut self, t: usize, state: &PredState) -> Result<Vec<f64>> {
        let j = self.joint_dim;
        let act: Vec<f64> = self.enc_proj[t * j..(t + 1) * j]
            .iter()
            .zip(&state.proj)
            .map(|(a, b)| (a + b).tanh())
            .collect();
        let mut logits = vec![0.0; self.vocab];
        vec_mat(
            &act,
            self.store.tensor("decoder.joint.out.weight")?,
            &mut logits,
        );
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        Ok(logits.into_iter().map(|x| x - lse).collect())
    }

    fn advance(&mut self, state: &PredState, token: usize) -> Result<PredState> {
        self.step(Some(token), &state.h, &state.c)
    }
}
