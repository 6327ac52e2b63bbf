use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

/// Loss weights: μ (CTC), γ (RNN-T), α (consistency), β (reconstruction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mu: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mu: 0.3,
            gamma: 1.0,
            alpha: 0.3,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mu", self.mu),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "loss.{} = {} outside [0, 1]",
                    name, v
                )));
            }
        }
        Ok(())
    }
}

/// μ·L_CTC + γ·L_RNN-T
pub fn conformer_t_loss(ctc: f64, rnnt: f64, w: &LossWeights) -> f64 {
    w.mu * ctc + w.gamma * rnnt
}

/// L_Conformer-T + α·L_CON + β·L_R
pub fn noisyd_ct_loss(conformer_t: f64, l_con: f64, l_r: f64, w: &LossWeights) -> f64 {
    conformer_t + w.alpha * l_con + w.beta * l_r
}

/// Σ wᵢ·xᵢ over scalar nodes, accumulated left to right.
pub fn weighted_sum(graph: &mut Graph, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        let scaled = graph.scale(v, w);
        acc = Some(match acc {
            None => scaled,
            Some(a) => graph.add(a, scaled)?,
        });
    }
    acc.ok_or_else(|| Error::shape("weighted_sum", "no terms"))
}
