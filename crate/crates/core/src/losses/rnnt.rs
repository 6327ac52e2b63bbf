use crate::error::{Error, Result};
use crate::losses::log_add;
use crate::numerics::{Graph, Var};

/// −log P(y|x) summed over all transducer alignments, with the gradient with
/// respect to the lattice. `lattice` is row-major with row `t·(U+1) + u`
/// holding the |V| log-probabilities at grid point (t, u).
pub fn rnnt_forward_backward(
    lattice: &[f64],
    frames: usize,
    vocab: usize,
    target: &[usize],
    blank: usize,
) -> Result<(f64, Vec<f64>)> {
    let u1 = target.len() + 1;
    if frames == 0 || lattice.len() != frames * u1 * vocab {
        return Err(Error::shape(
            "rnnt_loss",
            format!(
                "lattice of {} values does not match t={} × (U+1)={} × |V|={}",
                lattice.len(),
                frames,
                u1,
                vocab
            ),
        ));
    }
    if let Some(&bad) = target.iter().find(|&&y| y == blank || y >= vocab) {
        return Err(Error::shape(
            "rnnt_loss",
            format!("target token {} invalid", bad),
        ));
    }
    let at = |t: usize, u: usize, k: usize| lattice[(t * u1 + u) * vocab + k];
    let blank_lp = |t: usize, u: usize| at(t, u, blank);
    let emit_lp = |t: usize, u: usize| at(t, u, target[u]);
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; frames * u1];
    alpha[0] = 0.0;
    for t in 0..frames {
        for u in 0..u1 {
            if t == 0 && u == 0 {
                continue;
            }
            let mut a = neg;
            if t > 0 {
                a = alpha[(t - 1) * u1 + u] + blank_lp(t - 1, u);
            }
            if u > 0 {
                a = log_add(a, alpha[t * u1 + u - 1] + emit_lp(t, u - 1));
            }
            alpha[t * u1 + u] = a;
        }
    }
    let log_p = alpha[(frames - 1) * u1 + u1 - 1] + blank_lp(frames - 1, u1 - 1);

    let mut beta = vec![neg; frames * u1];
    beta[(frames - 1) * u1 + u1 - 1] = blank_lp(frames - 1, u1 - 1);
    for t in (0..frames).rev() {
        for u in (0..u1).rev() {
            if t == frames - 1 && u == u1 - 1 {
                continue;
            }
            let mut b = neg;
            if t + 1 < frames {
                b = beta[(t + 1) * u1 + u] + blank_lp(t, u);
            }
            if u + 1 < u1 {
                b = log_add(b, beta[t * u1 + u + 1] + emit_lp(t, u));
            }
            beta[t * u1 + u] = b;
        }
    }

    let mut grad = vec![0.0; lattice.len()];
    for t in 0..frames {
        for u in 0..u1 {
            let a = alpha[t * u1 + u];
            let next_blank = if t + 1 < frames {
                beta[(t + 1) * u1 + u]
            } else if u == u1 - 1 {
                0.0
            } else {
                neg
            };
            let occ_blank = a + blank_lp(t, u) + next_blank - log_p;
            if occ_blank > neg {
                grad[(t * u1 + u) * vocab + blank] = -occ_blank.exp();
            }
            if u + 1 < u1 {
                let occ = a + emit_lp(t, u) + beta[t * u1 + u + 1] - log_p;
                if occ > neg {
                    grad[(t * u1 + u) * vocab + target[u]] = -occ.exp();
                }
            }
        }
    }
    Ok((-log_p, grad))
}

/// RNN-T loss node over a joint lattice of shape (t·(U+1)) × |V|.
pub fn rnnt_loss(
    graph: &mut Graph,
    lattice: Var,
    frames: usize,
    target: &[usize],
    blank: usize,
) -> Result<Var> {
    let lv = graph.value(lattice);
    if lv.rank() != 2 || lv.shape()[0] != frames * (target.len() + 1) {
        return Err(Error::shape(
            "rnnt_loss",
            format!(
                "lattice {:?} does not have t·(U+1) = {}·{} rows",
                lv.shape(),
                frames,
                target.len() + 1
            ),
        ));
    }
    let vocab = lv.shape()[1];
    let (loss, grad) = rnnt_forward_backward(lv.data(), frames, vocab, target, blank)?;
    graph.scalar_fn(lattice, loss, grad)
}
