use crate::error::{Error, Result};
use crate::losses::log_add;
use crate::numerics::{Graph, Tensor, Var};

/// Result of a CTC evaluation. A target that cannot be aligned to the
/// available frames yields `NoPath` instead of an infinite loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CtcOutcome {
    Loss(Var),
    NoPath,
}

fn check_target(target: &[usize], vocab: usize, blank: usize) -> Result<()> {
    for &y in target {
        if y == blank || y >= vocab {
            return Err(Error::shape(
                "ctc_loss",
                format!(
                    "target token {} invalid for vocabulary of {} with blank {}",
                    y, vocab, blank
                ),
            ));
        }
    }
    Ok(())
}

/// Minimum frames needed to emit `target`: one per label plus one blank
/// between each pair of identical neighbours.
fn required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// −log Σ_π P(π|x) over blank-augmented alignments and its gradient with
/// respect to the t×V log-probabilities. `None` when no path exists.
pub fn ctc_forward_backward(
    logprobs: &Tensor,
    target: &[usize],
    blank: usize,
) -> Result<Option<(f64, Vec<f64>)>> {
    if logprobs.rank() != 2 {
        return Err(Error::shape(
            "ctc_loss",
            format!("expected t×V, got {:?}", logprobs.shape()),
        ));
    }
    let (t_len, v) = (logprobs.shape()[0], logprobs.shape()[1]);
    if blank >= v {
        return Err(Error::shape(
            "ctc_loss",
            format!("blank {} outside vocabulary of {}", blank, v),
        ));
    }
    check_target(target, v, blank)?;
    if t_len == 0 || required_frames(target) > t_len {
        return Ok(None);
    }
    let lp = |t: usize, k: usize| logprobs.data()[t * v + k];
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &y in target {
        ext.push(y);
        ext.push(blank);
    }
    let s_len = ext.len();
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; t_len * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if skip_ok(s) {
                a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if a == neg { neg } else { a + lp(t, ext[s]) };
        }
    }
    let last = (t_len - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len >= 2 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if log_p == neg {
        return Ok(None);
    }

    // beta(t, s): log-probability of finishing from state s after frame t.
    let mut beta = vec![neg; t_len * s_len];
    beta[last + s_len - 1] = 0.0;
    if s_len >= 2 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s] + lp(t + 1, ext[s]);
            if s + 1 < s_len {
                b = log_add(b, beta[(t + 1) * s_len + s + 1] + lp(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add(b, beta[(t + 1) * s_len + s + 2] + lp(t + 1, ext[s + 2]));
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut grad = vec![0.0; t_len * v];
    for t in 0..t_len {
        for s in 0..s_len {
            let occ = alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
            if occ > neg {
                grad[t * v + ext[s]] -= occ.exp();
            }
        }
    }
    Ok(Some((-log_p, grad)))
}

/// CTC loss node over t×V log-probabilities.
pub fn ctc_loss(
    graph: &mut Graph,
    logprobs: Var,
    target: &[usize],
    blank: usize,
) -> Result<CtcOutcome> {
    match ctc_forward_backward(graph.value(logprobs), target, blank)? {
        Some((loss, grad)) => Ok(CtcOutcome::Loss(graph.scalar_fn(logprobs, loss, grad)?)),
        None => Ok(CtcOutcome::NoPath),
    }
}
