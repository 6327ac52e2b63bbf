//! Sequence losses and their weighted compositions.

mod compose;
mod ctc;
mod rnnt;

pub use compose::{conformer_t_loss, noisyd_ct_loss, weighted_sum, LossWeights};
pub use ctc::{ctc_forward_backward, ctc_loss, CtcOutcome};
pub use rnnt::{rnnt_forward_backward, rnnt_loss};

/// Numerically stable log(exp(a) + exp(b)).
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
