//! DP losses against exhaustive enumeration on random small instances.

use noisyd_ct::losses::{ctc_forward_backward, rnnt_forward_backward};
use noisyd_ct::numerics::Tensor;
use noisyd_ct::transducer::BLANK;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{brute_ctc, brute_rnnt, log_softmax_rows, rng};

pub const V: usize = 3;

/// Worst absolute difference, reachable count and a line per mismatch.
#[derive(Debug, Default)]
pub struct Sweep {
    pub worst: f64,
    pub reachable: usize,
    pub failures: Vec<String>,
}

fn random_case(r: &mut ChaCha8Rng) -> (usize, Vec<usize>) {
    let t = r.gen_range(1..=4);
    let u = r.gen_range(0..=3);
    (t, (0..u).map(|_| r.gen_range(1..V)).collect())
}

pub fn ctc(trials: usize, seed: u64, tol: f64) -> Sweep {
    let mut r = rng(seed);
    let mut s = Sweep::default();
    for _ in 0..trials {
        let (t, target) = random_case(&mut r);
        let logits: Vec<f64> = (0..t * V).map(|_| r.gen_range(-3.0..3.0)).collect();
        let lp = log_softmax_rows(&logits, V);
        let want = brute_ctc(&lp, t, V, &target, BLANK);
        let got = ctc_forward_backward(&Tensor::new(vec![t, V], lp).unwrap(), &target, BLANK)
            .unwrap()
            .map(|(loss, _)| loss);
        match (want, got) {
            (Some(w), Some(g)) => {
                s.reachable += 1;
                s.worst = s.worst.max((w - g).abs());
                if !((w - g).abs() < tol) {
                    s.failures
                        .push(format!("t={} target={:?}: {} vs {}", t, target, g, w));
                }
            }
            (None, None) => {}
            other => s.failures.push(format!(
                "t={} target={:?}: reachability differs {:?}",
                t, target, other
            )),
        }
    }
    s
}

pub fn rnnt(trials: usize, seed: u64, tol: f64) -> Sweep {
    let mut r = rng(seed);
    let mut s = Sweep::default();
    for _ in 0..trials {
        let (t, target) = random_case(&mut r);
        let logits: Vec<f64> = (0..t * (target.len() + 1) * V)
            .map(|_| r.gen_range(-3.0..3.0))
            .collect();
        let lp = log_softmax_rows(&logits, V);
        let want = brute_rnnt(&lp, t, V, &target, BLANK);
        let (got, _) = rnnt_forward_backward(&lp, t, V, &target, BLANK).unwrap();
        s.reachable += 1;
        s.worst = s.worst.max((want - got).abs());
        if !((want - got).abs() < tol) {
            s.failures
                .push(format!("t={} target={:?}: {} vs {}", t, target, got, want));
        }
    }
    s
}
