mod common;

use common::*;
use noisyd_ct::backbone::{subsampled_length, MIN_FRAMES};
use noisyd_ct::eval::wer;
use noisyd_ct::losses::{ctc_loss, rnnt_loss, CtcOutcome};
use noisyd_ct::noisyd::Disentangler;
use noisyd_ct::numerics::{Graph, Session, Tensor, LAYER_NORM_EPS};
use noisyd_ct::training::{batch_gradients, Stage};
use noisyd_ct::transducer::{greedy_search, StepScorer, BLANK};
use noisyd_ct::Result;
use proptest::prelude::*;
use rand::Rng;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cfg(100))]

    #[test]
    fn joint_rows_are_distributions(seed in any::<u64>(), t in 1usize..5, u in 0usize..4) {
        let mut r = rng(seed);
        let mut model = tiny_model(tiny_config(), 1);
        perturb(&mut model, &mut r);
        let dec = model.decoder();
        let tokens: Vec<usize> = (0..u).map(|_| r.gen_range(1..3)).collect();
        let mut s = Session::inference(&model.params);
        let e = s.input(rand_tensor(&mut r, &[t, 4], 2.0));
        let p = dec.predict(&mut s, &tokens).unwrap();
        let lat = dec.joint(&mut s, e, p).unwrap();
        let v = s.graph.value(lat);
        prop_assert_eq!(v.rows(), t * (u + 1));
        for row in 0..v.rows() {
            let mass: f64 = v.row(row).iter().map(|x| x.exp()).sum();
            prop_assert!((mass - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(cfg(50))]

    #[test]
    fn prediction_network_is_causal(seed in any::<u64>(), u in 1usize..6, pos in 0usize..6) {
        let pos = pos % u;
        let mut r = rng(seed);
        let mut model = tiny_model(tiny_config(), 1);
        perturb(&mut model, &mut r);
        let dec = model.decoder();
        let a: Vec<usize> = (0..u).map(|_| r.gen_range(1..3)).collect();
        let mut b = a.clone();
        b[pos] = 3 - b[pos];
        let run = |tokens: &[usize]| {
            let mut s = Session::inference(&model.params);
            let p = dec.predict(&mut s, tokens).unwrap();
            s.graph.value(p).clone()
        };
        let (pa, pb) = (run(&a), run(&b));
        // row k depends on tokens < k only
        for k in 0..=pos {
            prop_assert_eq!(pa.row(k), pb.row(k));
        }
        prop_assert_ne!(pa.row(pos + 1), pb.row(pos + 1));
    }

    #[test]
    fn wer_swaps_insertions_and_deletions(
        a in prop::collection::vec(0u8..5, 0..8),
        b in prop::collection::vec(0u8..5, 0..8),
    ) {
        let words = |v: &[u8]| v.iter().map(|w| format!("w{}", w)).collect::<Vec<_>>().join(" ");
        let (x, y) = (words(&a), words(&b));
        let f = wer(&x, &y);
        let g = wer(&y, &x);
        prop_assert_eq!(f.errors(), g.errors());
        prop_assert_eq!(f.substitutions, g.substitutions);
        prop_assert_eq!(f.insertions, g.deletions);
        prop_assert_eq!(f.deletions, g.insertions);
        prop_assert_eq!(wer(&x, &x).errors(), 0);
    }

    #[test]
    fn losses_ignore_per_row_logit_shifts(seed in any::<u64>(), t in 1usize..5, u in 0usize..3) {
        let mut r = rng(seed);
        let v = 4;
        let target: Vec<usize> = (0..u).map(|_| r.gen_range(1..v)).collect();
        let logits = rand_tensor(&mut r, &[t, v], 3.0);
        let lattice = rand_tensor(&mut r, &[t * (u + 1), v], 3.0);
        let shift = |x: &Tensor, r: &mut rand_chacha::ChaCha8Rng| {
            let cols = x.cols();
            let mut y = x.clone();
            for row in y.data_mut().chunks_mut(cols) {
                let c = r.gen_range(-50.0..50.0);
                row.iter_mut().for_each(|e| *e += c);
            }
            y
        };
        let eval = |lg: &Tensor, lat: &Tensor| -> (Option<f64>, f64) {
            let mut g = Graph::new();
            let a = g.constant(lg.clone());
            let a = g.log_softmax(a);
            let ctc = match ctc_loss(&mut g, a, &target, BLANK).unwrap() {
                CtcOutcome::Loss(l) => Some(g.value(l).data()[0]),
                CtcOutcome::NoPath => None,
            };
            let b = g.constant(lat.clone());
            let b = g.log_softmax(b);
            let rn = rnnt_loss(&mut g, b, t, &target, BLANK).unwrap();
            (ctc, g.value(rn).data()[0])
        };
        let (c0, r0) = eval(&logits, &lattice);
        let (c1, r1) = eval(&shift(&logits, &mut r), &shift(&lattice, &mut r));
        prop_assert!((r0 - r1).abs() < 1e-9);
        match (c0, c1) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
            (None, None) => {}
            _ => prop_assert!(false, "reachability changed"),
        }
    }

    #[test]
    fn mse_is_a_scaled_squared_distance(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..5) {
        let mut r = rng(seed);
        let a = rand_tensor(&mut r, &[rows, cols], 2.0);
        let b = rand_tensor(&mut r, &[rows, cols], 2.0);
        let mse = |x: &Tensor, y: &Tensor| {
            let mut g = Graph::new();
            let (x, y) = (g.constant(x.clone()), g.constant(y.clone()));
            let m = g.mse(x, y).unwrap();
            g.value(m).data()[0]
        };
        let direct: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            / (rows * cols) as f64;
        prop_assert!((mse(&a, &b) - direct).abs() < 1e-12);
        prop_assert_eq!(mse(&a, &b), mse(&b, &a));
        prop_assert_eq!(mse(&a, &a), 0.0);
        prop_assert!(mse(&a, &b) >= 0.0);
    }

    #[test]
    fn noisyd_outputs_lie_in_unit_interval(seed in any::<u64>(), t in 1usize..6) {
        let mut r = rng(seed);
        let mut model = tiny_model(tiny_config(), 2);
        perturb(&mut model, &mut r);
        let nd = model.noisyd().unwrap();
        let mut s = Session::inference(&model.params);
        let h = s.input(rand_tensor(&mut r, &[t, 4], 5.0));
        let c = nd.clean(&mut s, h).unwrap();
        let n = nd.noise(&mut s, h).unwrap();
        let rec = nd.reconstruct(&mut s, c, n).unwrap();
        for v in [c, n, rec] {
            prop_assert_eq!(s.graph.value(v).shape(), &[t, 4][..]);
            prop_assert!(s.graph.value(v).data().iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn encoder_output_length_follows_subsampling(seed in any::<u64>(), frames in MIN_FRAMES..=32) {
        let mut r = rng(seed);
        let model = tiny_model(tiny_config(), 1);
        let x = random_features(&mut r, frames);
        let mut s = Session::inference(&model.params);
        let h = model.encoder().encode(&mut s, &x, false).unwrap();
        // kernel 3, stride 2, padding 1: n -> floor((n + 2 - 3) / 2) + 1
        let conv = |n: usize| (n - 1) / 2 + 1;
        prop_assert_eq!(s.graph.value(h).rows(), conv(conv(frames)));
        prop_assert_eq!(subsampled_length(frames), conv(conv(frames)));
    }

    #[test]
    fn zero_weight_block_is_layer_norm(seed in any::<u64>(), t in 1usize..6) {
        let mut r = rng(seed);
        let mut model = tiny_model(tiny_config(), 1);
        for name in names_with_prefix(&model, "encoder.layers.0.") {
            let p = model.params.get_mut(&name).unwrap();
            if !(name.ends_with(".gamma")) {
                p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let z = rand_tensor(&mut r, &[t, 4], 3.0);
        let mut s = Session::inference(&model.params);
        let zv = s.input(z.clone());
        let y = model.encoder().conformer_block(&mut s, 0, zv, false).unwrap();
        let got = s.graph.value(y);
        for row in 0..t {
            let x = z.row(row);
            let mean = x.iter().sum::<f64>() / 4.0;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            for (c, v) in x.iter().enumerate() {
                let want = (v - mean) / (var + LAYER_NORM_EPS).sqrt();
                prop_assert!((got.at(row, c) - want).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(cfg(10))]

    #[test]
    fn backward_pass_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let model = tiny_model(tiny_config(), 3);
        let items = random_items(&mut r, 3, 17);
        let refs: Vec<_> = items.iter().collect();
        let nd = model.noisyd().unwrap();
        let a = batch_gradients(&model, Stage::Finetune, &refs, None, &nd, seed, "p").unwrap();
        let b = batch_gradients(&model, Stage::Finetune, &refs, None, &nd, seed, "p").unwrap();
        prop_assert_eq!(a.grads, b.grads);
        prop_assert_eq!(a.losses.total.to_bits(), b.losses.total.to_bits());
    }

    #[test]
    fn greedy_search_terminates(seed in any::<u64>(), frames in 0usize..8, max_symbols in 1usize..5) {
        let mut scorer = Adversary { r: rng(seed), v: 4 };
        let out = greedy_search(&mut scorer, frames, BLANK, max_symbols).unwrap();
        prop_assert!(out.len() <= frames * max_symbols);
        prop_assert!(out.iter().all(|&y| y != BLANK && y < 4));
    }
}

/// Random scores that never favour blank, so only the per-frame symbol
/// cap can end a frame.
struct Adversary {
    r: rand_chacha::ChaCha8Rng,
    v: usize,
}

impl StepScorer for Adversary {
    type State = usize;
    fn initial(&mut self) -> Result<usize> {
        Ok(0)
    }
    fn scores(&mut self, _t: usize, _state: &usize) -> Result<Vec<f64>> {
        let mut s: Vec<f64> = (0..self.v).map(|_| self.r.gen_range(-1.0..0.0)).collect();
        s[BLANK] = -10.0;
        Ok(s)
    }
    fn advance(&mut self, state: &usize, _token: usize) -> Result<usize> {
        Ok(state + 1)
    }
}

fn perturb(model: &mut noisyd_ct::training::Model, r: &mut rand_chacha::ChaCha8Rng) {
    let names: Vec<String> = model.params.names().cloned().collect();
    for n in names {
        let p = model.params.get_mut(&n).unwrap();
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += r.gen_range(-0.3..0.3));
    }
}
