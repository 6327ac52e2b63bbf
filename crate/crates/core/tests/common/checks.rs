//! Training-contract checks shared by the training tests and the
//! acceptance target.

use noisyd_ct::config::RunConfig;
use noisyd_ct::noisyd::IdentityDisentangler;
use noisyd_ct::numerics::ParamStore;
use noisyd_ct::training::{
    batch_gradients, representations, run_stage, Adam, Model, PairKind, Schedule, Stage,
};

use super::*;

/// Two-layer variant of the tiny config.
pub fn two_layer_config() -> RunConfig {
    let mut c = tiny_config();
    c.encoder.num_layers = 2;
    c
}

/// Names whose tensors differ between two stores (or exist in only one).
pub fn changed(before: &ParamStore, after: &ParamStore, prefixes: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    for (name, p) in before.iter() {
        if !prefixes.iter().any(|pre| name.starts_with(pre)) {
            continue;
        }
        let same = after.get(name).is_some_and(|q| {
            q.value.shape() == p.value.shape()
                && q.value
                    .data()
                    .iter()
                    .zip(p.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        });
        if !same {
            out.push(name.clone());
        }
    }
    out
}

pub struct Freezing {
    /// Frozen tensors that moved during stage 2 / stage 3.
    pub moved2: Vec<String>,
    pub moved3: Vec<String>,
    /// Trainable tensors that did move (sanity: training happened).
    pub trained2: usize,
    pub trained3: usize,
}

/// Runs `steps` of stage 2 and then of stage 3 on random paired items.
pub fn freezing(steps: usize, seed: u64) -> Freezing {
    let mut r = rng(seed);
    let items = random_items(&mut r, 6, 21);
    let mut model = tiny_model(two_layer_config(), 2);
    // a stage-2 model always comes from a stored checkpoint
    model.round_to_storage();
    let before = model.params.clone();
    run_stage(&mut model, Stage::NoisyD, &items, steps, None).unwrap();
    let moved2 = changed(&before, &model.params, &["encoder.", "decoder."]);
    let trained2 = changed(&before, &model.params, &["noisyd."]).len();

    model.fork_branch();
    model.stage = 3;
    let before = model.params.clone();
    run_stage(&mut model, Stage::Finetune, &items, steps, None).unwrap();
    let moved3 = changed(&before, &model.params, &["noisyd.", "pretrained.encoder."]);
    let trained3 = changed(&before, &model.params, &["encoder.", "decoder."]).len();
    Freezing {
        moved2,
        moved3,
        trained2,
        trained3,
    }
}

/// Clean-clean items checked for bitwise equality of the trainable-path
/// representation and the reference branch, at stage-2 start and after
/// `steps` of stage 2. Returns (items checked, items equal).
pub fn branch_equality(steps: usize, seed: u64) -> (usize, usize) {
    let mut r = rng(seed);
    let items = random_items(&mut r, 8, 25);
    let mut model = tiny_model(two_layer_config(), 2);
    let check = |m: &Model| {
        let mut n = (0, 0);
        for it in items.iter().filter(|i| i.kind == PairKind::CleanClean) {
            let reps = representations(m, it).unwrap();
            n.0 += 1;
            let eq = reps.h_noisy.shape() == reps.h_t.shape()
                && reps
                    .h_noisy
                    .data()
                    .iter()
                    .zip(reps.h_t.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            n.1 += eq as usize;
        }
        n
    };
    let start = check(&model);
    run_stage(&mut model, Stage::NoisyD, &items, steps, None).unwrap();
    let end = check(&model);
    (start.0 + end.0, start.1 + end.1)
}

/// Largest parameter difference between one stage-3 step with α = β = 0
/// and the identity disentangler, and one plain transducer step, on the
/// same batch and random streams.
pub fn composite_identity(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut config = two_layer_config();
    config.loss.alpha = 0.0;
    config.loss.beta = 0.0;
    let items = random_items(&mut r, 4, 23);
    let refs: Vec<_> = items.iter().collect();
    let mut a = tiny_model(config, 3);
    let mut b = a.clone();
    let prefixes = ["encoder.", "decoder."];
    a.params.set_trainable_prefixes(&prefixes);
    b.params.set_trainable_prefixes(&prefixes);
    let ga = batch_gradients(
        &a,
        Stage::Finetune,
        &refs,
        None,
        &IdentityDisentangler,
        seed,
        "k",
    )
    .unwrap();
    let gb = batch_gradients(
        &b,
        Stage::Baseline,
        &refs,
        None,
        &IdentityDisentangler,
        seed,
        "k",
    )
    .unwrap();
    assert_eq!(
        ga.grads.keys().collect::<Vec<_>>(),
        gb.grads.keys().collect::<Vec<_>>()
    );
    let lr = Schedule::new(a.config.train.peak_lr, a.config.train.warmup_steps)
        .unwrap()
        .lr(1);
    Adam::from_config(&a.config.train)
        .step(&mut a.params, &ga.grads, lr)
        .unwrap();
    Adam::from_config(&b.config.train)
        .step(&mut b.params, &gb.grads, lr)
        .unwrap();
    let mut worst: f64 = 0.0;
    for (name, p) in a.params.iter() {
        let q = b.params.get(name).unwrap();
        for (x, y) in p.value.data().iter().zip(q.value.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}
