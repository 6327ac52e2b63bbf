//! The three training stages and the pooled-data baseline.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::{spec_augment, FeatureMatrix};
use crate::losses::{ctc_loss, rnnt_loss, weighted_sum, CtcOutcome};
use crate::noisyd::{l_con, l_r, Disentangler, IdentityDisentangler, NoisyD};
use crate::numerics::{Session, Tensor, Var};
use crate::rng::derive_rng;
use crate::training::data::{
    build_items, norm_stats_for, BatchSampler, DataSelector, PairedItem, RawUtterance,
};
use crate::training::model::{Model, DECODER_PREFIX, ENCODER_PREFIX};
use crate::training::optim::{Adam, Schedule, StepOutcome};
use crate::transducer::{Vocabulary, BLANK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Encoder and decoder on clean data with the CTC + transducer loss.
    Pretrain,
    /// NoisyD only, against the frozen encoder.
    NoisyD,
    /// Encoder and decoder again, with NoisyD and the reference branch frozen.
    Finetune,
    /// Encoder and decoder from scratch on pooled clean and noisy data.
    Baseline,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Pretrain => 1,
            Stage::NoisyD => 2,
            Stage::Finetune => 3,
            Stage::Baseline => 0,
        }
    }

    pub fn trainable_prefixes(self) -> Vec<String> {
        match self {
            Stage::NoisyD => vec![crate::noisyd::PREFIX.to_string()],
            _ => vec![format!("{}.", ENCODER_PREFIX), DECODER_PREFIX.to_string()],
        }
    }

    fn disentangles(self) -> bool {
        matches!(self, Stage::NoisyD | Stage::Finetune)
    }

    fn trains_backbone(self) -> bool {
        self != Stage::NoisyD
    }

    fn key(self) -> &'static str {
        match self {
            Stage::Pretrain => "stage1",
            Stage::NoisyD => "stage2",
            Stage::Finetune => "stage3",
            Stage::Baseline => "baseline",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Stage::Pretrain),
            "2" => Ok(Stage::NoisyD),
            "3" => Ok(Stage::Finetune),
            "baseline" => Ok(Stage::Baseline),
            other => Err(Error::Config(format!(
                "unknown stage {:?}; expected 1, 2, 3 or baseline",
                other
            ))),
        }
    }
}

/// Batch-mean loss components of one optimizer step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub ctc: f64,
    pub rnnt: f64,
    pub l_con: f64,
    pub l_r: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StageSummary {
    pub log: Vec<StepLog>,
    pub rejected_steps: usize,
    /// Items whose CTC term was dropped because no alignment exists.
    pub no_path_ctc: usize,
}

/// Frozen-encoder outputs for one item: (h_noisy, h_t).
#[derive(Debug, Clone, PartialEq)]
pub struct ItemReps {
    pub h_noisy: Tensor,
    pub h_t: Tensor,
}

/// Evaluation-mode representations of an item: the encoder applied to the
/// input features and the reference branch applied to the clean features.
pub fn representations(model: &Model, item: &PairedItem) -> Result<ItemReps> {
    let mut s = Session::inference(&model.params);
    let h_noisy = model.encoder().encode(&mut s, &item.input, false)?;
    let h_t = model.branch().encode(&mut s, &item.clean, false)?;
    Ok(ItemReps {
        h_noisy: s.graph.value(h_noisy).clone(),
        h_t: s.graph.value(h_t).clone(),
    })
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub grads: BTreeMap<String, Tensor>,
    pub losses: StepLog,
    pub no_path: usize,
}

struct ItemResult {
    grads: BTreeMap<String, Tensor>,
    ctc: f64,
    rnnt: f64,
    l_con: f64,
    l_r: f64,
    total: f64,
    no_path: bool,
}

/// Graph nodes of one item's stage objective.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: Var,
    /// `None` when the CTC target has no alignment.
    pub ctc: Option<Var>,
    pub rnnt: Var,
    pub l_con: Option<Var>,
    pub l_r: Option<Var>,
}

/// Builds μ·CTC + γ·RNNT (+ α·L_CON + β·L_R when the stage disentangles)
/// for one item inside `s`. `features` is the (possibly augmented) encoder
/// input; `reps` replaces both encoder passes with cached outputs.
#[allow(clippy::too_many_arguments)]
pub fn stage_objective(
    s: &mut Session,
    model: &Model,
    stage: Stage,
    item: &PairedItem,
    features: &FeatureMatrix,
    reps: Option<&ItemReps>,
    dis: &(dyn Disentangler + Sync),
    train: bool,
) -> Result<Objective> {
    let w = model.config.loss;
    let mut terms: Vec<(Var, f64)> = Vec::new();
    let mut aux = (None, None);
    let dec_in = if stage.disentangles() {
        let (h_noisy, h_t) = match reps {
            Some(r) => (s.input(r.h_noisy.clone()), s.input(r.h_t.clone())),
            None => {
                let hn = model.encoder().encode(s, features, train)?;
                let ht = model.branch().encode(s, &item.clean, false)?;
                (hn, ht)
            }
        };
        let clean = dis.clean(s, h_noisy)?;
        let noise = dis.noise(s, h_noisy)?;
        let recon = dis.reconstruct(s, clean, noise)?;
        let lc = l_con(s, h_t, clean)?;
        let lr = l_r(s, recon, h_noisy)?;
        terms.push((lc, w.alpha));
        terms.push((lr, w.beta));
        aux = (Some(lc), Some(lr));
        clean
    } else {
        model.encoder().encode(s, features, train)?
    };
    let dec = model.decoder();
    let frames = s.graph.value(dec_in).rows();
    let lp = dec.ctc_logprobs(s, dec_in)?;
    let ctc = match ctc_loss(&mut s.graph, lp, &item.tokens, BLANK)? {
        CtcOutcome::Loss(v) => Some(v),
        CtcOutcome::NoPath => None,
    };
    if let Some(c) = ctc {
        terms.push((c, w.mu));
    }
    let pred = dec.predict(s, &item.tokens)?;
    let lattice = dec.joint(s, dec_in, pred)?;
    let rnnt = rnnt_loss(&mut s.graph, lattice, frames, &item.tokens, BLANK)?;
    terms.push((rnnt, w.gamma));
    let total = weighted_sum(&mut s.graph, &terms)?;
    Ok(Objective {
        total,
        ctc,
        rnnt,
        l_con: aux.0,
        l_r: aux.1,
    })
}

fn item_gradients(
    model: &Model,
    stage: Stage,
    item: &PairedItem,
    reps: Option<&ItemReps>,
    dis: &(dyn Disentangler + Sync),
    mut rng: ChaCha8Rng,
) -> Result<ItemResult> {
    let train = stage.trains_backbone();
    let augmented;
    let feats: &FeatureMatrix = if train {
        augmented = spec_augment(&item.input, &model.config.specaug, &mut rng);
        &augmented
    } else {
        &item.input
    };
    let mut s = Session::new(&model.params).with_rng(rng);
    let obj = stage_objective(&mut s, model, stage, item, feats, reps, dis, train)?;
    let value = |s: &Session, v: Option<Var>| v.map(|v| s.graph.value(v).data()[0]).unwrap_or(0.0);
    let grads = s.graph.backward(obj.total)?;
    Ok(ItemResult {
        grads: s.param_grads(&grads),
        ctc: value(&s, obj.ctc),
        rnnt: value(&s, Some(obj.rnnt)),
        l_con: value(&s, obj.l_con),
        l_r: value(&s, obj.l_r),
        total: value(&s, Some(obj.total)),
        no_path: obj.ctc.is_none(),
    })
}

/// Batch-mean gradients of the stage objective. Random streams are keyed
/// by (`seed`, `rng_key`, item id), so the result does not depend on
/// evaluation order.
pub fn batch_gradients(
    model: &Model,
    stage: Stage,
    items: &[&PairedItem],
    reps: Option<&[&ItemReps]>,
    dis: &(dyn Disentangler + Sync),
    seed: u64,
    rng_key: &str,
) -> Result<BatchResult> {
    if items.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let results: Vec<ItemResult> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let rng = derive_rng(seed, &format!("{}.{}", rng_key, item.id));
            item_gradients(model, stage, item, reps.map(|r| r[i]), dis, rng)
        })
        .collect::<Result<_>>()?;
    let n = results.len() as f64;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut losses = StepLog::default();
    let mut no_path = 0;
    for r in results {
        for (name, g) in r.grads {
            match grads.get_mut(&name) {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                None => {
                    grads.insert(name, g);
                }
            }
        }
        losses.ctc += r.ctc / n;
        losses.rnnt += r.rnnt / n;
        losses.l_con += r.l_con / n;
        losses.l_r += r.l_r / n;
        losses.total += r.total / n;
        no_path += r.no_path as usize;
    }
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok(BatchResult {
        grads,
        losses,
        no_path,
    })
}

/// Runs `steps` optimizer steps of `stage` on `items`, updating `model` in
/// place. Parameters outside the stage's trainable set are never touched.
pub fn run_stage_with(
    model: &mut Model,
    stage: Stage,
    items: &[PairedItem],
    steps: usize,
    dis: &(dyn Disentangler + Sync),
    mut log: Option<&mut dyn Write>,
) -> Result<StageSummary> {
    if items.is_empty() {
        return Err(Error::Training("no training items".into()));
    }
    let prefixes = stage.trainable_prefixes();
    let refs: Vec<&str> = prefixes.iter().map(|s| s.as_str()).collect();
    model.params.set_trainable_prefixes(&refs);
    let cfg = model.config.train;
    let seed = model.config.seed;
    let schedule = Schedule::new(cfg.peak_lr, cfg.warmup_steps)?;
    let mut adam = Adam::from_config(&cfg);
    let mut sampler = BatchSampler::new(items.len(), cfg.batch_size, seed, stage.key());
    // The frozen encoder is deterministic in stage 2, so its outputs are
    // computed once per item.
    let cache: Option<Vec<ItemReps>> = if stage == Stage::NoisyD {
        let m: &Model = model;
        Some(
            items
                .par_iter()
                .map(|it| representations(m, it))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let mut summary = StageSummary::default();
    for step in 1..=steps {
        let idx = sampler.next_batch();
        let batch: Vec<&PairedItem> = idx.iter().map(|&i| &items[i]).collect();
        let reps: Option<Vec<&ItemReps>> =
            cache.as_ref().map(|c| idx.iter().map(|&i| &c[i]).collect());
        let key = format!("{}.step{}", stage.key(), step);
        let res = batch_gradients(model, stage, &batch, reps.as_deref(), dis, seed, &key)?;
        let lr = schedule.lr(step);
        if !res.losses.total.is_finite() {
            summary.rejected_steps += 1;
        } else if adam.step(&mut model.params, &res.grads, lr)? == StepOutcome::Rejected {
            summary.rejected_steps += 1;
        }
        summary.no_path_ctc += res.no_path;
        let entry = StepLog {
            step,
            lr,
            ..res.losses
        };
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &entry)?;
            writeln!(w).map_err(|e| Error::Training(format!("writing training log: {}", e)))?;
        }
        if step % 50 == 0 || step == steps {
            log::info!(
                "{} step {}/{} lr {:.2e} total {:.4} (ctc {:.4} rnnt {:.4} l_con {:.4} l_r {:.4})",
                stage.key(),
                step,
                steps,
                lr,
                entry.total,
                entry.ctc,
                entry.rnnt,
                entry.l_con,
                entry.l_r
            );
        }
        summary.log.push(entry);
    }
    if summary.no_path_ctc > 0 {
        log::warn!(
            "{}: {} items had no CTC alignment",
            stage.key(),
            summary.no_path_ctc
        );
    }
    model.round_to_storage();
    model.stage = stage.number();
    Ok(summary)
}

/// Runs a stage with the disentangler implied by the stage.
pub fn run_stage(
    model: &mut Model,
    stage: Stage,
    items: &[PairedItem],
    steps: usize,
    log: Option<&mut dyn Write>,
) -> Result<StageSummary> {
    if stage.disentangles() {
        let nd: NoisyD = model.noisyd()?;
        run_stage_with(model, stage, items, steps, &nd, log)
    } else {
        run_stage_with(model, stage, items, steps, &IdentityDisentangler, log)
    }
}

/// Stage 1 from scratch on clean data.
pub fn pretrain(
    config: RunConfig,
    vocab: Vocabulary,
    raw: &[RawUtterance],
    steps: usize,
    log: Option<&mut dyn Write>,
) -> Result<(Model, StageSummary)> {
    let norm = norm_stats_for(raw, DataSelector::CleanOnly)?;
    let items = build_items(raw, &norm, &vocab, DataSelector::CleanOnly)?;
    let mut model = Model::init(config, vocab, norm)?;
    let summary = run_stage(&mut model, Stage::Pretrain, &items, steps, log)?;
    Ok((model, summary))
}

/// Stage 2: adds NoisyD to a stage-1 model and trains it alone.
pub fn train_noisyd(
    mut model: Model,
    raw: &[RawUtterance],
    steps: usize,
    log: Option<&mut dyn Write>,
) -> Result<(Model, StageSummary)> {
    if model.stage != 1 {
        return Err(Error::Training(format!(
            "stage 2 starts from a stage-1 checkpoint, got a stage-{} model",
            model.stage
        )));
    }
    let items = build_items(raw, &model.norm, &model.vocab, DataSelector::Paired)?;
    model.add_noisyd()?;
    let summary = run_stage(&mut model, Stage::NoisyD, &items, steps, log)?;
    Ok((model, summary))
}

/// Stage 3: forks the reference branch and fine-tunes encoder and decoder.
pub fn finetune(
    mut model: Model,
    raw: &[RawUtterance],
    steps: usize,
    log: Option<&mut dyn Write>,
) -> Result<(Model, StageSummary)> {
    if model.stage != 2 {
        return Err(Error::Training(format!(
            "stage 3 starts from a stage-2 checkpoint, got a stage-{} model",
            model.stage
        )));
    }
    let items = build_items(raw, &model.norm, &model.vocab, DataSelector::Paired)?;
    model.fork_branch();
    let summary = run_stage(&mut model, Stage::Finetune, &items, steps, log)?;
    Ok((model, summary))
}

/// Baseline transducer trained from scratch on pooled clean and noisy data.
pub fn train_baseline(
    config: RunConfig,
    vocab: Vocabulary,
    raw: &[RawUtterance],
    steps: usize,
    log: Option<&mut dyn Write>,
) -> Result<(Model, StageSummary)> {
    let norm = norm_stats_for(raw, DataSelector::Paired)?;
    let items = build_items(raw, &norm, &vocab, DataSelector::Paired)?;
    let mut model = Model::init(config, vocab, norm)?;
    let summary = run_stage(&mut model, Stage::Baseline, &items, steps, log)?;
    Ok((model, summary))
}
