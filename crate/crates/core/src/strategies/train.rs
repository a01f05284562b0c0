use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{BatchSampler, Sgd, DEFAULT_MOMENTUM};
use super::schedule::{StrategyKind, TrainSchedule};
use crate::backbone::{build_network, NetworkConfig, SegmentationNetwork};
use crate::datagen::{histogram_match, to_batch, DomainData, Sample};
use crate::error::{Error, Result};
use crate::metrics::{surface_dice, BinaryMask};
use crate::objectives::{bce_loss_and_grad, policy_regularizer_batch, policy_regularizer_soft_grad, total_loss, DEFAULT_EPS};
use crate::params::ParamSet;
use crate::routing::{DualGrads, DualPathModel, GumbelConfig, RouteMode};
use crate::scalar::Scalar;
use crate::seeding::derive_seed;
use crate::tensor::Tensor;

/// Surface-Dice tolerance used for every reported score.
pub const EVAL_TOLERANCE_MM: f64 = 1.0;
const EVAL_BATCH: usize = 16;

/// Anything that maps an image batch to per-pixel logits.
pub trait Segmenter<S: Scalar> {
    fn segment_logits(&self, x: &Tensor<S>) -> Result<Tensor<S>>;
}

impl<S: Scalar> Segmenter<S> for SegmentationNetwork<S> {
    fn segment_logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward(x)
    }
}

/// Dual-path models are evaluated with noise-free argmax routing.
impl<S: Scalar> Segmenter<S> for DualPathModel<S> {
    fn segment_logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.routed_forward(x, &RouteMode::EvalArgmax, None)?.0)
    }
}

/// Per-image surface Dice of `model` on `samples` (logit > 0 is foreground).
pub fn evaluate<S: Scalar, M: Segmenter<S> + ?Sized>(model: &M, samples: &[&Sample]) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let (x, _) = to_batch::<S>(chunk)?;
        let logits = model.segment_logits(&x)?;
        for (b, s) in chunk.iter().enumerate() {
            let pred = BinaryMask::from_scores(logits.sample(b), S::zero(), vec![s.height, s.width], vec![s.spacing_mm; 2])?;
            scores.push(surface_dice(&pred, &s.binary_mask(), EVAL_TOLERANCE_MM)?.score);
        }
    }
    Ok(scores)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_surface_dice: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Set when a non-finite loss stopped training early.
    pub diverged: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_surface_dice\n");
        for r in &self.rows {
            let val = r.val_surface_dice.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.lr, r.train_loss, val);
        }
        out
    }
}

/// One optimizer update on a batch, returning the loss before the update.
trait StepTarget<S: Scalar> {
    fn step(&mut self, x: &Tensor<S>, y: &Tensor<S>, lr: f64) -> Result<f64>;
    fn score(&self, val: &[&Sample]) -> Result<f64>;
}

fn run_schedule<S: Scalar, T: StepTarget<S>>(
    target: &mut T,
    schedule: &TrainSchedule,
    pool: &[&Sample],
    val: &[&Sample],
    seed: u64,
) -> Result<TrainLog> {
    schedule.validate()?;
    if pool.is_empty() {
        return Err(Error::Config("training pool is empty".into()));
    }
    let mut sampler = BatchSampler::new((0..pool.len()).collect(), derive_seed(seed, &["batches"]));
    let mut log = TrainLog::default();
    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch);
        let mut total = 0.0;
        for _ in 0..schedule.iters_per_epoch {
            let idx = sampler.next_batch(schedule.batch_size);
            let batch: Vec<&Sample> = idx.iter().map(|&i| pool[i]).collect();
            let (x, y) = to_batch::<S>(&batch)?;
            let loss = target.step(&x, &y, lr)?;
            if !loss.is_finite() {
                log.diverged = true;
                break;
            }
            total += loss;
        }
        let train_loss = if log.diverged { f64::NAN } else { total / schedule.iters_per_epoch as f64 };
        let val_surface_dice = if val.is_empty() || log.diverged { None } else { Some(target.score(val)?) };
        log.rows.push(LogRow {
            epoch,
            lr,
            train_loss,
            val_surface_dice,
        });
        if log.diverged {
            break;
        }
    }
    Ok(log)
}

struct PlainTarget<'a, S> {
    net: &'a mut SegmentationNetwork<S>,
    opt: Sgd<S>,
    grads: ParamSet<S>,
    mask: Vec<bool>,
}

impl<S: Scalar> StepTarget<S> for PlainTarget<'_, S> {
    fn step(&mut self, x: &Tensor<S>, y: &Tensor<S>, lr: f64) -> Result<f64> {
        let (logits, trace) = self.net.forward_train(x)?;
        let (loss, dy) = bce_loss_and_grad(&logits, y, DEFAULT_EPS)?;
        self.grads.fill_zero();
        self.net.backward(&trace, &dy, &mut self.grads)?;
        self.opt.step(self.net.params_mut(), &self.grads, lr, Some(&self.mask));
        Ok(loss)
    }

    fn score(&self, val: &[&Sample]) -> Result<f64> {
        Ok(mean(&evaluate(&*self.net, val)?))
    }
}

/// Trains the parameters flagged in `net`'s trainable mask with BCE and SGD.
pub fn train_network<S: Scalar>(
    net: &mut SegmentationNetwork<S>,
    pool: &[&Sample],
    val: &[&Sample],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainLog> {
    let mask = net.trainable_mask().to_vec();
    if !mask.iter().any(|&t| t) {
        schedule.validate()?;
        return Ok(TrainLog::default());
    }
    let mut target = PlainTarget {
        opt: Sgd::new(net.params(), DEFAULT_MOMENTUM),
        grads: net.params().zeros_like(),
        mask,
        net,
    };
    run_schedule(&mut target, schedule, pool, val, seed)
}

/// Source-domain training from a seeded initialization.
pub fn pretrain_baseline<S: Scalar>(
    config: &NetworkConfig,
    train: &[&Sample],
    val: &[&Sample],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(SegmentationNetwork<S>, TrainLog)> {
    let mut net = build_network::<S>(config, seed)?;
    let log = train_network(&mut net, train, val, schedule, seed)?;
    Ok((net, log))
}

/// Fine-tunes a copy of `net` with all blocks or the first `k` blocks trainable.
pub fn finetune<S: Scalar>(
    net: &SegmentationNetwork<S>,
    kind: &StrategyKind,
    schedule: &TrainSchedule,
    subset: &[&Sample],
    val: &[&Sample],
    seed: u64,
) -> Result<(SegmentationNetwork<S>, TrainLog)> {
    kind.validate(net.num_blocks())?;
    let mut tuned = net.clone();
    match *kind {
        StrategyKind::FinetuneAll => tuned.set_all_trainable(true),
        StrategyKind::FinetuneFirstK { k } => tuned.set_trainable_first_k(k)?,
        other => {
            return Err(Error::Config(format!(
                "`{}` is not a plain fine-tuning strategy",
                other.label()
            )))
        }
    }
    let log = train_network(&mut tuned, subset, val, schedule, seed)?;
    Ok((tuned, log))
}

struct SpotTarget<'a, S> {
    model: &'a mut DualPathModel<S>,
    lambda: f64,
    tuned_opt: Sgd<S>,
    policy_opt: Sgd<S>,
    grads: DualGrads<S>,
    mask: Vec<bool>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> StepTarget<S> for SpotTarget<'_, S> {
    fn step(&mut self, x: &Tensor<S>, y: &Tensor<S>, lr: f64) -> Result<f64> {
        let (logits, trace) = self.model.forward_train(x, &mut self.rng)?;
        let (segm, dy) = bce_loss_and_grad(&logits, y, DEFAULT_EPS)?;
        let ind = trace.indicators();
        let reg = policy_regularizer_batch(&ind, self.lambda)?;
        let soft = policy_regularizer_soft_grad(&ind, self.lambda)?;
        self.grads.tuned.fill_zero();
        self.grads.policy.fill_zero();
        self.model.backward(&trace, &dy, Some(&soft), &mut self.grads)?;
        let (tuned, policy) = self.model.trainable_sets_mut();
        self.tuned_opt.step(tuned, &self.grads.tuned, lr, Some(&self.mask));
        self.policy_opt.step(policy, &self.grads.policy, lr, None);
        Ok(total_loss(segm, reg))
    }

    fn score(&self, val: &[&Sample]) -> Result<f64> {
        Ok(mean(&evaluate(&*self.model, val)?))
    }
}

/// Trains the tuned copy and a fresh policy network against BCE plus the
/// block-usage penalty, with Gumbel-sampled routing.
pub fn finetune_spottunet<S: Scalar>(
    net: &SegmentationNetwork<S>,
    lambda: f64,
    tau: f64,
    schedule: &TrainSchedule,
    subset: &[&Sample],
    val: &[&Sample],
    seed: u64,
) -> Result<(DualPathModel<S>, TrainLog)> {
    StrategyKind::Spottunet { lambda, tau }.validate(net.num_blocks())?;
    let gumbel = GumbelConfig::new(tau, derive_seed(seed, &["gumbel"]))?;
    let mut model = DualPathModel::from_pretrained(net, gumbel, derive_seed(seed, &["policy"]))?;
    let (tuned_opt, policy_opt, grads, mask) = (
        Sgd::new(model.tuned().params(), DEFAULT_MOMENTUM),
        Sgd::new(model.policy().params(), DEFAULT_MOMENTUM),
        model.zero_grads(),
        model.tuned().trainable_mask().to_vec(),
    );
    let mut target = SpotTarget {
        rng: ChaCha8Rng::seed_from_u64(gumbel.seed),
        model: &mut model,
        lambda,
        tuned_opt,
        policy_opt,
        grads,
        mask,
    };
    let log = run_schedule(&mut target, schedule, subset, val, seed)?;
    Ok((model, log))
}

/// A pretrained network applied to target images histogram-matched to a
/// pooled source reference. Involves no randomness.
#[derive(Clone, Debug)]
pub struct HistogramPipeline<'a, S> {
    pub net: &'a SegmentationNetwork<S>,
    reference: Vec<f32>,
}

impl<S: Scalar> Segmenter<S> for HistogramPipeline<'_, S> {
    fn segment_logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut matched = x.clone();
        for b in 0..x.batch() {
            let img: Vec<f32> = x.sample(b).iter().map(|v| v.to_f64_lossy() as f32).collect();
            let out = histogram_match(&img, &self.reference)?;
            for (d, v) in matched.sample_mut(b).iter_mut().zip(out) {
                *d = S::from_f64_lossy(v as f64);
            }
        }
        self.net.forward(&matched)
    }
}

/// Builds the histogram-matching transfer pipeline; `source_reference` is
/// drawn from the source training split.
pub fn transfer_with_histogram_matching<'a, S: Scalar>(
    net: &'a SegmentationNetwork<S>,
    source_reference: &[&Sample],
) -> Result<HistogramPipeline<'a, S>> {
    if source_reference.is_empty() {
        return Err(Error::Config("histogram matching needs at least one reference image".into()));
    }
    let reference = source_reference.iter().flat_map(|s| s.image.iter().copied()).collect();
    Ok(HistogramPipeline { net, reference })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Sample ids of each held-out fold.
    pub folds: Vec<Vec<usize>>,
    /// Mean surface Dice on each held-out fold.
    pub fold_scores: Vec<f64>,
}

/// Deterministic `folds`-way partition of sample ids.
pub fn fold_partition(ids: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if ids.len() < folds {
        return Err(Error::Config(format!(
            "{} samples cannot fill {folds} folds",
            ids.len()
        )));
    }
    let mut order = ids.to_vec();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, id) in order.into_iter().enumerate() {
        out[i % folds].push(id);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// In-domain upper bound: train on all but one fold, score the held-out fold.
pub fn run_oracle_cv<S: Scalar>(
    config: &NetworkConfig,
    domain: &DomainData,
    folds: usize,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<OracleResult> {
    let ids: Vec<usize> = (0..domain.samples.len()).collect();
    let parts = fold_partition(&ids, folds, derive_seed(seed, &["folds"]))?;
    let mut fold_scores = Vec::with_capacity(folds);
    for (f, held) in parts.iter().enumerate() {
        let train_ids: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        let train = domain.samples_by_id(&train_ids)?;
        let test = domain.samples_by_id(held)?;
        let (net, _) = pretrain_baseline::<S>(config, &train, &[], schedule, derive_seed(seed, &["fold", &f.to_string()]))?;
        fold_scores.push(mean(&evaluate(&net, &test)?));
    }
    Ok(OracleResult { folds: parts, fold_scores })
}
