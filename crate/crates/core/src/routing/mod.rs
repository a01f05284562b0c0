//! Dual-path forward pass: per input and per block, a policy network picks the
//! frozen pretrained block or its fine-tuned duplicate.
//!
//! Block `l` outputs `I * frozen_l(x) + (1 - I) * tuned_l(x)` where `I = 1`
//! selects the frozen block. During training `I` is a straight-through
//! Gumbel-Softmax sample: the hard value is used in the forward pass while
//! gradients flow through the soft relaxation.

mod gumbel;
mod policy;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) use gumbel::sigmoid;
pub use gumbel::{argmax_sample, draw_noise, gumbel_softmax_sample, gumbel_softmax_with_noise, GumbelConfig, GumbelSample};
pub use policy::{PolicyLayout, PolicyLogits, PolicyNetwork, PolicyTrace};

use crate::backbone::checkpoint::{read_checkpoint, write_checkpoint, SectionData};
use crate::backbone::{execute_backward, execute_forward, BlockCache, FeatureMap, SegmentationNetwork};
use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Routing decisions for one input, one entry per block.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorVector {
    /// `true` = frozen block chosen.
    pub hard: Vec<bool>,
    /// Relaxed probability of the frozen block.
    pub soft: Vec<f64>,
}

impl IndicatorVector {
    pub fn all_frozen(n: usize) -> Self {
        IndicatorVector {
            hard: vec![true; n],
            soft: vec![1.0; n],
        }
    }

    pub fn all_tuned(n: usize) -> Self {
        IndicatorVector {
            hard: vec![false; n],
            soft: vec![0.0; n],
        }
    }

    pub fn from_hard(hard: Vec<bool>) -> Self {
        let soft = hard.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
        IndicatorVector { hard, soft }
    }

    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }

    pub fn hard_value(&self, l: usize) -> f64 {
        if self.hard[l] {
            1.0
        } else {
            0.0
        }
    }

    /// Number of blocks routed to the fine-tuned copy.
    pub fn num_tuned(&self) -> usize {
        self.hard.iter().filter(|h| !**h).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RouteMode {
    /// Fresh Gumbel noise per sample, per block, per call.
    TrainSample,
    /// Noise-free threshold on the policy softmax.
    EvalArgmax,
    /// Same decisions for every sample; the policy is not evaluated.
    Forced(IndicatorVector),
}

#[derive(Clone, Debug)]
pub struct DualPathModel<S> {
    frozen: SegmentationNetwork<S>,
    tuned: SegmentationNetwork<S>,
    policy: PolicyNetwork<S>,
    gumbel: GumbelConfig,
}

/// Gradient buffers for the trainable half of a [`DualPathModel`].
#[derive(Clone, Debug)]
pub struct DualGrads<S> {
    pub tuned: ParamSet<S>,
    pub policy: ParamSet<S>,
}

/// Everything [`DualPathModel::backward`] needs from a training forward pass.
#[derive(Debug)]
pub struct RoutedTrace<S> {
    batch: usize,
    samples: Vec<Vec<GumbelSample>>,
    weights: Vec<Vec<f64>>,
    frozen_caches: Vec<Option<BlockCache<S>>>,
    tuned_caches: Vec<Option<BlockCache<S>>>,
    /// `frozen_l(x) - tuned_l(x)` per block.
    diffs: Vec<Tensor<S>>,
    policy: PolicyTrace<S>,
}

impl<S> RoutedTrace<S> {
    pub fn indicators(&self) -> Vec<IndicatorVector> {
        self.samples
            .iter()
            .map(|row| IndicatorVector {
                hard: row.iter().map(|s| s.hard).collect(),
                soft: row.iter().map(|s| s.soft).collect(),
            })
            .collect()
    }
}

impl<S: Scalar> DualPathModel<S> {
    /// Duplicates `pretrained` and attaches a fresh policy network.
    pub fn from_pretrained(pretrained: &SegmentationNetwork<S>, gumbel: GumbelConfig, policy_seed: u64) -> Result<Self> {
        gumbel.validate()?;
        let (frozen, tuned) = pretrained.clone_for_finetuning();
        let layout = PolicyLayout::new(pretrained.num_blocks(), pretrained.config().input_channels);
        let policy = PolicyNetwork::new(layout, policy_seed)?;
        Self::new(frozen, tuned, policy, gumbel)
    }

    pub fn new(
        mut frozen: SegmentationNetwork<S>,
        mut tuned: SegmentationNetwork<S>,
        policy: PolicyNetwork<S>,
        gumbel: GumbelConfig,
    ) -> Result<Self> {
        gumbel.validate()?;
        if frozen.config() != tuned.config() {
            return Err(Error::Config("frozen and tuned copies have different configs".into()));
        }
        if policy.num_blocks() != frozen.num_blocks() {
            return Err(Error::Dimension(format!(
                "policy predicts {} blocks but the network has {}",
                policy.num_blocks(),
                frozen.num_blocks()
            )));
        }
        frozen.set_all_trainable(false);
        tuned.set_all_trainable(true);
        Ok(DualPathModel {
            frozen,
            tuned,
            policy,
            gumbel,
        })
    }

    pub fn frozen(&self) -> &SegmentationNetwork<S> {
        &self.frozen
    }

    pub fn tuned(&self) -> &SegmentationNetwork<S> {
        &self.tuned
    }

    pub fn tuned_mut(&mut self) -> &mut SegmentationNetwork<S> {
        &mut self.tuned
    }

    pub fn policy(&self) -> &PolicyNetwork<S> {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut PolicyNetwork<S> {
        &mut self.policy
    }

    pub fn gumbel(&self) -> &GumbelConfig {
        &self.gumbel
    }

    pub fn num_blocks(&self) -> usize {
        self.frozen.num_blocks()
    }

    pub fn zero_grads(&self) -> DualGrads<S> {
        DualGrads {
            tuned: self.tuned.params().zeros_like(),
            policy: self.policy.params().zeros_like(),
        }
    }

    /// Tuned-copy and policy parameters, prefixed `tuned.` and `policy.`.
    pub fn trainable_parameters(&self) -> Vec<(String, &Param<S>)> {
        self.tuned
            .params()
            .iter()
            .map(|p| (format!("tuned.{}", p.name), p))
            .chain(self.policy.params().iter().map(|p| (format!("policy.{}", p.name), p)))
            .collect()
    }

    pub fn trainable_parameters_mut(&mut self) -> Vec<(String, &mut Param<S>)> {
        let DualPathModel { tuned, policy, .. } = self;
        tuned
            .params_mut()
            .iter_mut()
            .map(|p| (format!("tuned.{}", p.name), p))
            .chain(policy.params_mut().iter_mut().map(|p| (format!("policy.{}", p.name), p)))
            .collect()
    }

    /// Parameter sets updated by the optimizer with their trainable masks.
    pub(crate) fn trainable_sets_mut(&mut self) -> (&mut ParamSet<S>, &mut ParamSet<S>) {
        (self.tuned.params_mut(), self.policy.params_mut())
    }

    fn decide(&self, x: &Tensor<S>, mode: &RouteMode, rng: Option<&mut ChaCha8Rng>) -> Result<Vec<Vec<GumbelSample>>> {
        let n = self.num_blocks();
        match mode {
            RouteMode::Forced(ind) => {
                if ind.len() != n {
                    return Err(Error::Dimension(format!(
                        "forced indicator vector has length {}, network has {n} blocks",
                        ind.len()
                    )));
                }
                let row: Vec<GumbelSample> = (0..n)
                    .map(|l| GumbelSample {
                        hard: ind.hard[l],
                        soft: ind.soft[l],
                        noise: (0.0, 0.0),
                    })
                    .collect();
                Ok(vec![row; x.batch()])
            }
            RouteMode::EvalArgmax => {
                let logits = self.policy.forward(x)?;
                Ok((0..x.batch())
                    .map(|b| (0..n).map(|l| argmax_sample(logits.pair(b, l))).collect())
                    .collect())
            }
            RouteMode::TrainSample => {
                let logits = self.policy.forward(x)?;
                let rng = rng.ok_or_else(|| Error::Config("sampling requires a random stream".into()))?;
                Ok(sample_all(&logits, &self.gumbel, rng))
            }
        }
    }

    fn weight(&self, s: &GumbelSample) -> f64 {
        if self.gumbel.hard {
            s.hard_value()
        } else {
            s.soft
        }
    }

    /// Inference through the routed network. `rng` is required for [`RouteMode::TrainSample`].
    pub fn routed_forward(
        &self,
        x: &FeatureMap<S>,
        mode: &RouteMode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(FeatureMap<S>, Vec<IndicatorVector>)> {
        self.frozen.check_input(x)?;
        let samples = self.decide(x, mode, rng)?;
        let weights: Vec<Vec<f64>> = samples
            .iter()
            .map(|row| row.iter().map(|s| if matches!(mode, RouteMode::TrainSample) { self.weight(s) } else { s.hard_value() }).collect())
            .collect();
        let y = execute_forward(self.frozen.topology(), x, |l, input| {
            let w: Vec<f64> = weights.iter().map(|row| row[l]).collect();
            Ok(self.mix_forward(l, input, &w))
        })?;
        let indicators = samples
            .iter()
            .map(|row| IndicatorVector {
                hard: row.iter().map(|s| s.hard).collect(),
                soft: row.iter().map(|s| s.soft).collect(),
            })
            .collect();
        Ok((y, indicators))
    }

    fn mix_forward(&self, l: usize, input: &Tensor<S>, w: &[f64]) -> Tensor<S> {
        if w.iter().all(|&v| v == 1.0) {
            return self.frozen.block_forward(l, input);
        }
        if w.iter().all(|&v| v == 0.0) {
            return self.tuned.block_forward(l, input);
        }
        let f = self.frozen.block_forward(l, input);
        let t = self.tuned.block_forward(l, input);
        combine(&f, &t, w)
    }

    /// Training forward pass with fresh Gumbel noise; records everything the
    /// backward pass needs.
    pub fn forward_train(&self, x: &FeatureMap<S>, rng: &mut ChaCha8Rng) -> Result<(FeatureMap<S>, RoutedTrace<S>)> {
        self.frozen.check_input(x)?;
        let (logits, ptrace) = self.policy.forward_train(x)?;
        let samples = sample_all(&logits, &self.gumbel, rng);
        self.forward_train_with(x, samples, ptrace)
    }

    /// Training forward pass with caller-supplied noise `(batch, N)`.
    pub fn forward_train_with_noise(&self, x: &FeatureMap<S>, noise: &[Vec<(f64, f64)>]) -> Result<(FeatureMap<S>, RoutedTrace<S>)> {
        self.frozen.check_input(x)?;
        let (logits, ptrace) = self.policy.forward_train(x)?;
        if noise.len() != x.batch() || noise.iter().any(|r| r.len() != self.num_blocks()) {
            return Err(Error::Dimension("noise must be (batch, N)".into()));
        }
        let samples = (0..x.batch())
            .map(|b| {
                (0..self.num_blocks())
                    .map(|l| gumbel_softmax_with_noise(logits.pair(b, l), noise[b][l], self.gumbel.tau))
                    .collect()
            })
            .collect();
        self.forward_train_with(x, samples, ptrace)
    }

    fn forward_train_with(
        &self,
        x: &FeatureMap<S>,
        samples: Vec<Vec<GumbelSample>>,
        ptrace: PolicyTrace<S>,
    ) -> Result<(FeatureMap<S>, RoutedTrace<S>)> {
        let n = self.num_blocks();
        let weights: Vec<Vec<f64>> = samples.iter().map(|row| row.iter().map(|s| self.weight(s)).collect()).collect();
        let mut frozen_caches = Vec::with_capacity(n);
        let mut tuned_caches = Vec::with_capacity(n);
        let mut diffs = Vec::with_capacity(n);
        let y = execute_forward(self.frozen.topology(), x, |l, input| {
            let (f, fc) = self.frozen.block_forward_cached(l, input);
            let (t, tc) = self.tuned.block_forward_cached(l, input);
            let w: Vec<f64> = weights.iter().map(|row| row[l]).collect();
            let out = combine(&f, &t, &w);
            let mut d = f;
            for (a, &b) in d.data_mut().iter_mut().zip(t.data()) {
                *a -= b;
            }
            diffs.push(d);
            frozen_caches.push(Some(fc));
            tuned_caches.push(Some(tc));
            Ok(out)
        })?;
        Ok((
            y,
            RoutedTrace {
                batch: x.batch(),
                samples,
                weights,
                frozen_caches,
                tuned_caches,
                diffs,
                policy: ptrace,
            },
        ))
    }

    /// Backpropagates `d loss / d logits` plus an extra gradient on the soft
    /// indicators (`extra_soft_grad[b][l]`, e.g. from the policy regularizer).
    /// Frozen parameters never receive gradients.
    pub fn backward(
        &self,
        trace: &RoutedTrace<S>,
        dy: &FeatureMap<S>,
        extra_soft_grad: Option<&[Vec<f64>]>,
        grads: &mut DualGrads<S>,
    ) -> Result<()> {
        let n = self.num_blocks();
        let batch = trace.batch;
        // d loss / d indicator value, per sample and block.
        let mut d_ind = vec![vec![0.0f64; n]; batch];
        let DualGrads { tuned: tuned_grads, policy: policy_grads } = grads;
        execute_backward(self.frozen.topology(), self.frozen.config(), dy.clone(), |l, g| {
            let diff = &trace.diffs[l];
            for (b, row) in d_ind.iter_mut().enumerate() {
                row[l] = g
                    .sample(b)
                    .iter()
                    .zip(diff.sample(b))
                    .map(|(&a, &c)| (a * c).to_f64_lossy())
                    .sum();
            }
            let w: Vec<f64> = trace.weights.iter().map(|row| row[l]).collect();
            let need_dx = l > 0;
            let mut dx: Option<Tensor<S>> = None;
            if w.iter().any(|&v| v != 0.0) {
                let gf = scale_samples(&g, &w, false);
                let cache = trace.frozen_caches[l].as_ref().expect("frozen cache");
                if need_dx {
                    dx = self.frozen.block_backward(l, cache, &gf, None, true);
                }
            }
            if w.iter().any(|&v| v != 1.0) {
                let gt = scale_samples(&g, &w, true);
                let cache = trace.tuned_caches[l].as_ref().expect("tuned cache");
                let want = self.tuned.block_trainable(l);
                if want || need_dx {
                    let d = self.tuned.block_backward(l, cache, &gt, want.then_some(&mut *tuned_grads), need_dx);
                    if let Some(d) = d {
                        match dx.as_mut() {
                            Some(acc) => acc.add_assign(&d),
                            None => dx = Some(d),
                        }
                    }
                }
            }
            Ok(dx.unwrap_or_else(|| Tensor::zeros(input_shape(self.frozen.config(), l, &g))))
        })?;

        if let Some(extra) = extra_soft_grad {
            for (row, e) in d_ind.iter_mut().zip(extra) {
                for (v, &x) in row.iter_mut().zip(e) {
                    *v += x;
                }
            }
        }
        let mut dlogits = vec![S::zero(); batch * n * 2];
        for b in 0..batch {
            for l in 0..n {
                let (d0, d1) = trace.samples[b][l].soft_grad(self.gumbel.tau);
                let i = (b * n + l) * 2;
                dlogits[i] = S::from_f64_lossy(d_ind[b][l] * d0);
                dlogits[i + 1] = S::from_f64_lossy(d_ind[b][l] * d1);
            }
        }
        self.policy.backward(&trace.policy, &dlogits, policy_grads);
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> DualPathModel<T> {
        DualPathModel {
            frozen: self.frozen.cast(),
            tuned: self.tuned.cast(),
            policy: self.policy.cast(),
            gumbel: self.gumbel,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_checkpoint(
            dir,
            self.frozen.config(),
            self.frozen.seed(),
            Some(self.gumbel),
            Some(self.policy.layout().clone()),
            &[
                SectionData {
                    name: "frozen",
                    params: self.frozen.params(),
                    trainable: self.frozen.trainable_mask(),
                },
                SectionData {
                    name: "tuned",
                    params: self.tuned.params(),
                    trainable: self.tuned.trainable_mask(),
                },
                SectionData {
                    name: "policy",
                    params: self.policy.params(),
                    trainable: &vec![true; self.policy.params().len()],
                },
            ],
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, sections) = read_checkpoint::<S>(dir)?;
        let gumbel = manifest
            .gumbel
            .ok_or_else(|| Error::format(dir, "dual-path checkpoint lacks a `gumbel` section"))?;
        let layout = manifest
            .policy
            .clone()
            .ok_or_else(|| Error::format(dir, "dual-path checkpoint lacks a policy layout"))?;
        let mut by_name = std::collections::HashMap::new();
        for (sec, data) in manifest.sections.iter().zip(sections) {
            by_name.insert(sec.name.clone(), data);
        }
        let mut take = |name: &str| {
            by_name
                .remove(name)
                .ok_or_else(|| Error::format(dir, format!("checkpoint has no `{name}` section")))
        };
        let (fp, ff) = take("frozen")?;
        let (tp, tf) = take("tuned")?;
        let (pp, _) = take("policy")?;
        let frozen = SegmentationNetwork::from_parts(manifest.config.clone(), manifest.seed, fp, ff)?;
        let tuned = SegmentationNetwork::from_parts(manifest.config.clone(), manifest.seed, tp, tf)?;
        let policy = PolicyNetwork::new(layout, 0)?.with_params(pp)?;
        Self::new(frozen, tuned, policy, gumbel)
    }
}

fn sample_all<S: Scalar>(logits: &PolicyLogits<S>, cfg: &GumbelConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<GumbelSample>> {
    (0..logits.batch)
        .map(|b| {
            (0..logits.num_blocks)
                .map(|l| gumbel_softmax_with_noise(logits.pair(b, l), draw_noise(rng), cfg.tau))
                .collect()
        })
        .collect()
}

/// `w * f + (1 - w) * t`, sample-wise.
fn combine<S: Scalar>(f: &Tensor<S>, t: &Tensor<S>, w: &[f64]) -> Tensor<S> {
    let mut out = t.clone();
    for (b, &wb) in w.iter().enumerate() {
        if wb == 0.0 {
            continue;
        }
        let ws = S::from_f64_lossy(wb);
        let one_minus = S::from_f64_lossy(1.0 - wb);
        for (o, &fv) in out.sample_mut(b).iter_mut().zip(f.sample(b)) {
            *o = ws * fv + one_minus * *o;
        }
    }
    out
}

/// Scales each sample by `w` (or `1 - w` when `complement`).
fn scale_samples<S: Scalar>(g: &Tensor<S>, w: &[f64], complement: bool) -> Tensor<S> {
    let mut out = g.clone();
    for (b, &wb) in w.iter().enumerate() {
        let s = if complement { 1.0 - wb } else { wb };
        if s == 1.0 {
            continue;
        }
        let s = S::from_f64_lossy(s);
        for v in out.sample_mut(b) {
            *v *= s;
        }
    }
    out
}

fn input_shape<S: Scalar>(config: &crate::backbone::NetworkConfig, l: usize, g: &Tensor<S>) -> [usize; 4] {
    let spec = &config.blocks[l];
    let [n, _, h, w] = g.shape();
    match spec.scale {
        crate::backbone::Scale::Same => [n, spec.in_channels, h, w],
        crate::backbone::Scale::Down2 => [n, spec.in_channels, h * 2, w * 2],
        crate::backbone::Scale::Up2 => [n, spec.in_channels, h / 2, w / 2],
    }
}

/// Independent random stream for a run.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
