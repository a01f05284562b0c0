//! Residual U-Net expressed as an ordered sequence of routable blocks.

mod block;
pub mod checkpoint;
mod config;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use block::BlockCache;
pub(crate) use block::{block_backward, block_forward, residual_backward, residual_forward, residual_params};
pub use config::{BlockKind, BlockSpec, NetworkConfig, Scale};
pub(crate) use config::Topology;

use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Feature maps flowing between blocks.
pub type FeatureMap<S> = Tensor<S>;

#[derive(Clone, Debug)]
pub struct SegmentationNetwork<S> {
    config: NetworkConfig,
    topology: Topology,
    seed: u64,
    params: ParamSet<S>,
    block_ranges: Vec<Range<usize>>,
    trainable: Vec<bool>,
}

/// Caches recorded by [`SegmentationNetwork::forward_train`].
#[derive(Debug)]
pub struct NetTrace<S> {
    caches: Vec<BlockCache<S>>,
}

pub fn build_network<S: Scalar>(config: &NetworkConfig, seed: u64) -> Result<SegmentationNetwork<S>> {
    SegmentationNetwork::new(config.clone(), seed)
}

impl<S: Scalar> SegmentationNetwork<S> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let topology = config.topology()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut block_ranges = Vec::with_capacity(config.blocks.len());
        for spec in &config.blocks {
            let start = params.len();
            params.extend(block::block_params::<S>(spec, &mut rng));
            block_ranges.push(start..params.len());
        }
        let trainable = vec![true; params.len()];
        Ok(SegmentationNetwork {
            config,
            topology,
            seed,
            params: ParamSet::new(params),
            block_ranges,
            trainable,
        })
    }

    /// Replaces every parameter value; names and shapes must match the config.
    pub fn with_params(mut self, params: ParamSet<S>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter arrays, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (have, want) in params.iter().zip(self.params.iter()) {
            if have.name != want.name || have.shape != want.shape {
                return Err(Error::Dimension(format!(
                    "parameter `{}` {:?} does not match expected `{}` {:?}",
                    have.name, have.shape, want.name, want.shape
                )));
            }
        }
        self.params = params;
        Ok(self)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn num_blocks(&self) -> usize {
        self.config.blocks.len()
    }

    /// The routable blocks in execution order.
    pub fn enumerate_blocks(&self) -> &[BlockSpec] {
        &self.config.blocks
    }

    /// Index range of block `l` inside [`Self::params`].
    pub fn block_param_range(&self, l: usize) -> Range<usize> {
        self.block_ranges[l].clone()
    }

    pub fn block_params(&self, l: usize) -> &[Param<S>] {
        &self.params.as_slice()[self.block_ranges[l].clone()]
    }

    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable
    }

    pub fn set_all_trainable(&mut self, flag: bool) {
        self.trainable.fill(flag);
    }

    /// Marks only the parameters of the first `k` blocks trainable.
    pub fn set_trainable_first_k(&mut self, k: usize) -> Result<()> {
        self.set_trainable_blocks(|l| l < k, k)
    }

    /// Marks only the parameters of the last `k` blocks trainable.
    pub fn set_trainable_last_k(&mut self, k: usize) -> Result<()> {
        let n = self.num_blocks();
        self.set_trainable_blocks(|l| l + k >= n, k)
    }

    fn set_trainable_blocks(&mut self, pick: impl Fn(usize) -> bool, k: usize) -> Result<()> {
        if k > self.num_blocks() {
            return Err(Error::Config(format!(
                "k = {k} exceeds the number of blocks ({})",
                self.num_blocks()
            )));
        }
        for (l, range) in self.block_ranges.iter().enumerate() {
            for i in range.clone() {
                self.trainable[i] = pick(l);
            }
        }
        Ok(())
    }

    pub fn block_trainable(&self, l: usize) -> bool {
        self.block_ranges[l].clone().any(|i| self.trainable[i])
    }

    /// Duplicates the network into a frozen copy and a trainable copy.
    pub fn clone_for_finetuning(&self) -> (Self, Self) {
        let mut frozen = self.clone();
        frozen.set_all_trainable(false);
        let mut tuned = self.clone();
        tuned.set_all_trainable(true);
        (frozen, tuned)
    }

    pub fn cast<T: Scalar>(&self) -> SegmentationNetwork<T> {
        SegmentationNetwork {
            config: self.config.clone(),
            topology: self.topology.clone(),
            seed: self.seed,
            params: self.params.cast(),
            block_ranges: self.block_ranges.clone(),
            trainable: self.trainable.clone(),
        }
    }

    pub(crate) fn topology(&self) -> &Topology {
        &self.topology
    }

    pub(crate) fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        check_input(&self.config, &self.topology, x)
    }

    /// Runs block `l` alone.
    pub fn block_forward(&self, l: usize, x: &Tensor<S>) -> Tensor<S> {
        block_forward(&self.config.blocks[l], self.block_params(l), x, false).0
    }

    pub(crate) fn block_forward_cached(&self, l: usize, x: &Tensor<S>) -> (Tensor<S>, BlockCache<S>) {
        let (y, c) = block_forward(&self.config.blocks[l], self.block_params(l), x, true);
        (y, c.expect("cache requested"))
    }

    /// Backward of block `l`. Accumulates into `grads` (a full network gradient
    /// buffer) when given.
    pub(crate) fn block_backward(
        &self,
        l: usize,
        cache: &BlockCache<S>,
        dy: &Tensor<S>,
        grads: Option<&mut ParamSet<S>>,
        need_dx: bool,
    ) -> Option<Tensor<S>> {
        let range = self.block_ranges[l].clone();
        let g = grads.map(|g| &mut g.as_mut_slice()[range]);
        block_backward(&self.config.blocks[l], self.block_params(l), cache, dy, g, need_dx)
    }

    /// Per-pixel pre-sigmoid logits.
    pub fn forward(&self, x: &FeatureMap<S>) -> Result<FeatureMap<S>> {
        self.check_input(x)?;
        execute_forward(&self.topology, x, |l, input| Ok(self.block_forward(l, input)))
    }

    pub fn forward_train(&self, x: &FeatureMap<S>) -> Result<(FeatureMap<S>, NetTrace<S>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.num_blocks());
        let y = execute_forward(&self.topology, x, |l, input| {
            let (y, c) = self.block_forward_cached(l, input);
            caches.push(c);
            Ok(y)
        })?;
        Ok((y, NetTrace { caches }))
    }

    /// Accumulates parameter gradients of trainable blocks into `grads` and
    /// returns the gradient with respect to the network input.
    pub fn backward(&self, trace: &NetTrace<S>, dy: &FeatureMap<S>, grads: &mut ParamSet<S>) -> Result<FeatureMap<S>> {
        let mut grads = Some(grads);
        execute_backward(&self.topology, &self.config, dy.clone(), |l, g| {
            let want = self.block_trainable(l);
            let dx = self.block_backward(l, &trace.caches[l], &g, if want { grads.as_deref_mut() } else { None }, true);
            Ok(dx.expect("input gradient requested"))
        })
    }
}

pub(crate) fn check_input<S: Scalar>(config: &NetworkConfig, topo: &Topology, x: &Tensor<S>) -> Result<()> {
    if x.channels() != config.input_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, network expects {}",
            x.channels(),
            config.input_channels
        )));
    }
    let div = 1usize << topo.max_level;
    if !x.height().is_multiple_of(div) || !x.width().is_multiple_of(div) || x.height() == 0 || x.width() == 0 {
        return Err(Error::Shape(format!(
            "spatial size {}x{} is not divisible by {div}",
            x.height(),
            x.width()
        )));
    }
    if x.batch() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

/// Runs the block graph, feeding skip connections. `eval(l, input)` computes block `l`.
pub(crate) fn execute_forward<S: Scalar, F>(topo: &Topology, x: &Tensor<S>, mut eval: F) -> Result<Tensor<S>>
where
    F: FnMut(usize, &Tensor<S>) -> Result<Tensor<S>>,
{
    let n = topo.skip_from.len();
    let mut saved: Vec<Option<Tensor<S>>> = vec![None; n];
    let mut prev: Option<Tensor<S>> = None;
    for l in 0..n {
        let current = prev.as_ref().unwrap_or(x);
        let out = match topo.skip_from[l] {
            Some(src) => {
                let skip = saved[src].as_ref().expect("skip source computed earlier");
                let joined = Tensor::concat_channels(current, skip)?;
                eval(l, &joined)?
            }
            None => eval(l, current)?,
        };
        if topo.is_skip_source[l] {
            saved[l] = Some(out.clone());
        }
        prev = Some(out);
    }
    Ok(prev.expect("at least one block"))
}

/// Reverse sweep of [`execute_forward`]. `back(l, dy)` returns the gradient
/// with respect to block `l`'s (possibly concatenated) input.
pub(crate) fn execute_backward<S: Scalar, F>(
    topo: &Topology,
    config: &NetworkConfig,
    dy: Tensor<S>,
    mut back: F,
) -> Result<Tensor<S>>
where
    F: FnMut(usize, Tensor<S>) -> Result<Tensor<S>>,
{
    let n = topo.skip_from.len();
    let mut pending: Vec<Option<Tensor<S>>> = vec![None; n];
    let mut g = dy;
    for l in (0..n).rev() {
        if let Some(extra) = pending[l].take() {
            g.add_assign(&extra);
        }
        let dx = back(l, g)?;
        g = match topo.skip_from[l] {
            Some(src) => {
                let (main, skip) = dx.split_channels(config.blocks[l - 1].out_channels);
                match pending[src].as_mut() {
                    Some(acc) => acc.add_assign(&skip),
                    None => pending[src] = Some(skip),
                }
                main
            }
            None => dx,
        };
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::ConvGeom;
    use rand::Rng;

    fn random_input<S: Scalar>(shape: [usize; 4], seed: u64) -> Tensor<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| S::from_f64_lossy(rng.random_range(0.0..1.0))).collect()).unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = NetworkConfig::default();
        let a = build_network::<f32>(&cfg, 0).unwrap();
        let b = build_network::<f32>(&cfg, 0).unwrap();
        assert_eq!(a.params(), b.params());
        let c = build_network::<f32>(&cfg, 1).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn default_output_shape_matches_input() {
        let net = build_network::<f32>(&NetworkConfig::default(), 0).unwrap();
        let y = net.forward(&random_input([1, 1, 64, 64], 3)).unwrap();
        assert_eq!(y.shape(), [1, 1, 64, 64]);
        assert!(y.is_finite());
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let mut net = build_network::<f64>(&NetworkConfig::unet(4), 0).unwrap();
        net.params_mut().fill_zero();
        let y = net.forward(&random_input([2, 1, 16, 16], 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_input_is_a_shape_error() {
        let net = build_network::<f32>(&NetworkConfig::unet(4), 0).unwrap();
        let err = net.forward(&random_input([1, 1, 18, 16], 0)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        let err = net.forward(&random_input([1, 2, 16, 16], 0)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn forward_matches_manual_block_composition() {
        let net = build_network::<f64>(&NetworkConfig::unet(4), 7).unwrap();
        let x = random_input::<f64>([2, 1, 16, 16], 11);
        let blocks = net.enumerate_blocks();
        let mut outs: Vec<Tensor<f64>> = Vec::new();
        let mut cur = x.clone();
        for (l, spec) in blocks.iter().enumerate() {
            let input = match spec.name.as_str() {
                "dec1" => Tensor::concat_channels(&cur, &outs[net.config().block_index("enc2").unwrap()]).unwrap(),
                "dec3" => Tensor::concat_channels(&cur, &outs[net.config().block_index("enc1").unwrap()]).unwrap(),
                _ => cur.clone(),
            };
            cur = net.block_forward(l, &input);
            outs.push(cur.clone());
        }
        let y = net.forward(&x).unwrap();
        assert!(y.max_abs_diff(&cur) < 1e-6);
    }

    #[test]
    fn block_output_spatial_scales() {
        let net = build_network::<f32>(&NetworkConfig::unet(2), 0).unwrap();
        let x = random_input::<f32>([1, 2, 8, 8], 0);
        let down = net.config().block_index("down1").unwrap();
        assert_eq!(net.block_forward(down, &x).shape(), [1, 4, 4, 4]);
        assert_eq!(ConvGeom::DOWN3.out_size(8), 4);
    }

    #[test]
    fn clone_isolation() {
        let net = build_network::<f32>(&NetworkConfig::unet(4), 0).unwrap();
        let (frozen, mut tuned) = net.clone_for_finetuning();
        assert!(frozen.trainable_mask().iter().all(|t| !t));
        assert!(tuned.trainable_mask().iter().all(|&t| t));
        let x = random_input::<f32>([1, 1, 16, 16], 5);
        assert_eq!(frozen.forward(&x).unwrap(), tuned.forward(&x).unwrap());
        let before = frozen.forward(&x).unwrap();
        for p in tuned.params_mut().iter_mut() {
            for v in &mut p.data {
                *v += 0.1;
            }
        }
        assert_eq!(frozen.forward(&x).unwrap(), before);
        assert_eq!(frozen.params(), net.params());
    }

    #[test]
    fn first_k_mask() {
        let mut net = build_network::<f32>(&NetworkConfig::unet(4), 0).unwrap();
        net.set_trainable_first_k(3).unwrap();
        for l in 0..net.num_blocks() {
            assert_eq!(net.block_trainable(l), l < 3);
        }
        assert!(net.set_trainable_first_k(18).is_err());
        net.set_trainable_last_k(2).unwrap();
        assert!(net.block_trainable(16) && net.block_trainable(15) && !net.block_trainable(14));
    }
}
