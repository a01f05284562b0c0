//! Small ResNet mapping an image to one `(frozen, tuned)` logit pair per block.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{residual_backward, residual_forward, residual_params, BlockCache};
use crate::error::{Error, Result};
use crate::ops;
use crate::params::{Param, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyLayout {
    pub num_blocks: usize,
    pub input_channels: usize,
    /// Input is average-pooled by this power-of-two factor before the first stage.
    pub downsample_factor: usize,
    pub stage_widths: Vec<usize>,
}

impl PolicyLayout {
    pub fn new(num_blocks: usize, input_channels: usize) -> Self {
        PolicyLayout {
            num_blocks,
            input_channels,
            downsample_factor: 2,
            stage_widths: vec![8, 16, 32, 64],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.input_channels == 0 || self.stage_widths.is_empty() {
            return Err(Error::Config("policy layout needs blocks, channels and stages".into()));
        }
        if !self.downsample_factor.is_power_of_two() {
            return Err(Error::Config(format!(
                "policy downsample factor {} is not a power of two",
                self.downsample_factor
            )));
        }
        if self.stage_widths.contains(&0) {
            return Err(Error::Config("policy stage widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PolicyNetwork<S> {
    layout: PolicyLayout,
    params: ParamSet<S>,
    stage_ranges: Vec<std::ops::Range<usize>>,
}

/// Policy logits for a batch: `(batch, N, 2)` row-major, index 0 = frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyLogits<S> {
    pub batch: usize,
    pub num_blocks: usize,
    pub values: Vec<S>,
}

impl<S: Scalar> PolicyLogits<S> {
    pub fn pair(&self, b: usize, l: usize) -> (f64, f64) {
        let i = (b * self.num_blocks + l) * 2;
        (self.values[i].to_f64_lossy(), self.values[i + 1].to_f64_lossy())
    }
}

#[derive(Debug)]
pub struct PolicyTrace<S> {
    stages: Vec<(BlockCache<S>, Option<[usize; 4]>)>,
    pooled_shape: [usize; 4],
    features: Vec<S>,
}

impl<S: Scalar> PolicyNetwork<S> {
    pub fn new(layout: PolicyLayout, seed: u64) -> Result<Self> {
        layout.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut stage_ranges = Vec::new();
        let mut cin = layout.input_channels;
        for (i, &w) in layout.stage_widths.iter().enumerate() {
            let start = params.len();
            params.extend(residual_params::<S>(&format!("stage{i}"), cin, w, &mut rng));
            stage_ranges.push(start..params.len());
            cin = w;
        }
        let outs = 2 * layout.num_blocks;
        params.push(Param::fan_in_uniform("head.weight", vec![outs, cin], cin, &mut rng));
        params.push(Param::zeros("head.bias", vec![outs]));
        Ok(PolicyNetwork {
            layout,
            params: ParamSet::new(params),
            stage_ranges,
        })
    }

    pub fn layout(&self) -> &PolicyLayout {
        &self.layout
    }

    pub fn num_blocks(&self) -> usize {
        self.layout.num_blocks
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn with_params(mut self, params: ParamSet<S>) -> Result<Self> {
        let same = params.len() == self.params.len()
            && params
                .iter()
                .zip(self.params.iter())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !same {
            return Err(Error::Dimension("policy parameters do not match the layout".into()));
        }
        self.params = params;
        Ok(self)
    }

    /// Sets the output layer to zero so every block starts at (0, 0).
    pub fn zero_head(&mut self) {
        let n = self.params.len();
        for p in &mut self.params.as_mut_slice()[n - 2..] {
            p.data.fill(S::zero());
        }
    }

    pub fn cast<T: Scalar>(&self) -> PolicyNetwork<T> {
        PolicyNetwork {
            layout: self.layout.clone(),
            params: self.params.cast(),
            stage_ranges: self.stage_ranges.clone(),
        }
    }

    fn run(&self, x: &Tensor<S>, keep: bool) -> Result<(PolicyLogits<S>, Option<PolicyTrace<S>>)> {
        if x.channels() != self.layout.input_channels {
            return Err(Error::Shape(format!(
                "policy input has {} channels, expected {}",
                x.channels(),
                self.layout.input_channels
            )));
        }
        let mut h = x.clone();
        let mut f = self.layout.downsample_factor;
        while f > 1 && h.height() >= 2 && h.width() >= 2 {
            h = ops::avg_pool2_forward(&h);
            f /= 2;
        }
        let mut stages = Vec::with_capacity(self.stage_ranges.len());
        for (i, range) in self.stage_ranges.iter().enumerate() {
            let p = &self.params.as_slice()[range.clone()];
            let (y, cache) = residual_forward(p, self.layout.stage_widths[i], &h, keep);
            let pooled_from = (y.height() >= 2 && y.width() >= 2).then(|| y.shape());
            h = if pooled_from.is_some() { ops::avg_pool2_forward(&y) } else { y };
            if let Some(c) = cache {
                stages.push((c, pooled_from));
            }
        }
        let pooled_shape = h.shape();
        let features = ops::global_avg_pool(&h);
        let n = self.params.len();
        let (w, b) = (&self.params.as_slice()[n - 2], &self.params.as_slice()[n - 1]);
        let fin = pooled_shape[1];
        let outs = 2 * self.layout.num_blocks;
        let values = ops::linear_forward(&features, x.batch(), fin, &w.data, &b.data, outs);
        let logits = PolicyLogits {
            batch: x.batch(),
            num_blocks: self.layout.num_blocks,
            values,
        };
        let trace = keep.then_some(PolicyTrace {
            stages,
            pooled_shape,
            features,
        });
        Ok((logits, trace))
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<PolicyLogits<S>> {
        Ok(self.run(x, false)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<S>) -> Result<(PolicyLogits<S>, PolicyTrace<S>)> {
        let (l, t) = self.run(x, true)?;
        Ok((l, t.expect("trace requested")))
    }

    /// Accumulates parameter gradients for `d loss / d logits`.
    pub fn backward(&self, trace: &PolicyTrace<S>, dlogits: &[S], grads: &mut ParamSet<S>) {
        let n = self.params.len();
        let batch = trace.pooled_shape[0];
        let fin = trace.pooled_shape[1];
        let outs = 2 * self.layout.num_blocks;
        let w = &self.params.as_slice()[n - 2];
        let (head_w, head_b) = grads.as_mut_slice()[n - 2..].split_at_mut(1);
        let dfeat = ops::linear_backward(
            &trace.features,
            batch,
            fin,
            &w.data,
            outs,
            dlogits,
            Some(&mut head_w[0].data),
            Some(&mut head_b[0].data),
        );
        let mut g = ops::global_avg_pool_backward(trace.pooled_shape, &dfeat);
        for (i, range) in self.stage_ranges.iter().enumerate().rev() {
            let (cache, pooled_from) = &trace.stages[i];
            if let Some(shape) = pooled_from {
                g = ops::avg_pool2_backward(*shape, &g);
            }
            let p = &self.params.as_slice()[range.clone()];
            let gslice = &mut grads.as_mut_slice()[range.clone()];
            let need_dx = i > 0;
            match residual_backward(p, self.layout.stage_widths[i], cache, &g, Some(gslice), need_dx) {
                Some(dx) => g = dx,
                None => break,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn image(batch: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec([batch, 1, 32, 32], (0..batch * 1024).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn output_has_one_pair_per_block() {
        let net = PolicyNetwork::<f64>::new(PolicyLayout::new(17, 1), 0).unwrap();
        let logits = net.forward(&image(3, 0)).unwrap();
        assert_eq!(logits.values.len(), 3 * 17 * 2);
        assert!(logits.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_head_gives_even_odds() {
        let mut net = PolicyNetwork::<f64>::new(PolicyLayout::new(5, 1), 0).unwrap();
        net.zero_head();
        let logits = net.forward(&image(2, 1)).unwrap();
        assert!(logits.values.iter().all(|&v| v == 0.0));
        let (a, b) = logits.pair(1, 3);
        let p0 = a.exp() / (a.exp() + b.exp());
        assert_eq!(p0, 0.5);
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let net = PolicyNetwork::<f64>::new(PolicyLayout::new(4, 1), 3).unwrap();
        let x = image(2, 2);
        let swapped = x.select(&[1, 0]);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&swapped).unwrap();
        for l in 0..4 {
            assert_eq!(a.pair(0, l), b.pair(1, l));
            assert_eq!(a.pair(1, l), b.pair(0, l));
        }
        assert_eq!(net.forward(&x).unwrap(), a);
    }

    #[test]
    fn handles_inputs_smaller_than_the_pooling_depth() {
        let net = PolicyNetwork::<f64>::new(PolicyLayout::new(3, 1), 0).unwrap();
        let x = Tensor::filled([1, 1, 4, 4], 0.5);
        assert_eq!(net.forward(&x).unwrap().values.len(), 6);
    }
}
