use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::ParamSet;
use crate::scalar::Scalar;

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Stochastic gradient descent with heavy-ball momentum:
/// `v = mu * v + g; p -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<S> {
    momentum: S,
    velocity: ParamSet<S>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(params: &ParamSet<S>, momentum: f64) -> Self {
        Sgd {
            momentum: S::from_f64_lossy(momentum),
            velocity: params.zeros_like(),
        }
    }

    /// Updates the parameters whose `trainable` flag is set (all when `None`).
    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &ParamSet<S>, lr: f64, trainable: Option<&[bool]>) {
        let lr = S::from_f64_lossy(lr);
        for (i, ((p, g), v)) in params.iter_mut().zip(grads.iter()).zip(self.velocity.iter_mut()).enumerate() {
            if trainable.is_some_and(|t| !t[i]) {
                continue;
            }
            for ((pv, &gv), vv) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= lr * *vv;
            }
        }
    }
}

/// Draws mini-batches from a pool: sequential passes over reshuffled orders,
/// or uniform draws with replacement when the pool is smaller than a batch.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(pool: Vec<usize>, seed: u64) -> Self {
        assert!(!pool.is_empty(), "batch sampler needs a non-empty pool");
        let mut s = BatchSampler {
            order: pool.clone(),
            pool,
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.pool.len() < size {
            return (0..size).map(|_| self.pool[self.rng.random_range(0..self.pool.len())]).collect();
        }
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Param;

    #[test]
    fn momentum_accumulates() {
        let mut p = ParamSet::new(vec![Param::filled("w", vec![1], 1.0f64)]);
        let g = ParamSet::new(vec![Param::filled("w", vec![1], 1.0f64)]);
        let mut opt = Sgd::new(&p, 0.9);
        opt.step(&mut p, &g, 0.1, None);
        assert!((p.as_slice()[0].data[0] - 0.9).abs() < 1e-12);
        opt.step(&mut p, &g, 0.1, None);
        assert!((p.as_slice()[0].data[0] - (0.9 - 0.19)).abs() < 1e-12);
    }

    #[test]
    fn masked_parameters_do_not_move() {
        let mut p = ParamSet::new(vec![Param::filled("a", vec![2], 1.0f32), Param::filled("b", vec![2], 1.0)]);
        let g = ParamSet::new(vec![Param::filled("a", vec![2], 1.0f32), Param::filled("b", vec![2], 1.0)]);
        let mut opt = Sgd::new(&p, 0.9);
        opt.step(&mut p, &g, 0.5, Some(&[false, true]));
        assert_eq!(p.as_slice()[0].data, vec![1.0, 1.0]);
        assert_eq!(p.as_slice()[1].data, vec![0.5, 0.5]);
    }

    #[test]
    fn sampler_covers_the_pool_each_pass() {
        let mut s = BatchSampler::new((0..12).collect(), 4);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch(4)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn small_pools_are_sampled_with_replacement() {
        let mut s = BatchSampler::new(vec![3, 9], 0);
        let b = s.next_batch(8);
        assert_eq!(b.len(), 8);
        assert!(b.iter().all(|i| *i == 3 || *i == 9));
    }
}
