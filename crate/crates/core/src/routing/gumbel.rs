//! Two-class Gumbel-Softmax relaxation of the frozen/fine-tuned choice.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumbelConfig {
    /// Softmax temperature, strictly positive.
    pub tau: f64,
    /// Straight-through mode: compose with the hard decision, differentiate the soft one.
    pub hard: bool,
    pub seed: u64,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            tau: 0.1,
            hard: true,
            seed: 0,
        }
    }
}

impl GumbelConfig {
    pub fn new(tau: f64, seed: u64) -> Result<Self> {
        let cfg = GumbelConfig { tau, hard: true, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("Gumbel temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// One relaxed draw for a single block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GumbelSample {
    /// `true` when the frozen block is chosen.
    pub hard: bool,
    /// Relaxed probability of the frozen class.
    pub soft: f64,
    /// Noise added to the (frozen, tuned) logits.
    pub noise: (f64, f64),
}

impl GumbelSample {
    pub fn hard_value(&self) -> f64 {
        if self.hard {
            1.0
        } else {
            0.0
        }
    }

    /// `(d soft / d logit_frozen, d soft / d logit_tuned)` at the recorded noise.
    pub fn soft_grad(&self, tau: f64) -> (f64, f64) {
        let d = self.soft * (1.0 - self.soft) / tau;
        (d, -d)
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Relaxation with explicit noise. Ties at exactly 0.5 resolve to the frozen block.
pub fn gumbel_softmax_with_noise(logits: (f64, f64), noise: (f64, f64), tau: f64) -> GumbelSample {
    let z = ((logits.0 + noise.0) - (logits.1 + noise.1)) / tau;
    let soft = sigmoid(z);
    GumbelSample {
        hard: soft >= 0.5,
        soft,
        noise,
    }
}

pub fn draw_noise(rng: &mut impl Rng) -> (f64, f64) {
    let g = Gumbel::new(0.0, 1.0).expect("standard Gumbel");
    (g.sample(rng), g.sample(rng))
}

/// Samples the relaxed indicator for one `(frozen, tuned)` logit pair.
pub fn gumbel_softmax_sample(logits: (f64, f64), cfg: &GumbelConfig, rng: &mut impl Rng) -> Result<GumbelSample> {
    cfg.validate()?;
    Ok(gumbel_softmax_with_noise(logits, draw_noise(rng), cfg.tau))
}

/// Deterministic decision used at evaluation: frozen iff `softmax(logits)[0] >= 0.5`.
pub fn argmax_sample(logits: (f64, f64)) -> GumbelSample {
    let soft = sigmoid(logits.0 - logits.1);
    GumbelSample {
        hard: soft >= 0.5,
        soft,
        noise: (0.0, 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nonpositive_tau_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for tau in [0.0, -1.0, f64::NAN] {
            let cfg = GumbelConfig { tau, hard: true, seed: 0 };
            assert!(matches!(gumbel_softmax_sample((0.0, 0.0), &cfg, &mut rng), Err(Error::Config(_))));
        }
    }

    #[test]
    fn saturated_logits_always_choose_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GumbelConfig::new(0.1, 0).unwrap();
        for _ in 0..100_000 {
            assert!(gumbel_softmax_sample((50.0, -50.0), &cfg, &mut rng).unwrap().hard);
        }
    }

    #[test]
    fn uniform_logits_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = GumbelConfig { tau: 1.0, hard: true, seed: 0 };
        let frozen = (0..10_000)
            .filter(|_| gumbel_softmax_sample((0.0, 0.0), &cfg, &mut rng).unwrap().hard)
            .count();
        let frac = frozen as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn soft_gradient_matches_central_differences() {
        let noise = (0.3, -0.7);
        for &(l0, l1, tau) in &[(0.2, -0.1, 1.0), (1.5, 0.4, 0.5), (-0.3, 0.2, 2.0), (0.05, 0.0, 0.1)] {
            let s = gumbel_softmax_with_noise((l0, l1), noise, tau);
            let (g0, g1) = s.soft_grad(tau);
            let h = 1e-4;
            let n0 = (gumbel_softmax_with_noise((l0 + h, l1), noise, tau).soft
                - gumbel_softmax_with_noise((l0 - h, l1), noise, tau).soft)
                / (2.0 * h);
            let n1 = (gumbel_softmax_with_noise((l0, l1 + h), noise, tau).soft
                - gumbel_softmax_with_noise((l0, l1 - h), noise, tau).soft)
                / (2.0 * h);
            assert!((n0 - g0).abs() <= 1e-3 * n0.abs().max(1e-12), "{n0} vs {g0}");
            assert!((n1 - g1).abs() <= 1e-3 * n1.abs().max(1e-12), "{n1} vs {g1}");
        }
    }

    #[test]
    fn exact_tie_resolves_to_frozen() {
        let s = gumbel_softmax_with_noise((0.0, 0.0), (0.0, 0.0), 1.0);
        assert_eq!(s.soft, 0.5);
        assert!(s.hard);
        assert!(argmax_sample((1.0, 1.0)).hard);
    }

    #[test]
    fn hard_marginal_is_the_softmax_of_the_logits() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = GumbelConfig { tau: 1.0, hard: true, seed: 0 };
        for _ in 0..10 {
            let logits = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let hits = (0..10_000)
                .filter(|_| gumbel_softmax_sample(logits, &cfg, &mut rng).unwrap().hard)
                .count();
            let expected = sigmoid(logits.0 - logits.1);
            assert!((hits as f64 / 10_000.0 - expected).abs() <= 0.02, "{logits:?}");
        }
    }

    #[test]
    fn lower_temperature_moves_soft_towards_hard() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws: Vec<((f64, f64), (f64, f64))> = (0..2000)
            .map(|_| ((rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)), draw_noise(&mut rng)))
            .collect();
        let gap = |tau: f64| {
            draws
                .iter()
                .map(|&(l, n)| {
                    let s = gumbel_softmax_with_noise(l, n, tau);
                    (s.soft - s.hard_value()).abs()
                })
                .sum::<f64>()
                / draws.len() as f64
        };
        let gaps: Vec<f64> = [2.0, 1.0, 0.5, 0.1].iter().map(|&t| gap(t)).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");
    }
}
