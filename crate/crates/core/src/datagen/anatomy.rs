use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

/// Background label; tissue classes are 1 (soft tissue), 2 (skull), 3 (brain).
pub const BACKGROUND: u8 = 0;
pub const SOFT_TISSUE: u8 = 1;
pub const SKULL: u8 = 2;
pub const BRAIN: u8 = 3;

/// Per-pixel tissue labels of one synthetic head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TissueMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

/// Smooth closed contour `r(theta) = 1 + sum_k a_k cos(k theta + phi_k)`.
struct Contour {
    terms: Vec<(f64, f64, f64)>,
}

impl Contour {
    fn random(rng: &mut ChaCha8Rng, amp: f64) -> Self {
        let terms = (2..=4)
            .map(|k| (k as f64, rng.random_range(0.0..amp), rng.random_range(0.0..2.0 * PI)))
            .collect();
        Contour { terms }
    }

    fn radius(&self, theta: f64) -> f64 {
        1.0 + self.terms.iter().map(|(k, a, p)| a * (k * theta + p).cos()).sum::<f64>()
    }
}

/// Draws a head: a soft-tissue shell, a skull ring, and a brain region
/// (the mask) that may contain darker ventricle-like pockets.
pub fn generate_anatomy(seed: u64, size: (usize, usize)) -> Result<(TissueMap, BinaryMask)> {
    let (h, w) = size;
    if h < 32 || w < 32 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::Config(format!(
            "anatomy size must be at least 32x32 and divisible by 8, got {h}x{w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = h.min(w) as f64;
    let cy = h as f64 / 2.0 + rng.random_range(-0.04..0.04) * side;
    let cx = w as f64 / 2.0 + rng.random_range(-0.04..0.04) * side;
    let base = rng.random_range(0.36..0.43) * side;
    let aspect = rng.random_range(0.8..1.0);
    let (ay, ax) = if rng.random_bool(0.5) { (base, base * aspect) } else { (base * aspect, base) };
    let rot = rng.random_range(0.0..PI);
    let head = Contour::random(&mut rng, 0.05);
    let skull_outer = rng.random_range(0.80..0.86);
    let skull_inner = skull_outer - rng.random_range(0.11..0.15);
    let brain = Contour::random(&mut rng, 0.04);
    let n_pockets = rng.random_range(0..=2usize);
    let pockets: Vec<(f64, f64, f64, f64)> = (0..n_pockets)
        .map(|_| {
            let r = rng.random_range(0.0..0.3);
            let t = rng.random_range(0.0..2.0 * PI);
            (r * t.cos(), r * t.sin(), rng.random_range(0.08..0.16), rng.random_range(0.05..0.1))
        })
        .collect();

    let (sin_r, cos_r) = rot.sin_cos();
    let mut labels = vec![BACKGROUND; h * w];
    let mut inside = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let u = (dx * cos_r + dy * sin_r) / ax;
            let v = (-dx * sin_r + dy * cos_r) / ay;
            let rho = (u * u + v * v).sqrt();
            let theta = v.atan2(u);
            let rh = head.radius(theta);
            if rho > rh {
                continue;
            }
            let brain_edge = skull_inner * rh.min(rh * brain.radius(theta));
            labels[y * w + x] = if rho > skull_outer * rh {
                SOFT_TISSUE
            } else if rho > brain_edge {
                SKULL
            } else {
                // pockets are part of the brain region but render darker
                inside[y * w + x] = 1;
                let pocket = pockets
                    .iter()
                    .any(|&(pu, pv, a, b)| ((u - pu) / a).powi(2) + ((v - pv) / b).powi(2) <= 1.0);
                if pocket {
                    SOFT_TISSUE
                } else {
                    BRAIN
                }
            };
        }
    }
    let mask = BinaryMask::from_2d(inside, h, w)?;
    Ok((TissueMap { height: h, width: w, labels }, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_anatomy(11, (32, 32)).unwrap();
        let b = generate_anatomy(11, (32, 32)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, generate_anatomy(12, (32, 32)).unwrap().0);
    }

    #[test]
    fn mask_lies_inside_head_and_off_the_skull() {
        for seed in 0..20 {
            let (t, m) = generate_anatomy(seed, (64, 48)).unwrap();
            for (i, &v) in m.values().iter().enumerate() {
                if v == 1 {
                    assert!(t.labels[i] == BRAIN || t.labels[i] == SOFT_TISSUE);
                    let (y, x) = (i / t.width, i % t.width);
                    assert!(y > 0 && x > 0 && y + 1 < t.height && x + 1 < t.width);
                } else {
                    assert_ne!(t.labels[i], BRAIN);
                }
            }
            let skull = t.labels.iter().filter(|&&l| l == SKULL).count();
            assert!(skull > 0);
        }
    }

    #[test]
    fn mask_area_fraction_is_bounded() {
        for seed in 0..100 {
            let (_, m) = generate_anatomy(seed, (32, 32)).unwrap();
            let frac = m.count() as f64 / 1024.0;
            assert!((0.1..=0.6).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn rejects_small_or_misaligned_sizes() {
        assert!(generate_anatomy(0, (24, 32)).is_err());
        assert!(generate_anatomy(0, (36, 32)).is_err());
    }
}
