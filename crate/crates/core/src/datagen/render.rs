use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::anatomy::{TissueMap, BACKGROUND};
use crate::error::{Error, Result};

/// Tissue means of the canonical rendering for soft tissue, skull and brain.
pub const CANONICAL_CONTRAST: [f64; 3] = [0.45, 0.15, 0.75];

/// Intensity characteristics of one synthetic scanner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: String,
    pub gamma: f64,
    pub bias_amp: f64,
    pub noise_sigma: f64,
    pub contrast_levels: [f64; 3],
    pub blur_sigma: f64,
}

impl DomainSpec {
    pub fn identity(domain_id: impl Into<String>) -> Self {
        DomainSpec {
            domain_id: domain_id.into(),
            gamma: 1.0,
            bias_amp: 0.0,
            noise_sigma: 0.0,
            contrast_levels: CANONICAL_CONTRAST,
            blur_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("domain `{}`: {what}", self.domain_id)));
        if self.domain_id.is_empty() || self.domain_id.contains(['/', '\\']) {
            return bad("id must be a non-empty path component");
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad("gamma must be positive");
        }
        for (v, name) in [(self.bias_amp, "bias_amp"), (self.noise_sigma, "noise_sigma"), (self.blur_sigma, "blur_sigma")] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be non-negative"));
            }
        }
        if self.contrast_levels.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return bad("contrast levels must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Multiplicative field `1 + amp * mean_j cos(.) cos(.)` built from 2 to 4
/// low-frequency cosine products.
fn bias_field(h: usize, w: usize, amp: f64, rng: &mut impl Rng) -> Vec<f64> {
    let terms = rng.random_range(2..=4usize);
    let params: Vec<[f64; 4]> = (0..terms)
        .map(|_| {
            [
                rng.random_range(0.3..1.5),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.3..1.5),
                rng.random_range(0.0..2.0 * PI),
            ]
        })
        .collect();
    let mut field = vec![1.0; h * w];
    if amp == 0.0 {
        return field;
    }
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = ((y as f64 + 0.5) / h as f64, (x as f64 + 0.5) / w as f64);
            let s: f64 = params
                .iter()
                .map(|[a, pa, b, pb]| (2.0 * PI * a * fx + pa).cos() * (2.0 * PI * b * fy + pb).cos())
                .sum();
            field[y * w + x] = 1.0 + amp * s / terms as f64;
        }
    }
    field
}

/// Separable Gaussian blur with clamped borders.
fn gaussian_blur(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return img.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-radius..=radius)
                .zip(&kernel)
                .map(|(d, k)| k * img[y * w + clamp(x as isize + d, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-radius..=radius)
                .zip(&kernel)
                .map(|(d, k)| k * tmp[clamp(y as isize + d, h) * w + x])
                .sum();
        }
    }
    out
}

/// `clip(gamma(clip(blur(contrast * bias + noise))))`. The random draws do
/// not depend on the spec, so two specs rendered from equal generator states
/// differ only through their parameters.
pub fn render_domain(tissue: &TissueMap, spec: &DomainSpec, rng: &mut impl Rng) -> Result<Vec<f32>> {
    spec.validate()?;
    let (h, w) = (tissue.height, tissue.width);
    let bias = bias_field(h, w, spec.bias_amp, rng);
    let mut img: Vec<f64> = tissue
        .labels
        .iter()
        .zip(&bias)
        .map(|(&l, b)| {
            let noise: f64 = StandardNormal.sample(rng);
            let base = if l == BACKGROUND { 0.0 } else { spec.contrast_levels[l as usize - 1] * b };
            base + spec.noise_sigma * noise
        })
        .collect();
    img = gaussian_blur(&img, h, w, spec.blur_sigma);
    Ok(img
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0).powf(spec.gamma).clamp(0.0, 1.0) as f32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::anatomy::generate_anatomy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tissue() -> TissueMap {
        generate_anatomy(5, (32, 32)).unwrap().0
    }

    #[test]
    fn identity_spec_is_piecewise_constant() {
        let t = tissue();
        let img = render_domain(&t, &DomainSpec::identity("c"), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (&l, &v) in t.labels.iter().zip(&img) {
            let want = if l == 0 { 0.0 } else { CANONICAL_CONTRAST[l as usize - 1] as f32 };
            assert_eq!(v, want);
        }
    }

    #[test]
    fn gamma_is_a_pixelwise_power() {
        let t = tissue();
        let mut spec = DomainSpec::identity("g");
        spec.bias_amp = 0.3;
        let one = render_domain(&t, &spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        spec.gamma = 2.0;
        let two = render_domain(&t, &spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for (a, b) in one.iter().zip(&two) {
            assert!((a * a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn noisy_blurred_renders_stay_in_unit_range() {
        let t = tissue();
        let spec = DomainSpec {
            domain_id: "n".into(),
            gamma: 0.7,
            bias_amp: 0.5,
            noise_sigma: 0.3,
            contrast_levels: [1.0, 0.9, 0.2],
            blur_sigma: 1.2,
        };
        let img = render_domain(&t, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = DomainSpec::identity("x");
        s.gamma = 0.0;
        assert!(s.validate().is_err());
        let mut s = DomainSpec::identity("x");
        s.contrast_levels[1] = 1.5;
        assert!(s.validate().is_err());
        assert!(DomainSpec::identity("a/b").validate().is_err());
    }
}
