use crate::error::{Error, Result};

pub const HIST_BINS: usize = 256;

fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * HIST_BINS as f32) as usize).min(HIST_BINS - 1)
}

/// Quantile mapping through the target's 256-bin CDF. Inside a bin the rank
/// is interpolated linearly between the smallest and largest target values
/// that fall in it (a point mass takes the bin's middle rank); the output is
/// the reference quantile at that rank's probability.
pub fn histogram_match(target: &[f32], reference: &[f32]) -> Result<Vec<f32>> {
    if target.is_empty() || reference.is_empty() {
        return Err(Error::Dimension("histogram matching needs non-empty images".into()));
    }
    let mut counts = [0usize; HIST_BINS];
    let mut lo = [f32::INFINITY; HIST_BINS];
    let mut hi = [f32::NEG_INFINITY; HIST_BINS];
    for &v in target {
        let b = bin_of(v);
        counts[b] += 1;
        lo[b] = lo[b].min(v);
        hi[b] = hi[b].max(v);
    }
    let mut below = [0usize; HIST_BINS];
    for b in 1..HIST_BINS {
        below[b] = below[b - 1] + counts[b - 1];
    }
    let mut sorted = reference.to_vec();
    sorted.sort_by(f32::total_cmp);
    let n = target.len() as f64;
    let m = sorted.len();
    Ok(target
        .iter()
        .map(|&v| {
            let b = bin_of(v);
            // interpolated rank within the bin's ranks below+1 ..= below+count
            let c = counts[b] as f64;
            let rank = if hi[b] > lo[b] {
                below[b] as f64 + 1.0 + ((v - lo[b]) / (hi[b] - lo[b])) as f64 * (c - 1.0)
            } else {
                below[b] as f64 + (c + 1.0) / 2.0
            };
            let p = (rank - 0.5) / n;
            let idx = ((p * m as f64).floor() as usize).min(m - 1);
            sorted[idx].clamp(0.0, 1.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matching_an_image_to_itself_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img: Vec<f32> = (0..900).map(|_| rng.random_range(0.0..1.0)).collect();
        let out = histogram_match(&img, &img).unwrap();
        for (a, b) in img.iter().zip(&out) {
            assert!((a - b).abs() <= 1.0 / 256.0);
        }
    }

    #[test]
    fn constant_image_maps_to_reference_median() {
        let reference: Vec<f32> = (0..101).map(|i| i as f32 / 100.0).collect();
        let out = histogram_match(&[0.3; 16], &reference).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_is_monotone_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t: Vec<f32> = (0..500).map(|_| rng.random_range(0.0..1.0f32).powi(3)).collect();
        let r: Vec<f32> = (0..400).map(|_| rng.random_range(0.2..0.9)).collect();
        let out = histogram_match(&t, &r).unwrap();
        let mut pairs: Vec<(f32, f32)> = t.iter().copied().zip(out).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(pairs.iter().all(|p| (0.2..0.9).contains(&p.1)));
    }
}
