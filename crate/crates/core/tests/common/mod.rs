#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Foreground pixels with a 4-neighbour that is background or off the grid.
pub fn brute_surface(v: &[u8], h: usize, w: usize) -> Vec<(usize, usize)> {
    let at = |y: isize, x: isize| -> u8 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0
        } else {
            v[y as usize * w + x as usize]
        }
    };
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if at(y, x) == 1 && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| at(y + dy, x + dx) == 0) {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

/// All-pairs surface Dice with Euclidean distances in mm.
pub fn brute_surface_dice(a: &[u8], b: &[u8], h: usize, w: usize, spacing: (f64, f64), tol: f64) -> f64 {
    let sa = brute_surface(a, h, w);
    let sb = brute_surface(b, h, w);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    if sa.is_empty() || sb.is_empty() {
        return 0.0;
    }
    let dist = |p: (usize, usize), q: (usize, usize)| {
        let dy = (p.0 as f64 - q.0 as f64) * spacing.0;
        let dx = (p.1 as f64 - q.1 as f64) * spacing.1;
        (dy * dy + dx * dx).sqrt()
    };
    let close = |from: &[(usize, usize)], to: &[(usize, usize)]| from.iter().filter(|&&p| to.iter().any(|&q| dist(p, q) <= tol)).count();
    (close(&sa, &sb) + close(&sb, &sa)) as f64 / (sa.len() + sb.len()) as f64
}

/// Random mask with a random foreground density, so nearly empty and nearly
/// full masks both occur.
pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> Vec<u8> {
    let density: f64 = rng.random();
    (0..h * w).map(|_| u8::from(rng.random::<f64>() < density)).collect()
}

/// One-sided signed-rank p-value and the null probability of the observed
/// statistic, by listing every sign assignment of the midranks.
pub fn enumerate_wilcoxon(x: &[f64], y: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return (1.0, 1.0);
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&a| {
            let below = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let (mut ge, mut eq) = (0u64, 0u64);
    for signs in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w >= observed - 1e-9 {
            ge += 1;
        }
        if (w - observed).abs() < 1e-9 {
            eq += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (ge as f64 / total, eq as f64 / total)
}

/// Paired scores on a coarse grid so ties and zero differences are common.
pub fn random_pairs(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 10.0).collect();
    let y: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 10.0).collect();
    (x, y)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

use spottunet_core::params::ParamSet;

#[derive(Debug)]
pub struct FdReport {
    pub checked: usize,
    /// Entries that only matched at a smaller step.
    pub retried: usize,
    pub worst: f64,
}

/// Central-difference check of `analytic` against `loss` on up to
/// `per_tensor` entries of every parameter tensor reachable through `params`.
/// Step 1e-4, relative tolerance 1e-3. An entry whose stencil straddles a
/// ReLU kink is re-checked at 1e-5, 1e-6 and 1e-7.
pub fn finite_difference_check<M: Clone>(
    model: &M,
    params: impl Fn(&mut M) -> &mut ParamSet<f64>,
    analytic: &ParamSet<f64>,
    loss: impl Fn(&M) -> f64,
    per_tensor: usize,
    seed: u64,
) -> Result<FdReport, String> {
    const H: f64 = 1e-4;
    const REL_TOL: f64 = 1e-3;
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let (mut checked, mut retried) = (0usize, 0usize);
    let mut probe = model.clone();
    let mut central = |t: usize, i: usize, h: f64| {
        let orig = params(&mut probe).as_slice()[t].data[i];
        params(&mut probe).as_mut_slice()[t].data[i] = orig + h;
        let up = loss(&probe);
        params(&mut probe).as_mut_slice()[t].data[i] = orig - h;
        let down = loss(&probe);
        params(&mut probe).as_mut_slice()[t].data[i] = orig;
        (up - down) / (2.0 * h)
    };
    let rel = |num: f64, ana: f64| {
        let scale = num.abs().max(ana.abs());
        if scale < 1e-9 {
            0.0
        } else {
            (num - ana).abs() / scale
        }
    };
    for t in 0..analytic.len() {
        let len = analytic.as_slice()[t].data.len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| r.random_range(0..len)).collect()
        };
        for i in picks {
            let ana = analytic.as_slice()[t].data[i];
            checked += 1;
            let mut e = rel(central(t, i, H), ana);
            if e > REL_TOL {
                retried += 1;
                for h in [1e-5, 1e-6, 1e-7] {
                    let num = central(t, i, h);
                    e = rel(num, ana);
                    if e <= REL_TOL {
                        break;
                    }
                    if h == 1e-7 {
                        return Err(format!("{}[{i}]: numeric {num:e} vs analytic {ana:e}", analytic.as_slice()[t].name));
                    }
                }
            }
            worst = worst.max(e);
        }
    }
    Ok(FdReport { checked, retried, worst })
}
