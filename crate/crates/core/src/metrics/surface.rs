use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary mask on a regular grid with physical spacing per axis (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    values: Vec<u8>,
    shape: Vec<usize>,
    spacing: Vec<f64>,
}

impl BinaryMask {
    pub fn new(values: Vec<u8>, shape: Vec<usize>, spacing: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&shape.len()) {
            return Err(Error::Dimension(format!("masks are 2D or 3D, got {} axes", shape.len())));
        }
        if spacing.len() != shape.len() {
            return Err(Error::Dimension("one spacing value per axis required".into()));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("spacing must be strictly positive, got {spacing:?}")));
        }
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "{} values cannot fill shape {:?}",
                values.len(),
                shape
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Config("mask entries must be 0 or 1".into()));
        }
        Ok(BinaryMask { values, shape, spacing })
    }

    /// 2D mask with unit spacing.
    pub fn from_2d(values: Vec<u8>, height: usize, width: usize) -> Result<Self> {
        Self::new(values, vec![height, width], vec![1.0, 1.0])
    }

    /// Thresholds values at `> threshold`.
    pub fn from_scores<T: Copy + PartialOrd>(scores: &[T], threshold: T, shape: Vec<usize>, spacing: Vec<f64>) -> Result<Self> {
        Self::new(scores.iter().map(|&s| u8::from(s > threshold)).collect(), shape, spacing)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    fn dims3(&self) -> [usize; 3] {
        if self.shape.len() == 2 {
            [1, self.shape[0], self.shape[1]]
        } else {
            [self.shape[0], self.shape[1], self.shape[2]]
        }
    }

    fn spacing3(&self) -> [f64; 3] {
        if self.spacing.len() == 2 {
            [1.0, self.spacing[0], self.spacing[1]]
        } else {
            [self.spacing[0], self.spacing[1], self.spacing[2]]
        }
    }

    fn check_compatible(&self, other: &BinaryMask) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "mask shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        if self.spacing != other.spacing {
            return Err(Error::Dimension(format!(
                "mask spacings differ: {:?} vs {:?}",
                self.spacing, other.spacing
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDiceResult {
    pub score: f64,
    pub tolerance_mm: f64,
}

/// Foreground elements with a face-adjacent background or out-of-bounds
/// neighbour, as coordinates in the mask's own axis order.
pub fn extract_surface(mask: &BinaryMask) -> Vec<Vec<usize>> {
    let flags = surface_flags(mask);
    let [d0, d1, d2] = mask.dims3();
    let two_d = mask.shape.len() == 2;
    let mut out = Vec::new();
    for z in 0..d0 {
        for y in 0..d1 {
            for x in 0..d2 {
                if flags[(z * d1 + y) * d2 + x] {
                    out.push(if two_d { vec![y, x] } else { vec![z, y, x] });
                }
            }
        }
    }
    out
}

fn surface_flags(mask: &BinaryMask) -> Vec<bool> {
    let [d0, d1, d2] = mask.dims3();
    let three_d = mask.shape.len() == 3;
    let v = &mask.values;
    let idx = |z: usize, y: usize, x: usize| (z * d1 + y) * d2 + x;
    let mut flags = vec![false; v.len()];
    for z in 0..d0 {
        for y in 0..d1 {
            for x in 0..d2 {
                if v[idx(z, y, x)] == 0 {
                    continue;
                }
                let mut edge = y == 0 || y + 1 == d1 || x == 0 || x + 1 == d2;
                if three_d {
                    edge |= z == 0 || z + 1 == d0;
                }
                if !edge {
                    edge = v[idx(z, y - 1, x)] == 0
                        || v[idx(z, y + 1, x)] == 0
                        || v[idx(z, y, x - 1)] == 0
                        || v[idx(z, y, x + 1)] == 0
                        || (three_d && (v[idx(z - 1, y, x)] == 0 || v[idx(z + 1, y, x)] == 0));
                }
                flags[idx(z, y, x)] = edge;
            }
        }
    }
    flags
}

/// Squared physical distance between two grid cells.
#[inline]
pub(crate) fn sq_dist(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        let d = (a[k] as f64 - b[k] as f64) * spacing[k];
        s += d * d;
    }
    s
}

/// Counts points of `from` lying within `tol` of any point flagged in `to`,
/// scanning only the box of cells that can be within range.
fn count_within(from: &[bool], to: &[bool], dims: [usize; 3], spacing: [f64; 3], tol: f64) -> usize {
    let [d0, d1, d2] = dims;
    let reach: Vec<usize> = spacing.iter().map(|&s| (tol / s).floor() as usize).collect();
    let tol2 = tol * tol;
    let mut hits = 0;
    for z in 0..d0 {
        for y in 0..d1 {
            for x in 0..d2 {
                if !from[(z * d1 + y) * d2 + x] {
                    continue;
                }
                let (z0, z1) = (z.saturating_sub(reach[0]), (z + reach[0]).min(d0 - 1));
                let (y0, y1) = (y.saturating_sub(reach[1]), (y + reach[1]).min(d1 - 1));
                let (x0, x1) = (x.saturating_sub(reach[2]), (x + reach[2]).min(d2 - 1));
                let found = (z0..=z1).any(|zz| {
                    (y0..=y1).any(|yy| {
                        (x0..=x1).any(|xx| to[(zz * d1 + yy) * d2 + xx] && sq_dist([z, y, x], [zz, yy, xx], spacing) <= tol2)
                    })
                });
                if found {
                    hits += 1;
                }
            }
        }
    }
    hits
}

/// Symmetric fraction of boundary elements lying within `tolerance_mm` of the
/// other mask's boundary. 1.0 when both surfaces are empty, 0.0 when one is.
pub fn surface_dice(a: &BinaryMask, b: &BinaryMask, tolerance_mm: f64) -> Result<SurfaceDiceResult> {
    a.check_compatible(b)?;
    if !(tolerance_mm > 0.0) || !tolerance_mm.is_finite() {
        return Err(Error::Config(format!("tolerance must be positive, got {tolerance_mm}")));
    }
    let fa = surface_flags(a);
    let fb = surface_flags(b);
    let na = fa.iter().filter(|&&f| f).count();
    let nb = fb.iter().filter(|&&f| f).count();
    let score = match (na, nb) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => {
            let dims = a.dims3();
            let sp = a.spacing3();
            let hits = count_within(&fa, &fb, dims, sp, tolerance_mm) + count_within(&fb, &fa, dims, sp, tolerance_mm);
            hits as f64 / (na + nb) as f64
        }
    };
    Ok(SurfaceDiceResult {
        score,
        tolerance_mm,
    })
}

/// Volumetric Dice `2|a∩b| / (|a|+|b|)`; 1.0 when both are empty.
pub fn dice_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::Dimension(format!(
            "mask shapes differ: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let inter = a.values.iter().zip(&b.values).filter(|(&x, &y)| x == 1 && y == 1).count();
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}
