//! Surface Dice at a distance tolerance, volumetric Dice, and the one-sided
//! Wilcoxon signed-rank test used to compare paired per-image scores.

mod surface;
mod wilcoxon;

pub use surface::{dice_score, extract_surface, surface_dice, BinaryMask, SurfaceDiceResult};
pub use wilcoxon::{wilcoxon_one_sided, EXACT_MAX_N};
