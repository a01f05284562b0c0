//! Synthetic multi-domain segmentation benchmark: head-like anatomies rendered
//! under several scanner intensity profiles, plus histogram matching and
//! scarce-subset sampling.

mod anatomy;
mod dataset;
mod histogram;
mod render;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use anatomy::{generate_anatomy, TissueMap, BACKGROUND, BRAIN, SKULL, SOFT_TISSUE};
pub use dataset::{
    build_dataset, to_batch, Dataset, DatasetConfig, DomainData, Sample, SplitSizes, Splits, DATASET_FORMAT_VERSION,
};
pub use histogram::{histogram_match, HIST_BINS};
pub use render::{render_domain, DomainSpec, CANONICAL_CONTRAST};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FullTrain {
    Full,
}

/// Number of annotated target samples available for fine-tuning, or the
/// whole training split. Serialized as a number or `"full"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScarcitySetup {
    Slices(usize),
    Full(FullTrain),
}

impl ScarcitySetup {
    pub const FULL: ScarcitySetup = ScarcitySetup::Full(FullTrain::Full);

    /// Concrete subset size for a training pool of `pool` samples.
    pub fn resolve(&self, pool: usize) -> Result<usize> {
        match *self {
            ScarcitySetup::Full(_) => Ok(pool),
            ScarcitySetup::Slices(0) => Err(Error::Config("scarcity setup must request at least one sample".into())),
            ScarcitySetup::Slices(n) if n > pool => Err(Error::Config(format!(
                "scarcity setup requests {n} samples but the training pool has {pool}"
            ))),
            ScarcitySetup::Slices(n) => Ok(n),
        }
    }
}

impl fmt::Display for ScarcitySetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScarcitySetup::Slices(n) => write!(f, "{n}"),
            ScarcitySetup::Full(_) => f.write_str("full"),
        }
    }
}

/// Deterministic subset of the domain's training split.
pub fn sample_scarce_subset(domain: &DomainData, setup: ScarcitySetup, seed: u64) -> Result<Vec<usize>> {
    let n = setup.resolve(domain.splits.train.len())?;
    let mut ids = domain.splits.train.clone();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids.truncate(n);
    ids.sort_unstable();
    Ok(ids)
}

/// The canonical identity domain followed by five shifted scanners. The
/// second domain is a pure gamma change.
pub fn default_domains() -> Vec<DomainSpec> {
    let spec = |id: &str, gamma, bias_amp, noise_sigma, contrast_levels, blur_sigma| DomainSpec {
        domain_id: id.into(),
        gamma,
        bias_amp,
        noise_sigma,
        contrast_levels,
        blur_sigma,
    };
    vec![
        DomainSpec::identity("canonical"),
        spec("gamma", 0.15, 0.0, 0.0, CANONICAL_CONTRAST, 0.0),
        spec("inverted", 1.0, 0.1, 0.02, [0.8, 0.3, 0.4], 0.0),
        spec("biased", 1.4, 0.4, 0.04, [0.55, 0.3, 0.6], 0.0),
        spec("smooth", 0.8, 0.2, 0.03, [0.3, 0.7, 0.9], 0.8),
        spec("holdout", 1.2, 0.25, 0.03, [0.6, 0.85, 0.4], 0.5),
    ]
}

impl DatasetConfig {
    /// 64x64 images, 64 anatomies per domain.
    pub fn desk(seed: u64) -> Self {
        DatasetConfig {
            seed,
            height: 64,
            width: 64,
            spacing_mm: 1.0,
            split: SplitSizes {
                train: 40,
                val: 8,
                test: 16,
            },
            domains: default_domains(),
        }
    }

    /// Same domains and splits at 32x32.
    pub fn compact(seed: u64) -> Self {
        DatasetConfig {
            height: 32,
            width: 32,
            ..Self::desk(seed)
        }
    }
}
