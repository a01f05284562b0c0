use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::anatomy::generate_anatomy;
use super::render::{render_domain, DomainSpec};
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::scalar::Scalar;
use crate::seeding::derive_seed;
use crate::tensor::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub spacing_mm: f64,
    pub split: SplitSizes,
    pub domains: Vec<DomainSpec>,
}

impl DatasetConfig {
    pub fn samples_per_domain(&self) -> usize {
        self.split.train + self.split.val + self.split.test
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Config("dataset needs at least one domain".into()));
        }
        for d in &self.domains {
            d.validate()?;
        }
        let mut ids: Vec<&str> = self.domains.iter().map(|d| d.domain_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("domain ids must be unique".into()));
        }
        if self.split.train == 0 || self.split.test == 0 {
            return Err(Error::Config("train and test splits must be non-empty".into()));
        }
        if !(self.spacing_mm > 0.0) {
            return Err(Error::Config("spacing must be positive".into()));
        }
        if self.height < 32 || self.width < 32 || !self.height.is_multiple_of(8) || !self.width.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "image size must be at least 32x32 and divisible by 8, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub domain_id: String,
    pub sample_id: usize,
    pub height: usize,
    pub width: usize,
    pub spacing_mm: f64,
    pub anatomy_seed: u64,
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
}

impl Sample {
    pub fn binary_mask(&self) -> BinaryMask {
        BinaryMask::new(self.mask.clone(), vec![self.height, self.width], vec![self.spacing_mm; 2])
            .expect("stored masks are valid")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainData {
    pub spec: DomainSpec,
    pub samples: Vec<Sample>,
    pub splits: Splits,
}

impl DomainData {
    fn pick(&self, ids: &[usize]) -> Vec<&Sample> {
        ids.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn train(&self) -> Vec<&Sample> {
        self.pick(&self.splits.train)
    }

    pub fn val(&self) -> Vec<&Sample> {
        self.pick(&self.splits.val)
    }

    pub fn test(&self) -> Vec<&Sample> {
        self.pick(&self.splits.test)
    }

    pub fn samples_by_id(&self, ids: &[usize]) -> Result<Vec<&Sample>> {
        ids.iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .ok_or_else(|| Error::Missing(format!("sample {i} in domain `{}`", self.spec.domain_id)))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub domains: Vec<DomainData>,
}

#[derive(Serialize, Deserialize)]
struct DatasetIndex {
    format_version: u32,
    config: DatasetConfig,
    splits: BTreeMap<String, Splits>,
}

#[derive(Serialize, Deserialize)]
struct SampleSidecar {
    shape: [usize; 2],
    image_dtype: String,
    mask_dtype: String,
    spacing: [f64; 2],
    domain_id: String,
    sample_id: usize,
    generator_seed: u64,
}

/// Renders every domain. Each domain has its own anatomies; the mask of an
/// anatomy never depends on the domain that renders it.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.samples_per_domain();
    let mut domains = Vec::with_capacity(config.domains.len());
    for spec in &config.domains {
        let id = spec.domain_id.as_str();
        let mut samples = Vec::with_capacity(n);
        for s in 0..n {
            let anatomy_seed = derive_seed(config.seed, &["anatomy", id, &s.to_string()]);
            let (tissue, mask) = generate_anatomy(anatomy_seed, (config.height, config.width))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["render", id, &s.to_string()]));
            let image = render_domain(&tissue, spec, &mut rng)?;
            samples.push(Sample {
                domain_id: id.to_string(),
                sample_id: s,
                height: config.height,
                width: config.width,
                spacing_mm: config.spacing_mm,
                anatomy_seed,
                image,
                mask: mask.values().to_vec(),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["split", id])));
        let (tr, rest) = order.split_at(config.split.train);
        let (va, te) = rest.split_at(config.split.val);
        let sorted = |v: &[usize]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v
        };
        domains.push(DomainData {
            spec: spec.clone(),
            samples,
            splits: Splits {
                train: sorted(tr),
                val: sorted(va),
                test: sorted(te),
            },
        });
    }
    Ok(Dataset {
        config: config.clone(),
        domains,
    })
}

impl Dataset {
    pub fn domain(&self, id: &str) -> Result<&DomainData> {
        self.domains.iter().find(|d| d.spec.domain_id == id).ok_or_else(|| {
            let known: Vec<&str> = self.domains.iter().map(|d| d.spec.domain_id.as_str()).collect();
            Error::Missing(format!("domain `{id}` (dataset has {known:?})"))
        })
    }

    pub fn domain_ids(&self) -> Vec<&str> {
        self.domains.iter().map(|d| d.spec.domain_id.as_str()).collect()
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut splits = BTreeMap::new();
        for d in &self.domains {
            let dir = root.join(&d.spec.domain_id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for s in &d.samples {
                let stem = dir.join(s.sample_id.to_string());
                let img: Vec<u8> = s.image.iter().flat_map(|v| v.to_le_bytes()).collect();
                let p = stem.with_extension("img");
                fs::write(&p, img).map_err(|e| Error::io(&p, e))?;
                let p = stem.with_extension("msk");
                fs::write(&p, &s.mask).map_err(|e| Error::io(&p, e))?;
                let side = SampleSidecar {
                    shape: [s.height, s.width],
                    image_dtype: "f32".into(),
                    mask_dtype: "u8".into(),
                    spacing: [s.spacing_mm; 2],
                    domain_id: s.domain_id.clone(),
                    sample_id: s.sample_id,
                    generator_seed: s.anatomy_seed,
                };
                let p = stem.with_extension("json");
                fs::write(&p, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&p, e))?;
            }
            splits.insert(d.spec.domain_id.clone(), d.splits.clone());
        }
        let index = DatasetIndex {
            format_version: DATASET_FORMAT_VERSION,
            config: self.config.clone(),
            splits,
        };
        let p = root.join("dataset.json");
        fs::write(&p, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&p, e))
    }

    pub fn read(root: &Path) -> Result<Dataset> {
        let p = root.join("dataset.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let index: DatasetIndex = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
        if index.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::format(&p, format!("unsupported format version {}", index.format_version)));
        }
        let n = index.config.samples_per_domain();
        let mut domains = Vec::new();
        for spec in &index.config.domains {
            let splits = index
                .splits
                .get(&spec.domain_id)
                .cloned()
                .ok_or_else(|| Error::format(&p, format!("no split for domain `{}`", spec.domain_id)))?;
            let dir = root.join(&spec.domain_id);
            let mut samples = Vec::with_capacity(n);
            for s in 0..n {
                samples.push(read_sample(&dir, s)?);
            }
            domains.push(DomainData {
                spec: spec.clone(),
                samples,
                splits,
            });
        }
        Ok(Dataset {
            config: index.config,
            domains,
        })
    }
}

fn read_sample(dir: &Path, id: usize) -> Result<Sample> {
    let stem = dir.join(id.to_string());
    let p = stem.with_extension("json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let side: SampleSidecar = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
    if side.image_dtype != "f32" || side.mask_dtype != "u8" || side.sample_id != id {
        return Err(Error::format(&p, "unexpected dtype or sample id"));
    }
    let [h, w] = side.shape;
    let p = stem.with_extension("img");
    let raw = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if raw.len() != h * w * 4 {
        return Err(Error::format(&p, format!("expected {} bytes, found {}", h * w * 4, raw.len())));
    }
    let image = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let p = stem.with_extension("msk");
    let mask = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if mask.len() != h * w || mask.iter().any(|&m| m > 1) {
        return Err(Error::format(&p, "mask payload has the wrong size or non-binary values"));
    }
    Ok(Sample {
        domain_id: side.domain_id,
        sample_id: id,
        height: h,
        width: w,
        spacing_mm: side.spacing[0],
        anatomy_seed: side.generator_seed,
        image,
        mask,
    })
}

/// Stacks samples into `(batch, 1, H, W)` image and mask tensors.
pub fn to_batch<S: Scalar>(samples: &[&Sample]) -> Result<(Tensor<S>, Tensor<S>)> {
    let first = samples.first().ok_or_else(|| Error::Dimension("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut img = Vec::with_capacity(samples.len() * h * w);
    let mut msk = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(Error::Dimension("batch mixes image sizes".into()));
        }
        img.extend(s.image.iter().map(|&v| S::from_f64_lossy(v as f64)));
        msk.extend(s.mask.iter().map(|&v| if v == 1 { S::one() } else { S::zero() }));
    }
    let shape = [samples.len(), 1, h, w];
    Ok((Tensor::from_vec(shape, img)?, Tensor::from_vec(shape, msk)?))
}
