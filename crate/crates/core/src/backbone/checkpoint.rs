//! On-disk checkpoints: `manifest.json` plus little-endian `f32` payload in `params.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkConfig, SegmentationNetwork};
use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};
use crate::routing::{GumbelConfig, PolicyLayout};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into `params.bin`.
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: NetworkConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gumbel: Option<GumbelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyLayout>,
    pub sections: Vec<Section>,
}

/// Parameters of one section with their trainable flags.
pub struct SectionData<'a, S> {
    pub name: &'a str,
    pub params: &'a ParamSet<S>,
    pub trainable: &'a [bool],
}

/// Writes `sections` in order; offsets in the manifest are computed here.
pub fn write_checkpoint<S: Scalar>(
    dir: &Path,
    config: &NetworkConfig,
    seed: u64,
    gumbel: Option<GumbelConfig>,
    policy: Option<PolicyLayout>,
    sections: &[SectionData<'_, S>],
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes: Vec<u8> = Vec::new();
    let mut index = Vec::with_capacity(sections.len());
    for sec in sections {
        let mut entries = Vec::with_capacity(sec.params.len());
        for (i, p) in sec.params.iter().enumerate() {
            entries.push(ParamEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                dtype: "f32".to_string(),
                offset: bytes.len() as u64,
                trainable: sec.trainable.get(i).copied().unwrap_or(true),
            });
            for v in &p.data {
                bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        index.push(Section {
            name: sec.name.to_string(),
            params: entries,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        seed,
        gumbel,
        policy,
        sections: index,
    };
    let bin = dir.join(PARAMS_FILE);
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let man = dir.join(MANIFEST_FILE);
    fs::write(&man, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&man, e))?;
    Ok(manifest)
}

/// Reads a checkpoint directory, returning the manifest and each section's
/// parameters and trainable flags in manifest order.
pub fn read_checkpoint<S: Scalar>(dir: &Path) -> Result<(Manifest, Vec<(ParamSet<S>, Vec<bool>)>)> {
    let man_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &man_path,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    let bin_path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut out = Vec::with_capacity(manifest.sections.len());
    for sec in &manifest.sections {
        let mut params = Vec::with_capacity(sec.params.len());
        let mut flags = Vec::with_capacity(sec.params.len());
        for entry in &sec.params {
            if entry.dtype != "f32" {
                return Err(Error::format(&man_path, format!("unsupported dtype `{}`", entry.dtype)));
            }
            let len: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 4 * len;
            let raw = bytes.get(start..end).ok_or_else(|| {
                Error::format(&bin_path, format!("parameter `{}` extends past end of file", entry.name))
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|c| S::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            params.push(Param {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
                data,
            });
            flags.push(entry.trainable);
        }
        out.push((ParamSet::new(params), flags));
    }
    Ok((manifest, out))
}

impl<S: Scalar> SegmentationNetwork<S> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_checkpoint(
            dir,
            &self.config,
            self.seed,
            None,
            None,
            &[SectionData {
                name: "network",
                params: &self.params,
                trainable: &self.trainable,
            }],
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, mut sections) = read_checkpoint::<S>(dir)?;
        let pos = manifest
            .sections
            .iter()
            .position(|s| s.name == "network")
            .ok_or_else(|| Error::format(dir, "checkpoint has no `network` section"))?;
        let (params, flags) = sections.swap_remove(pos);
        Self::from_parts(manifest.config, manifest.seed, params, flags)
    }

    pub(crate) fn from_parts(config: NetworkConfig, seed: u64, params: ParamSet<S>, trainable: Vec<bool>) -> Result<Self> {
        let mut net = SegmentationNetwork::new(config, seed)?.with_params(params)?;
        if trainable.len() != net.trainable.len() {
            return Err(Error::Dimension("trainable mask length mismatch".into()));
        }
        net.trainable = trainable;
        Ok(net)
    }
}
