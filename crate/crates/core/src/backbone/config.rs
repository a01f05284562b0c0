use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    InitConv,
    Residual,
    DownConv,
    UpConv,
    FinalConv,
}

impl BlockKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BlockKind::InitConv => "init_conv",
            BlockKind::Residual => "residual",
            BlockKind::DownConv => "down_conv",
            BlockKind::UpConv => "up_conv",
            BlockKind::FinalConv => "final_conv",
        }
    }

    /// The only spatial scale a block of this kind may declare.
    pub fn required_scale(&self) -> Scale {
        match self {
            BlockKind::DownConv => Scale::Down2,
            BlockKind::UpConv => Scale::Up2,
            _ => Scale::Same,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Same,
    Down2,
    Up2,
}

/// One routable block of the segmentation network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub scale: Scale,
}

impl BlockSpec {
    pub fn new(name: &str, kind: BlockKind, in_channels: usize, out_channels: usize) -> Self {
        BlockSpec {
            name: name.to_string(),
            kind,
            in_channels,
            out_channels,
            scale: kind.required_scale(),
        }
    }
}

/// Declarative description of a U-Net as an ordered list of blocks.
///
/// A block named as the decoder end of a skip connection receives the previous
/// block's output concatenated (along channels, previous output first) with the
/// encoder block's output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub blocks: Vec<BlockSpec>,
    pub skip_connections: Vec<(String, String)>,
    pub input_channels: usize,
    pub output_channels: usize,
    pub base_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::unet(16)
    }
}

impl NetworkConfig {
    /// The 17-block residual U-Net with two resolution levels.
    pub fn unet(base_width: usize) -> Self {
        use BlockKind::*;
        let w1 = base_width;
        let w2 = 2 * base_width;
        let w3 = 4 * base_width;
        let blocks = vec![
            BlockSpec::new("init", InitConv, 1, w1),
            BlockSpec::new("enc1", Residual, w1, w1),
            BlockSpec::new("down1", DownConv, w1, w2),
            BlockSpec::new("enc2", Residual, w2, w2),
            BlockSpec::new("down2", DownConv, w2, w3),
            BlockSpec::new("enc3", Residual, w3, w3),
            BlockSpec::new("bott1", Residual, w3, w3),
            BlockSpec::new("bott2", Residual, w3, w3),
            BlockSpec::new("up1", UpConv, w3, w2),
            BlockSpec::new("dec1", Residual, w2 + w2, w2),
            BlockSpec::new("dec2", Residual, w2, w2),
            BlockSpec::new("up2", UpConv, w2, w1),
            BlockSpec::new("dec3", Residual, w1 + w1, w1),
            BlockSpec::new("dec4", Residual, w1, w1),
            BlockSpec::new("head1", Residual, w1, w1),
            BlockSpec::new("head2", Residual, w1, w1),
            BlockSpec::new("final", FinalConv, w1, 1),
        ];
        NetworkConfig {
            blocks,
            skip_connections: vec![
                ("enc2".to_string(), "dec1".to_string()),
                ("enc1".to_string(), "dec3".to_string()),
            ],
            input_channels: 1,
            output_channels: 1,
            base_width,
        }
    }

    /// Number of routable blocks.
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Number of ×2 downsampling blocks; inputs must be divisible by `2^depth`.
    pub fn depth(&self) -> usize {
        self.blocks.iter().filter(|b| b.kind == BlockKind::DownConv).count()
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        self.topology().map(|_| ())
    }

    /// Checks every invariant and derives the execution plan.
    pub(crate) fn topology(&self) -> Result<Topology> {
        if self.blocks.is_empty() {
            return Err(Error::Config("network has no blocks".into()));
        }
        if self.input_channels == 0 || self.output_channels == 0 || self.base_width == 0 {
            return Err(Error::Config("channel counts and base width must be positive".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.in_channels == 0 || b.out_channels == 0 {
                return Err(Error::Config(format!("block `{}` has a zero channel count", b.name)));
            }
            if b.scale != b.kind.required_scale() {
                return Err(Error::Config(format!(
                    "block `{}`: kind {} requires scale {:?}, found {:?}",
                    b.name,
                    b.kind.as_str(),
                    b.kind.required_scale(),
                    b.scale
                )));
            }
            if self.blocks[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::Config(format!("duplicate block name `{}`", b.name)));
            }
        }

        let n = self.blocks.len();
        let mut skip_from = vec![None; n];
        let mut is_skip_source = vec![false; n];
        for (enc, dec) in &self.skip_connections {
            let e = self
                .block_index(enc)
                .ok_or_else(|| Error::Config(format!("skip connection names unknown block `{enc}`")))?;
            let d = self
                .block_index(dec)
                .ok_or_else(|| Error::Config(format!("skip connection names unknown block `{dec}`")))?;
            if e + 1 >= d {
                return Err(Error::Config(format!(
                    "skip connection `{enc}` -> `{dec}` must jump forward over at least one block"
                )));
            }
            if skip_from[d].is_some() {
                return Err(Error::Config(format!("block `{dec}` receives more than one skip connection")));
            }
            skip_from[d] = Some(e);
            is_skip_source[e] = true;
        }

        // Resolution level of each block's output, counted in ×2 downsamplings.
        let mut level_out = Vec::with_capacity(n);
        let mut level: isize = 0;
        for b in &self.blocks {
            match b.scale {
                Scale::Down2 => level += 1,
                Scale::Up2 => level -= 1,
                Scale::Same => {}
            }
            if level < 0 {
                return Err(Error::Config(format!(
                    "block `{}` upsamples above the input resolution",
                    b.name
                )));
            }
            level_out.push(level);
        }

        let first = &self.blocks[0];
        if first.in_channels != self.input_channels {
            return Err(Error::Config(format!(
                "network input has {} channels but block `{}` expects {}",
                self.input_channels, first.name, first.in_channels
            )));
        }
        for i in 1..n {
            let prev = &self.blocks[i - 1];
            let cur = &self.blocks[i];
            let skip_channels = skip_from[i].map_or(0, |s| self.blocks[s].out_channels);
            if prev.out_channels + skip_channels != cur.in_channels {
                let detail = match skip_from[i] {
                    Some(s) => format!(" plus skip `{}` (out={})", self.blocks[s].name, skip_channels),
                    None => String::new(),
                };
                return Err(Error::Config(format!(
                    "incompatible channels between block `{}` (out={}){} and block `{}` (in={})",
                    prev.name, prev.out_channels, detail, cur.name, cur.in_channels
                )));
            }
            if let Some(s) = skip_from[i] {
                if level_out[s] != level_out[i - 1] {
                    return Err(Error::Config(format!(
                        "skip `{}` -> `{}` joins mismatched resolutions",
                        self.blocks[s].name, cur.name
                    )));
                }
            }
        }
        let last = &self.blocks[n - 1];
        if last.out_channels != self.output_channels {
            return Err(Error::Config(format!(
                "block `{}` produces {} channels but the network declares {} outputs",
                last.name, last.out_channels, self.output_channels
            )));
        }
        let max_level = level_out.iter().copied().max().unwrap_or(0).max(0) as usize;
        Ok(Topology {
            skip_from,
            is_skip_source,
            max_level,
        })
    }
}

/// Execution plan derived from a validated config.
#[derive(Clone, Debug)]
pub(crate) struct Topology {
    pub skip_from: Vec<Option<usize>>,
    pub is_skip_source: Vec<bool>,
    pub max_level: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_topology_is_valid_with_seventeen_blocks() {
        let cfg = NetworkConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_blocks(), 17);
        assert_eq!(cfg.depth(), 2);
        assert_eq!(cfg.blocks[0].kind, BlockKind::InitConv);
        assert_eq!(cfg.blocks[16].kind, BlockKind::FinalConv);
    }

    #[test]
    fn mismatched_channels_name_the_block_pair() {
        let cfg = NetworkConfig {
            blocks: vec![
                BlockSpec::new("a", BlockKind::InitConv, 1, 16),
                BlockSpec::new("b", BlockKind::Residual, 32, 32),
                BlockSpec::new("c", BlockKind::FinalConv, 32, 1),
            ],
            skip_connections: vec![],
            input_channels: 1,
            output_channels: 1,
            base_width: 16,
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("`a`") && err.contains("`b`"), "{err}");
    }

    #[test]
    fn kind_scale_mismatch_is_rejected() {
        let mut cfg = NetworkConfig::default();
        cfg.blocks[2].scale = Scale::Same;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn skip_across_resolutions_is_rejected() {
        let mut cfg = NetworkConfig::default();
        cfg.skip_connections[0] = ("enc1".into(), "dec1".into());
        cfg.blocks[9].in_channels = 32 + 16;
        assert!(cfg.validate().is_err());
    }
}
