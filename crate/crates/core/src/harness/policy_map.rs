use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::svg::{escape, Svg};
use crate::backbone::{BlockKind, NetworkConfig};
use crate::datagen::{to_batch, Sample};
use crate::error::{Error, Result};
use crate::routing::{DualPathModel, IndicatorVector, RouteMode};
use crate::scalar::Scalar;

/// How often each block is routed to the fine-tuned copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub block_names: Vec<String>,
    pub per_block_frequency: Vec<f64>,
    pub n_inputs: usize,
}

impl PolicyStats {
    fn from_indicators(model_config: &NetworkConfig, indicators: &[IndicatorVector]) -> Self {
        let n = model_config.num_blocks();
        let mut counts = vec![0usize; n];
        for ind in indicators {
            for (c, frozen) in counts.iter_mut().zip(&ind.hard) {
                *c += usize::from(!frozen);
            }
        }
        PolicyStats {
            block_names: model_config.blocks.iter().map(|b| b.name.clone()).collect(),
            per_block_frequency: counts.iter().map(|&c| c as f64 / indicators.len().max(1) as f64).collect(),
            n_inputs: indicators.len(),
        }
    }

    /// Fraction of all block decisions that chose the fine-tuned copy.
    pub fn mean_frequency(&self) -> f64 {
        self.per_block_frequency.iter().sum::<f64>() / self.per_block_frequency.len().max(1) as f64
    }
}

fn collect<S: Scalar>(model: &DualPathModel<S>, samples: &[&Sample], mode: &RouteMode, mut rng: Option<&mut ChaCha8Rng>) -> Result<PolicyStats> {
    if samples.is_empty() {
        return Err(Error::Config("policy statistics need at least one input".into()));
    }
    let mut all = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(16) {
        let (x, _) = to_batch::<S>(chunk)?;
        let (_, ind) = model.routed_forward(&x, mode, rng.as_deref_mut())?;
        all.extend(ind);
    }
    Ok(PolicyStats::from_indicators(model.frozen().config(), &all))
}

/// Block-wise fine-tuning frequency under noise-free argmax routing.
pub fn collect_policy_frequencies<S: Scalar>(model: &DualPathModel<S>, samples: &[&Sample]) -> Result<PolicyStats> {
    collect(model, samples, &RouteMode::EvalArgmax, None)
}

/// Same statistic with Gumbel-sampled routing, one draw per input.
pub fn collect_policy_frequencies_sampled<S: Scalar>(
    model: &DualPathModel<S>,
    samples: &[&Sample],
    rng: &mut ChaCha8Rng,
) -> Result<PolicyStats> {
    collect(model, samples, &RouteMode::TrainSample, Some(rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyMap {
    pub svg: String,
    pub csv: String,
}

impl PolicyMap {
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        for (name, body) in [("policy_map.svg", &self.svg), ("policy_map.csv", &self.csv)] {
            let p = out_dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// White at frequency 0, saturated red at 1.
fn fill(freq: f64) -> String {
    let f = freq.clamp(0.0, 1.0);
    let c = |lo: f64, hi: f64| (lo + (hi - lo) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(255.0, 178.0), c(255.0, 24.0), c(255.0, 43.0))
}

/// Draws the U-Net as a U: encoder blocks step down one level per
/// downsampling block, decoder blocks step back up. Residual and
/// convolution blocks are rectangles, downsampling blocks are downward
/// triangles and upsampling blocks upward triangles. Each block shape
/// carries `data-block`, `data-kind` and `data-frequency`.
pub fn render_policy_map(stats: &PolicyStats, config: &NetworkConfig) -> Result<PolicyMap> {
    let n = config.num_blocks();
    if stats.block_names.len() != n || stats.per_block_frequency.len() != n {
        return Err(Error::Dimension(format!(
            "policy statistics cover {} blocks but the network has {n}",
            stats.per_block_frequency.len()
        )));
    }
    if let Some((name, spec)) = stats.block_names.iter().zip(&config.blocks).find(|(a, b)| **a != b.name) {
        return Err(Error::Config(format!("block `{name}` does not match network block `{}`", spec.name)));
    }
    let (dx, dy, size, margin) = (44.0, 56.0, 30.0, 30.0);
    let depth = config.depth() as f64;
    let width = 2.0 * margin + dx * n as f64;
    let height = 2.0 * margin + 40.0 + dy * depth + size + 30.0;
    let mut svg = Svg::new(width, height);
    svg.text(
        width / 2.0,
        margin,
        "middle",
        13.0,
        &format!("fine-tuning frequency per block ({} inputs)", stats.n_inputs),
    );
    let top = margin + 30.0;
    let mut level = 0.0;
    let mut csv = String::from("block_name,kind,frequency\n");
    for (i, (block, &freq)) in config.blocks.iter().zip(&stats.per_block_frequency).enumerate() {
        let drawn_at = match block.kind {
            BlockKind::DownConv => {
                level += 1.0;
                level - 0.5
            }
            BlockKind::UpConv => {
                level -= 1.0;
                level + 0.5
            }
            _ => level,
        };
        let cx = margin + dx * (i as f64 + 0.5);
        let cy = top + dy * drawn_at + size / 2.0;
        let h = size / 2.0;
        let attrs = format!(
            r#"class="block" data-block="{}" data-kind="{}" data-frequency="{freq}" fill="{}" stroke="black" stroke-width="1""#,
            escape(&block.name),
            block.kind.as_str(),
            fill(freq)
        );
        let title = format!("<title>{} {:.3}</title>", escape(&block.name), freq);
        let shape = match block.kind {
            BlockKind::DownConv => format!(
                r#"<polygon points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}" {attrs}>{title}</polygon>"#,
                cx - h,
                cy - h,
                cx + h,
                cy - h,
                cx,
                cy + h
            ),
            BlockKind::UpConv => format!(
                r#"<polygon points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}" {attrs}>{title}</polygon>"#,
                cx - h,
                cy + h,
                cx + h,
                cy + h,
                cx,
                cy - h
            ),
            _ => format!(
                r#"<rect x="{:.1}" y="{:.1}" width="{size}" height="{size}" rx="{}" {attrs}>{title}</rect>"#,
                cx - h,
                cy - h,
                if block.kind == BlockKind::Residual { 0.0 } else { 8.0 }
            ),
        };
        svg.push(&shape);
        svg.text(cx, cy + h + 12.0, "middle", 9.0, &block.name);
        let _ = writeln!(csv, "{},{},{}", block.name, block.kind.as_str(), freq);
    }
    Ok(PolicyMap { svg: svg.finish(), csv })
}
