use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::schedule::StrategySpec;
use super::train::TrainLog;
use crate::backbone::SegmentationNetwork;
use crate::error::{Error, Result};
use crate::routing::DualPathModel;
use crate::scalar::Scalar;

/// `<root>/<experiment>/<pair>/<strategy>/<seed>`.
pub fn run_dir(root: &Path, experiment: &str, pair: &str, strategy: &str, seed: u64) -> PathBuf {
    root.join(experiment).join(pair).join(strategy).join(seed.to_string())
}

/// Fully resolved description of one run, written to `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: String,
    pub source: String,
    pub target: String,
    pub strategy: StrategySpec,
    /// Repeat index within the experiment.
    pub seed: u64,
    /// Seed actually driving this run, derived from the experiment seed.
    pub run_seed: u64,
    pub baseline_seed: u64,
    pub finetune_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub sample_id: usize,
    pub surface_dice: f64,
}

/// Final test metrics, written to `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mean_surface_dice: f64,
    pub per_image: Vec<ImageScore>,
    pub diverged: bool,
    /// Mean fraction of blocks routed to the tuned copy (dual-path runs).
    #[serde(default)]
    pub fraction_tuned: Option<f64>,
}

pub enum RunModel<'a, S> {
    Plain(&'a SegmentationNetwork<S>),
    Dual(&'a DualPathModel<S>),
}

/// Writes a complete run directory. `result.json` is written last, so its
/// presence marks the run as finished.
pub fn write_run<S: Scalar>(dir: &Path, config: &RunConfig, model: RunModel<'_, S>, log: &TrainLog, result: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&p, e))?;
    let ck = dir.join("checkpoint");
    match model {
        RunModel::Plain(net) => net.save(&ck)?,
        RunModel::Dual(m) => m.save(&ck)?,
    }
    let p = dir.join("log.csv");
    fs::write(&p, log.to_csv()).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("result.json");
    fs::write(&p, serde_json::to_string_pretty(result)?).map_err(|e| Error::io(&p, e))
}

pub fn read_run_config(dir: &Path) -> Result<RunConfig> {
    let p = dir.join("config.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
}

/// The stored result, or `None` when the run has not finished.
pub fn read_run_result(dir: &Path) -> Result<Option<RunResult>> {
    let p = dir.join("result.json");
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::format(&p, e.to_string()))
}
