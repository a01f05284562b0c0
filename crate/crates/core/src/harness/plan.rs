use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::ScarcitySetup;
use crate::error::{Error, Result};
use crate::strategies::{Profile, StrategyKind, StrategySpec, TrainSchedule, DEFAULT_FIRST_K};

/// `(source, target)` domain ids, serialized as a two-element array.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainPair(pub String, pub String);

impl DomainPair {
    pub fn new(source: &str, target: &str) -> Self {
        DomainPair(source.to_string(), target.to_string())
    }

    pub fn source(&self) -> &str {
        &self.0
    }

    pub fn target(&self) -> &str {
        &self.1
    }

    /// Directory and table label, `source__target`.
    pub fn label(&self) -> String {
        format!("{}__{}", self.0, self.1)
    }
}

impl fmt::Display for DomainPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.0, self.1)
    }
}

/// A strategy entry of a plan. The schedule defaults to the profile's
/// fine-tuning schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStrategy {
    #[serde(flatten)]
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<TrainSchedule>,
}

impl PlanStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        PlanStrategy { kind, schedule: None }
    }

    pub fn resolve(&self, profile: Profile, scarcity: Option<ScarcitySetup>) -> StrategySpec {
        StrategySpec {
            kind: self.kind,
            schedule: self.schedule.unwrap_or_else(|| TrainSchedule::finetune(profile)),
            scarcity,
        }
    }
}

pub const DEFAULT_TAU_GRID: [f64; 6] = [0.01, 0.1, 0.5, 1.0, 2.0, 5.0];
pub const DEFAULT_LAMBDA_GRID: [f64; 9] = [0.0, 0.001, 0.003, 0.005, 0.007, 0.010, 0.012, 0.015, 0.020];
pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.003;

fn default_workers() -> usize {
    1
}

fn default_tau_slices() -> ScarcitySetup {
    ScarcitySetup::Slices(32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// Name of the experiment directory under `runs_root`.
    pub experiment: String,
    pub dataset_root: PathBuf,
    pub runs_root: PathBuf,
    /// Experiment seed every run seed is derived from.
    #[serde(default)]
    pub seed: u64,
    pub profile: Profile,
    /// Test pairs used by `compare`.
    #[serde(default)]
    pub pairs: Vec<DomainPair>,
    /// Pairs used by the tau and lambda grid searches.
    #[serde(default)]
    pub validation_pairs: Vec<DomainPair>,
    pub scarcity_grid: Vec<ScarcitySetup>,
    #[serde(default)]
    pub strategies: Vec<PlanStrategy>,
    /// Repeat indices. Repeat `r` uses the baseline pretrained with `--repeat r`.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub tau_grid: Vec<f64>,
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    /// Scarcity used while searching tau.
    #[serde(default = "default_tau_slices")]
    pub tau_search_slices: ScarcitySetup,
    /// Per-scarcity lambda for SpotTUnet in `compare`, keyed by the
    /// scarcity label (`"4"`, `"full"`); usually the lambda search output.
    #[serde(default)]
    pub lambda_by_scarcity: BTreeMap<String, f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentPlan {
    /// Four test pairs from the canonical domain and two validation pairs
    /// from the held-out source.
    pub fn desk(dataset_root: impl Into<PathBuf>, runs_root: impl Into<PathBuf>, profile: Profile) -> Self {
        let test = ["gamma", "inverted", "biased", "smooth"];
        ExperimentPlan {
            experiment: format!("{profile}"),
            dataset_root: dataset_root.into(),
            runs_root: runs_root.into(),
            seed: 0,
            profile,
            pairs: test.iter().map(|t| DomainPair::new("canonical", t)).collect(),
            validation_pairs: vec![DomainPair::new("holdout", "canonical"), DomainPair::new("holdout", "inverted")],
            scarcity_grid: vec![
                ScarcitySetup::Slices(4),
                ScarcitySetup::Slices(8),
                ScarcitySetup::Slices(32),
                ScarcitySetup::FULL,
            ],
            strategies: vec![
                PlanStrategy::new(StrategyKind::TransferOnly),
                PlanStrategy::new(StrategyKind::FinetuneAll),
                PlanStrategy::new(StrategyKind::FinetuneFirstK { k: DEFAULT_FIRST_K }),
                PlanStrategy::new(StrategyKind::HistogramMatchTransfer),
                PlanStrategy::new(StrategyKind::Spottunet {
                    lambda: DEFAULT_LAMBDA,
                    tau: DEFAULT_TAU,
                }),
            ],
            seeds: vec![0, 1, 2],
            tau_grid: DEFAULT_TAU_GRID.to_vec(),
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            tau_search_slices: default_tau_slices(),
            lambda_by_scarcity: BTreeMap::new(),
            workers: 1,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: ExperimentPlan = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Checks everything that does not need the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) || self.experiment.starts_with('.') {
            return Err(Error::Config(format!("experiment name `{}` is not a plain directory name", self.experiment)));
        }
        for p in self.pairs.iter().chain(&self.validation_pairs) {
            if p.0 == p.1 {
                return Err(Error::Config(format!("pair {p} has the same source and target")));
            }
        }
        if let Some(p) = self.validation_pairs.iter().find(|p| self.pairs.contains(p)) {
            return Err(Error::Config(format!("pair {p} is both a validation and a test pair")));
        }
        if self.scarcity_grid.is_empty() {
            return Err(Error::Config("scarcity grid is empty".into()));
        }
        for s in self.scarcity_grid.iter().chain(std::iter::once(&self.tau_search_slices)) {
            if *s == ScarcitySetup::Slices(0) {
                return Err(Error::Config("scarcity setups must request at least one sample".into()));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if let Some(t) = self.tau_grid.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(Error::Config(format!("tau grid value {t} is not positive")));
        }
        if let Some(l) = self.lambda_grid.iter().chain(self.lambda_by_scarcity.values()).find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!("lambda value {l} is negative")));
        }
        for s in &self.strategies {
            match s.kind {
                StrategyKind::BaselinePretrain | StrategyKind::OracleCv => {
                    return Err(Error::Config(format!(
                        "`{}` is not a comparison strategy; use the pretrain or oracle command",
                        s.kind.label()
                    )))
                }
                other => other.validate(usize::MAX)?,
            }
            if let Some(sched) = &s.schedule {
                sched.validate()?;
            }
        }
        let mut labels: Vec<String> = self.strategies.iter().map(|s| s.kind.label()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("strategies must have distinct labels".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Lambda and tau of the plan's SpotTUnet entry, or the defaults.
    pub fn spottunet_params(&self) -> (f64, f64) {
        self.strategies
            .iter()
            .find_map(|s| match s.kind {
                StrategyKind::Spottunet { lambda, tau } => Some((lambda, tau)),
                _ => None,
            })
            .unwrap_or((DEFAULT_LAMBDA, DEFAULT_TAU))
    }

    pub fn spottunet_schedule(&self) -> TrainSchedule {
        self.strategies
            .iter()
            .find(|s| matches!(s.kind, StrategyKind::Spottunet { .. }))
            .and_then(|s| s.schedule)
            .unwrap_or_else(|| TrainSchedule::finetune(self.profile))
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.runs_root.join(&self.experiment)
    }
}
