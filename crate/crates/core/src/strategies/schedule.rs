use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::ScarcitySetup;
use crate::error::{Error, Result};

/// Named bundles of schedules, image size and network width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// The published schedules.
    Paper,
    /// CPU-scale schedules with the same shape.
    Desk,
    /// Desk schedules on 32x32 images with a half-width network.
    Compact,
}

impl Profile {
    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
            Profile::Compact => "compact",
        }
    }

    pub fn base_width(&self) -> usize {
        match self {
            Profile::Compact => 8,
            _ => 16,
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            "compact" => Ok(Profile::Compact),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected paper, desk or compact)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub lr_initial: f64,
    pub lr_reduced: f64,
    pub reduce_at_epoch: usize,
    pub batch_size: usize,
}

impl TrainSchedule {
    pub fn pretrain(profile: Profile) -> Self {
        match profile {
            Profile::Paper => TrainSchedule {
                epochs: 100,
                iters_per_epoch: 100,
                lr_initial: 1e-2,
                lr_reduced: 1e-3,
                reduce_at_epoch: 80,
                batch_size: 16,
            },
            Profile::Desk | Profile::Compact => TrainSchedule {
                epochs: 20,
                iters_per_epoch: 25,
                lr_initial: 1e-2,
                lr_reduced: 1e-3,
                reduce_at_epoch: 16,
                batch_size: 8,
            },
        }
    }

    pub fn finetune(profile: Profile) -> Self {
        match profile {
            Profile::Paper => TrainSchedule {
                epochs: 60,
                iters_per_epoch: 100,
                lr_initial: 1e-3,
                lr_reduced: 1e-4,
                reduce_at_epoch: 45,
                batch_size: 16,
            },
            Profile::Desk | Profile::Compact => TrainSchedule {
                epochs: 12,
                iters_per_epoch: 25,
                lr_initial: 1e-3,
                lr_reduced: 1e-4,
                reduce_at_epoch: 9,
                batch_size: 8,
            },
        }
    }

    /// A zero-epoch schedule is valid and trains nothing.
    pub fn validate(&self) -> Result<()> {
        if self.iters_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations per epoch and batch size must be positive".into()));
        }
        if !(self.lr_initial > 0.0) || !(self.lr_reduced > 0.0) || self.lr_reduced >= self.lr_initial {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 < lr_reduced < lr_initial, got {} and {}",
                self.lr_reduced, self.lr_initial
            )));
        }
        if self.epochs > 0 && (self.reduce_at_epoch == 0 || self.reduce_at_epoch >= self.epochs) {
            return Err(Error::Config(format!(
                "reduce_at_epoch must lie in 1..{}, got {}",
                self.epochs, self.reduce_at_epoch
            )));
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.reduce_at_epoch {
            self.lr_initial
        } else {
            self.lr_reduced
        }
    }

    pub fn total_iters(&self) -> usize {
        self.epochs * self.iters_per_epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    BaselinePretrain,
    OracleCv,
    TransferOnly,
    FinetuneAll,
    FinetuneFirstK { k: usize },
    HistogramMatchTransfer,
    Spottunet { lambda: f64, tau: f64 },
}

/// Default number of leading blocks tuned by first-k fine-tuning.
pub const DEFAULT_FIRST_K: usize = 3;

impl StrategyKind {
    /// Short name used for run directories and result tables.
    pub fn label(&self) -> String {
        match self {
            StrategyKind::BaselinePretrain => "baseline".into(),
            StrategyKind::OracleCv => "oracle".into(),
            StrategyKind::TransferOnly => "transfer_only".into(),
            StrategyKind::FinetuneAll => "finetune_all".into(),
            StrategyKind::FinetuneFirstK { k } => format!("finetune_first_{k}"),
            StrategyKind::HistogramMatchTransfer => "histogram".into(),
            StrategyKind::Spottunet { .. } => "spottunet".into(),
        }
    }

    pub fn trains(&self) -> bool {
        !matches!(self, StrategyKind::TransferOnly | StrategyKind::HistogramMatchTransfer)
    }

    pub fn validate(&self, num_blocks: usize) -> Result<()> {
        match *self {
            StrategyKind::FinetuneFirstK { k } if k > num_blocks => Err(Error::Config(format!(
                "first-k fine-tuning needs 0 <= k <= {num_blocks}, got {k}"
            ))),
            StrategyKind::Spottunet { lambda, tau } => {
                if !(lambda >= 0.0) {
                    return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
                }
                if !(tau > 0.0) {
                    return Err(Error::Config(format!("tau must be positive, got {tau}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    #[serde(flatten)]
    pub kind: StrategyKind,
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub scarcity: Option<ScarcitySetup>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_drop_late() {
        for p in [Profile::Paper, Profile::Desk, Profile::Compact] {
            for s in [TrainSchedule::pretrain(p), TrainSchedule::finetune(p)] {
                s.validate().unwrap();
                assert_eq!(s.lr_at(0), s.lr_initial);
                assert_eq!(s.lr_at(s.reduce_at_epoch - 1), s.lr_initial);
                assert_eq!(s.lr_at(s.reduce_at_epoch), s.lr_reduced);
            }
        }
        let d = TrainSchedule::pretrain(Profile::Desk);
        assert_eq!((d.epochs, d.iters_per_epoch, d.reduce_at_epoch), (20, 25, 16));
        let f = TrainSchedule::finetune(Profile::Desk);
        assert_eq!((f.epochs, f.reduce_at_epoch, f.batch_size), (12, 9, 8));
    }

    #[test]
    fn bad_schedules_are_rejected() {
        let mut s = TrainSchedule::finetune(Profile::Desk);
        s.reduce_at_epoch = 12;
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::finetune(Profile::Desk);
        s.lr_reduced = s.lr_initial;
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::finetune(Profile::Desk);
        s.epochs = 0;
        s.validate().unwrap();
    }

    #[test]
    fn strategy_json_is_flat_and_tagged() {
        let spec = StrategySpec {
            kind: StrategyKind::Spottunet { lambda: 0.003, tau: 0.1 },
            schedule: TrainSchedule::finetune(Profile::Desk),
            scarcity: Some(ScarcitySetup::Slices(8)),
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"spottunet\""));
        let back: StrategySpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let k: StrategyKind = serde_json::from_str(r#"{"kind":"finetune_first_k","k":3}"#).unwrap();
        assert_eq!(k.label(), "finetune_first_3");
    }

    #[test]
    fn strategy_validation() {
        assert!(StrategyKind::FinetuneFirstK { k: 18 }.validate(17).is_err());
        StrategyKind::FinetuneFirstK { k: 17 }.validate(17).unwrap();
        assert!(StrategyKind::Spottunet { lambda: -1.0, tau: 0.1 }.validate(17).is_err());
        assert!(StrategyKind::Spottunet { lambda: 0.0, tau: 0.0 }.validate(17).is_err());
        assert_eq!("desk".parse::<Profile>().unwrap(), Profile::Desk);
        assert!("huge".parse::<Profile>().is_err());
    }
}
