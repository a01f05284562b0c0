//! Training procedures for every compared method: source pretraining,
//! in-domain cross-validation, plain and first-k fine-tuning, histogram
//! matching transfer and dual-path fine-tuning with a learned policy.

mod optim;
mod runs;
mod schedule;
mod train;

pub use optim::{BatchSampler, Sgd, DEFAULT_MOMENTUM};
pub use runs::{read_run_config, read_run_result, run_dir, write_run, ImageScore, RunConfig, RunModel, RunResult};
pub use schedule::{Profile, StrategyKind, StrategySpec, TrainSchedule, DEFAULT_FIRST_K};
pub use train::{
    evaluate, finetune, finetune_spottunet, fold_partition, mean, pretrain_baseline, run_oracle_cv, train_network,
    transfer_with_histogram_matching, HistogramPipeline, LogRow, OracleResult, Segmenter, TrainLog, EVAL_TOLERANCE_MM,
};

#[cfg(test)]
mod tests;
