use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{NetworkConfig, SegmentationNetwork};
use crate::datagen::{Dataset, ScarcitySetup};
use crate::error::{Error, Result};
use crate::seeding::run_seed;
use crate::strategies::{
    evaluate, mean, pretrain_baseline, read_run_config, read_run_result, run_dir, run_oracle_cv, write_run, ImageScore,
    OracleResult, Profile, RunConfig, RunModel, RunResult, StrategyKind, StrategySpec, TrainSchedule,
};

/// `<runs>/baseline/<domain>/pretrain_<profile>/<repeat>`.
pub fn baseline_dir(runs_root: &Path, domain: &str, profile: Profile, repeat: u64) -> PathBuf {
    run_dir(runs_root, "baseline", domain, &format!("pretrain_{profile}"), repeat)
}

/// A pretrained source network and the seed that produced it.
#[derive(Clone, Debug)]
pub struct Baseline {
    pub net: SegmentationNetwork<f32>,
    pub run_seed: u64,
}

pub(crate) fn scores_to_result(ids: &[usize], scores: &[f64], diverged: bool, fraction_tuned: Option<f64>) -> RunResult {
    RunResult {
        mean_surface_dice: mean(scores),
        per_image: ids
            .iter()
            .zip(scores)
            .map(|(&sample_id, &surface_dice)| ImageScore { sample_id, surface_dice })
            .collect(),
        diverged,
        fraction_tuned,
    }
}

fn baseline_config(dataset: &Dataset, domain: &str, schedule: &TrainSchedule, repeat: u64, global_seed: u64) -> Result<RunConfig> {
    let d = dataset.domain(domain)?;
    let seed = run_seed(global_seed, domain, "baseline", "full", repeat);
    Ok(RunConfig {
        experiment: "baseline".into(),
        source: domain.into(),
        target: domain.into(),
        strategy: StrategySpec {
            kind: StrategyKind::BaselinePretrain,
            schedule: *schedule,
            scarcity: Some(ScarcitySetup::FULL),
        },
        seed: repeat,
        run_seed: seed,
        baseline_seed: seed,
        finetune_ids: d.splits.train.clone(),
        test_ids: d.splits.test.clone(),
    })
}

/// Pretrains on the source training split and scores the source test split.
/// A finished run with the same configuration is reused. `schedule` is
/// usually `TrainSchedule::pretrain(profile)`.
pub fn pretrain_domain(
    dataset: &Dataset,
    runs_root: &Path,
    domain: &str,
    profile: Profile,
    schedule: &TrainSchedule,
    repeat: u64,
    global_seed: u64,
) -> Result<RunResult> {
    let config = baseline_config(dataset, domain, schedule, repeat, global_seed)?;
    let dir = baseline_dir(runs_root, domain, profile, repeat);
    if let Some(done) = reuse(&dir, &config)? {
        log::info!("baseline {domain} repeat {repeat} already trained at {}", dir.display());
        return Ok(done);
    }
    let d = dataset.domain(domain)?;
    let net_config = NetworkConfig::unet(profile.base_width());
    let (net, log) = pretrain_baseline::<f32>(&net_config, &d.train(), &d.val(), &config.strategy.schedule, config.run_seed)?;
    let scores = evaluate(&net, &d.test())?;
    let result = scores_to_result(&d.splits.test, &scores, log.diverged, None);
    write_run(&dir, &config, RunModel::Plain(&net), &log, &result)?;
    log::info!("baseline {domain} repeat {repeat}: source test surface dice {:.4}", result.mean_surface_dice);
    Ok(result)
}

/// The stored result when `dir` holds a finished run of `config`; an error
/// when it holds a different configuration.
pub(crate) fn reuse(dir: &Path, config: &RunConfig) -> Result<Option<RunResult>> {
    let Some(result) = read_run_result(dir)? else {
        return Ok(None);
    };
    let stored = read_run_config(dir)?;
    if &stored != config {
        return Err(Error::Config(format!(
            "{} holds a finished run with a different configuration; use another experiment name or remove it",
            dir.display()
        )));
    }
    Ok(Some(result))
}

/// Loads the pretrained network for `domain` and `repeat`.
pub fn load_baseline(runs_root: &Path, domain: &str, profile: Profile, repeat: u64) -> Result<Baseline> {
    let dir = baseline_dir(runs_root, domain, profile, repeat);
    if read_run_result(&dir)?.is_none() {
        return Err(Error::Missing(format!(
            "no pretrained baseline for domain `{domain}` (profile {profile}, repeat {repeat}) in {}; run `spottunet pretrain --domain {domain} --profile {profile} --repeat {repeat} --runs {}` first",
            dir.display(),
            runs_root.display()
        )));
    }
    let config = read_run_config(&dir)?;
    let net = SegmentationNetwork::load(&dir.join("checkpoint"))?;
    Ok(Baseline {
        net,
        run_seed: config.run_seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub domain: String,
    pub profile: Profile,
    pub run_seed: u64,
    pub folds: Vec<Vec<usize>>,
    pub fold_scores: Vec<f64>,
    pub mean_surface_dice: f64,
}

/// `folds`-way in-domain cross-validation, written to
/// `<runs>/oracle/<domain>/oracle_cv_<profile>/<repeat>/oracle.json`.
pub fn run_oracle(
    dataset: &Dataset,
    runs_root: &Path,
    domain: &str,
    profile: Profile,
    folds: usize,
    repeat: u64,
    global_seed: u64,
) -> Result<OracleReport> {
    let d = dataset.domain(domain)?;
    let seed = run_seed(global_seed, domain, "oracle", "full", repeat);
    let net_config = NetworkConfig::unet(profile.base_width());
    let OracleResult { folds, fold_scores } = run_oracle_cv::<f32>(&net_config, d, folds, &TrainSchedule::pretrain(profile), seed)?;
    let report = OracleReport {
        domain: domain.into(),
        profile,
        run_seed: seed,
        mean_surface_dice: mean(&fold_scores),
        folds,
        fold_scores,
    };
    let dir = run_dir(runs_root, "oracle", domain, &format!("oracle_cv_{profile}"), repeat);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let p = dir.join("oracle.json");
    fs::write(&p, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}
