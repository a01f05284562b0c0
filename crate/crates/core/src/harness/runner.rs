use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::baseline::{load_baseline, reuse, scores_to_result, Baseline};
use super::plan::DomainPair;
use super::policy_map::collect_policy_frequencies;
use crate::datagen::{sample_scarce_subset, Dataset, ScarcitySetup};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, run_seed};
use crate::strategies::{
    evaluate, finetune, finetune_spottunet, run_dir, transfer_with_histogram_matching, write_run, Profile, RunConfig,
    RunModel, RunResult, StrategyKind, StrategySpec, TrainLog,
};

/// One training and evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub pair: DomainPair,
    /// Resolved strategy; `scarcity` is always set.
    pub strategy: StrategySpec,
    pub repeat: u64,
    /// Strategy directory name.
    pub dir_label: String,
    /// Label mixed into the run seed. Grid-search cells share one so that
    /// grid points see the same batches and policy initialization.
    pub seed_label: String,
}

impl Cell {
    pub fn scarcity(&self) -> ScarcitySetup {
        self.strategy.scarcity.unwrap_or(ScarcitySetup::FULL)
    }
}

pub struct CellContext<'a> {
    pub dataset: &'a Dataset,
    pub runs_root: &'a Path,
    pub experiment: &'a str,
    pub seed: u64,
    pub profile: Profile,
}

/// Seed of the scarce subset; shared by every strategy of a
/// (pair, scarcity, repeat) triple.
pub fn subset_seed(seed: u64, pair: &DomainPair, scarcity: ScarcitySetup, repeat: u64) -> u64 {
    derive_seed(seed, &["subset", &pair.label(), &scarcity.to_string(), &repeat.to_string()])
}

impl CellContext<'_> {
    pub fn cell_dir(&self, cell: &Cell) -> std::path::PathBuf {
        run_dir(self.runs_root, self.experiment, &cell.pair.label(), &cell.dir_label, cell.repeat)
    }

    pub fn cell_config(&self, cell: &Cell, baseline_seed: u64) -> Result<RunConfig> {
        let target = self.dataset.domain(cell.pair.target())?;
        self.dataset.domain(cell.pair.source())?;
        let scarcity = cell.scarcity();
        let finetune_ids = sample_scarce_subset(target, scarcity, subset_seed(self.seed, &cell.pair, scarcity, cell.repeat))?;
        let test_ids = target.splits.test.clone();
        if let Some(id) = finetune_ids.iter().find(|id| test_ids.contains(id) || !target.splits.train.contains(id)) {
            return Err(Error::Runtime(format!(
                "split hygiene violated: fine-tuning sample {id} of {} is not a training sample",
                cell.pair.target()
            )));
        }
        Ok(RunConfig {
            experiment: self.experiment.into(),
            source: cell.pair.source().into(),
            target: cell.pair.target().into(),
            strategy: cell.strategy.clone(),
            seed: cell.repeat,
            run_seed: run_seed(self.seed, &cell.pair.label(), &cell.seed_label, &scarcity.to_string(), cell.repeat),
            baseline_seed,
            finetune_ids,
            test_ids,
        })
    }

    /// Trains (unless reusable) and evaluates one cell.
    pub fn execute(&self, cell: &Cell, baseline: &Baseline) -> Result<RunResult> {
        let config = self.cell_config(cell, baseline.run_seed)?;
        let dir = self.cell_dir(cell);
        if let Some(done) = reuse(&dir, &config)? {
            return Ok(done);
        }
        let target = self.dataset.domain(cell.pair.target())?;
        let source = self.dataset.domain(cell.pair.source())?;
        let subset = target.samples_by_id(&config.finetune_ids)?;
        let test = target.test();
        let val = target.val();
        let net = &baseline.net;
        let spec = &cell.strategy;
        let seed = config.run_seed;
        let result = match spec.kind {
            StrategyKind::TransferOnly => {
                let scores = evaluate(net, &test)?;
                write_and_score(&dir, &config, RunModel::Plain(net), TrainLog::default(), scores, None)?
            }
            StrategyKind::HistogramMatchTransfer => {
                let pipe = transfer_with_histogram_matching(net, &source.train())?;
                let scores = evaluate(&pipe, &test)?;
                write_and_score(&dir, &config, RunModel::Plain(net), TrainLog::default(), scores, None)?
            }
            StrategyKind::FinetuneAll | StrategyKind::FinetuneFirstK { .. } => {
                let (tuned, log) = finetune(net, &spec.kind, &spec.schedule, &subset, &val, seed)?;
                let scores = evaluate(&tuned, &test)?;
                write_and_score(&dir, &config, RunModel::Plain(&tuned), log, scores, None)?
            }
            StrategyKind::Spottunet { lambda, tau } => {
                let (model, log) = finetune_spottunet(net, lambda, tau, &spec.schedule, &subset, &val, seed)?;
                let scores = evaluate(&model, &test)?;
                let stats = collect_policy_frequencies(&model, &test)?;
                write_and_score(&dir, &config, RunModel::Dual(&model), log, scores, Some(stats.mean_frequency()))?
            }
            other => {
                return Err(Error::Config(format!("`{}` cannot run as a comparison cell", other.label())));
            }
        };
        Ok(result)
    }
}

fn write_and_score(
    dir: &Path,
    config: &RunConfig,
    model: RunModel<'_, f32>,
    log: TrainLog,
    scores: Vec<f64>,
    fraction_tuned: Option<f64>,
) -> Result<RunResult> {
    let result = scores_to_result(&config.test_ids, &scores, log.diverged, fraction_tuned);
    write_run(dir, config, model, &log, &result)?;
    Ok(result)
}

/// Loads the baselines needed by `cells`, keyed by (source, repeat).
pub fn load_baselines(runs_root: &Path, profile: Profile, cells: &[Cell]) -> Result<BTreeMap<(String, u64), Baseline>> {
    let mut out = BTreeMap::new();
    for c in cells {
        let key = (c.pair.source().to_string(), c.repeat);
        if let std::collections::btree_map::Entry::Vacant(slot) = out.entry(key.clone()) {
            let b = load_baseline(runs_root, &key.0, profile, key.1)?;
            if b.net.config().base_width != profile.base_width() {
                return Err(Error::Config(format!(
                    "baseline for `{}` has width {} but profile {profile} expects {}",
                    key.0,
                    b.net.config().base_width,
                    profile.base_width()
                )));
            }
            slot.insert(b);
        }
    }
    Ok(out)
}

/// Runs every cell on `workers` threads and returns results in cell order.
/// Each cell is independent and seeded, so the worker count does not change
/// any result.
pub fn run_cells(ctx: &CellContext<'_>, cells: &[Cell], workers: usize) -> Result<Vec<RunResult>> {
    let baselines = load_baselines(ctx.runs_root, ctx.profile, cells)?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= cells.len() {
            break;
        }
        let cell = &cells[i];
        let start = Instant::now();
        let base = &baselines[&(cell.pair.source().to_string(), cell.repeat)];
        let res = ctx.execute(cell, base);
        match &res {
            Ok(r) => log::info!(
                "[{}/{}] {} {} seed {}: {:.4} ({:.1}s)",
                i + 1,
                cells.len(),
                cell.pair.label(),
                cell.dir_label,
                cell.repeat,
                r.mean_surface_dice,
                start.elapsed().as_secs_f64()
            ),
            Err(e) => log::error!("[{}/{}] {} {} failed: {e}", i + 1, cells.len(), cell.pair.label(), cell.dir_label),
        }
        let failed = res.is_err();
        slots.lock().expect("result slots poisoned")[i] = Some(res);
        if failed {
            next.store(cells.len(), Ordering::SeqCst);
        }
    };
    if workers <= 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers.min(cells.len().max(1)) {
                s.spawn(work);
            }
        });
    }
    let mut out = Vec::with_capacity(cells.len());
    for slot in slots.into_inner().expect("result slots poisoned") {
        match slot {
            Some(r) => out.push(r?),
            None => return Err(Error::Runtime("a run was skipped after an earlier failure".into())),
        }
    }
    Ok(out)
}
