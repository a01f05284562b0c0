use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::ExperimentPlan;
use super::runner::{run_cells, Cell, CellContext};
use crate::backbone::NetworkConfig;
use crate::datagen::{Dataset, ScarcitySetup};
use crate::error::{Error, Result};
use crate::metrics::wilcoxon_one_sided;
use crate::strategies::{mean, RunResult, StrategyKind};

/// One row of `results.csv`: a finished cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub pair: String,
    pub source: String,
    pub target: String,
    pub strategy: String,
    pub scarcity: String,
    pub seed: u64,
    pub mean_surface_dice: f64,
    pub n_test: usize,
    pub diverged: bool,
    pub fraction_tuned: Option<f64>,
    /// Run directory relative to the experiment directory.
    pub run_dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub scarcity: String,
    pub mean_surface_dice: f64,
    pub n_runs: usize,
}

/// One-sided signed-rank test of `better > worse` on per-image scores pooled
/// over pairs and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PValueRow {
    pub scarcity: String,
    pub better: String,
    pub worse: String,
    pub n_images: usize,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub pvalues: Vec<PValueRow>,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PVALUES_FILE: &str = "pvalues.csv";

pub(crate) fn strategy_dir(label: &str, scarcity: ScarcitySetup) -> String {
    format!("{label}__{scarcity}")
}

/// Every (pair, scarcity, strategy, seed) cell of the plan, in that nesting
/// order.
pub fn comparison_cells(plan: &ExperimentPlan) -> Vec<Cell> {
    let mut cells = Vec::new();
    for pair in &plan.pairs {
        for &scarcity in &plan.scarcity_grid {
            for s in &plan.strategies {
                let mut spec = s.resolve(plan.profile, Some(scarcity));
                if let StrategyKind::Spottunet { tau, .. } = spec.kind {
                    if let Some(&lambda) = plan.lambda_by_scarcity.get(&scarcity.to_string()) {
                        spec.kind = StrategyKind::Spottunet { lambda, tau };
                    }
                }
                let label = spec.kind.label();
                for &repeat in &plan.seeds {
                    cells.push(Cell {
                        pair: pair.clone(),
                        strategy: spec.clone(),
                        repeat,
                        dir_label: strategy_dir(&label, scarcity),
                        seed_label: label.clone(),
                    });
                }
            }
        }
    }
    cells
}

pub(crate) fn check_domains(dataset: &Dataset, pairs: &[super::plan::DomainPair]) -> Result<()> {
    for p in pairs {
        dataset.domain(p.source())?;
        dataset.domain(p.target())?;
    }
    let (h, w) = (dataset.config.height, dataset.config.width);
    let f = 1 << NetworkConfig::default().depth();
    if h % f != 0 || w % f != 0 {
        return Err(Error::Config(format!("images of {h}x{w} are not divisible by {f}")));
    }
    Ok(())
}

/// Runs (or resumes) every comparison cell and writes `results.csv`,
/// `summary.csv` and `pvalues.csv` into the experiment directory.
pub fn run_comparison(plan: &ExperimentPlan, dataset: &Dataset) -> Result<Comparison> {
    plan.validate()?;
    if plan.pairs.is_empty() || plan.strategies.is_empty() {
        return Err(Error::Config("comparison needs at least one pair and one strategy".into()));
    }
    check_domains(dataset, &plan.pairs)?;
    let cells = comparison_cells(plan);
    let ctx = CellContext {
        dataset,
        runs_root: &plan.runs_root,
        experiment: &plan.experiment,
        seed: plan.seed,
        profile: plan.profile,
    };
    log::info!("comparison `{}`: {} runs", plan.experiment, cells.len());
    let results = run_cells(&ctx, &cells, plan.workers)?;
    let rows: Vec<ResultRow> = cells.iter().zip(&results).map(|(c, r)| result_row(c, r)).collect();
    let comparison = aggregate(plan, &cells, &results, rows)?;
    let dir = plan.experiment_dir();
    write_csv(&dir.join(RESULTS_FILE), &comparison.rows)?;
    write_csv(&dir.join(SUMMARY_FILE), &comparison.summary)?;
    write_csv(&dir.join(PVALUES_FILE), &comparison.pvalues)?;
    Ok(comparison)
}

fn result_row(c: &Cell, r: &RunResult) -> ResultRow {
    ResultRow {
        pair: c.pair.label(),
        source: c.pair.source().into(),
        target: c.pair.target().into(),
        strategy: c.strategy.kind.label(),
        scarcity: c.scarcity().to_string(),
        seed: c.repeat,
        mean_surface_dice: mean(&r.per_image.iter().map(|s| s.surface_dice).collect::<Vec<_>>()),
        n_test: r.per_image.len(),
        diverged: r.diverged,
        fraction_tuned: r.fraction_tuned,
        run_dir: format!("{}/{}/{}", c.pair.label(), c.dir_label, c.repeat),
    }
}

fn aggregate(plan: &ExperimentPlan, cells: &[Cell], results: &[RunResult], rows: Vec<ResultRow>) -> Result<Comparison> {
    let labels: Vec<String> = plan.strategies.iter().map(|s| s.kind.label()).collect();
    let mut summary = Vec::new();
    let mut pvalues = Vec::new();
    for scarcity in &plan.scarcity_grid {
        let sc = scarcity.to_string();
        let pooled = |label: &str| -> Vec<f64> {
            cells
                .iter()
                .zip(results)
                .filter(|(c, _)| c.strategy.kind.label() == label && c.scarcity().to_string() == sc)
                .flat_map(|(_, r)| r.per_image.iter().map(|s| s.surface_dice))
                .collect()
        };
        for label in &labels {
            let means: Vec<f64> = rows
                .iter()
                .filter(|r| &r.strategy == label && r.scarcity == sc)
                .map(|r| r.mean_surface_dice)
                .collect();
            summary.push(SummaryRow {
                strategy: label.clone(),
                scarcity: sc.clone(),
                mean_surface_dice: mean(&means),
                n_runs: means.len(),
            });
        }
        for better in &labels {
            for worse in labels.iter().filter(|w| *w != better) {
                let (x, y) = (pooled(better), pooled(worse));
                pvalues.push(PValueRow {
                    scarcity: sc.clone(),
                    better: better.clone(),
                    worse: worse.clone(),
                    n_images: x.len(),
                    p_value: wilcoxon_one_sided(&x, &y)?,
                });
            }
        }
    }
    Ok(Comparison { rows, summary, pvalues })
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    })?;
    r.deserialize().map(|row| row.map_err(|e| Error::format(path, e.to_string()))).collect()
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::Profile;

    #[test]
    fn cells_cover_the_cartesian_product_in_plan_order() {
        let mut plan = ExperimentPlan::desk("d", "r", Profile::Desk);
        plan.lambda_by_scarcity.insert("8".into(), 0.02);
        let cells = comparison_cells(&plan);
        assert_eq!(cells.len(), 4 * 4 * 5 * 3);
        let mut dirs: Vec<String> = cells.iter().map(|c| format!("{}/{}/{}", c.pair.label(), c.dir_label, c.repeat)).collect();
        dirs.sort();
        dirs.dedup();
        assert_eq!(dirs.len(), cells.len());
        assert_eq!(cells[0].dir_label, "transfer_only__4");
        let spot8 = cells
            .iter()
            .find(|c| c.dir_label == "spottunet__8")
            .unwrap();
        assert_eq!(spot8.strategy.kind, StrategyKind::Spottunet { lambda: 0.02, tau: 0.1 });
        let spot4 = cells.iter().find(|c| c.dir_label == "spottunet__4").unwrap();
        assert_eq!(spot4.strategy.kind, StrategyKind::Spottunet { lambda: 0.003, tau: 0.1 });
    }

    #[test]
    fn csv_round_trips_rows() {
        let rows = vec![ResultRow {
            pair: "a__b".into(),
            source: "a".into(),
            target: "b".into(),
            strategy: "spottunet".into(),
            scarcity: "full".into(),
            seed: 2,
            mean_surface_dice: 0.123456789012345,
            n_test: 16,
            diverged: false,
            fraction_tuned: Some(0.25),
            run_dir: "a__b/spottunet__full/2".into(),
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_csv(&p, &rows).unwrap();
        assert_eq!(read_results(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("pair,source,target,strategy,scarcity,seed,mean_surface_dice,"));
    }
}
