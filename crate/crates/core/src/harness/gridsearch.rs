use std::collections::BTreeMap;
use std::fs;

use serde::{Deserialize, Serialize};

use super::compare::{check_domains, read_csv, write_csv};
use super::plan::ExperimentPlan;
use super::runner::{run_cells, Cell, CellContext};
use crate::datagen::{Dataset, ScarcitySetup};
use crate::error::{Error, Result};
use crate::strategies::{mean, RunResult, StrategyKind, StrategySpec};

/// One grid-search run. Diverged runs are scored 0, flagged and left out
/// of the argmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub pair: String,
    pub scarcity: String,
    pub seed: u64,
    pub tau: f64,
    pub lambda: f64,
    pub mean_surface_dice: f64,
    pub failed: bool,
    pub fraction_tuned: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSearch {
    pub rows: Vec<GridRow>,
    /// Mean score over non-failed runs per grid value, in grid order.
    pub scores: Vec<(f64, f64)>,
    pub best_tau: f64,
}

/// Mean validation score against lambda at one scarcity level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaCurve {
    pub scarcity: String,
    pub lambdas: Vec<f64>,
    pub scores: Vec<f64>,
    pub best_lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub rows: Vec<GridRow>,
    pub curves: Vec<LambdaCurve>,
}

impl LambdaSearch {
    /// Best lambda per scarcity label, ready for `lambda_by_scarcity`.
    pub fn best(&self) -> BTreeMap<String, f64> {
        self.curves.iter().map(|c| (c.scarcity.clone(), c.best_lambda)).collect()
    }
}

/// Row of `lambda_curves.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub scarcity: String,
    pub lambda: f64,
    pub mean_surface_dice: f64,
    pub is_best: bool,
}

pub const TAU_TABLE: &str = "gridsearch_tau.csv";
pub const TAU_BEST: &str = "best_tau.json";
pub const LAMBDA_TABLE: &str = "gridsearch_lambda.csv";
pub const LAMBDA_CURVES: &str = "lambda_curves.csv";
pub const LAMBDA_BEST: &str = "best_lambda.json";

fn grid_cells(plan: &ExperimentPlan, scarcity: ScarcitySetup, points: &[(f64, f64)], tag: &str) -> Vec<Cell> {
    let schedule = plan.spottunet_schedule();
    let mut cells = Vec::new();
    for pair in &plan.validation_pairs {
        for &(lambda, tau) in points {
            let value = if tag == "tau" { tau } else { lambda };
            for &repeat in &plan.seeds {
                cells.push(Cell {
                    pair: pair.clone(),
                    strategy: StrategySpec {
                        kind: StrategyKind::Spottunet { lambda, tau },
                        schedule,
                        scarcity: Some(scarcity),
                    },
                    repeat,
                    dir_label: format!("spottunet_{tag}{value}__{scarcity}"),
                    seed_label: "spottunet_search".into(),
                });
            }
        }
    }
    cells
}

fn grid_row(c: &Cell, r: &RunResult) -> GridRow {
    let StrategyKind::Spottunet { lambda, tau } = c.strategy.kind else {
        unreachable!("grid cells are always dual-path runs")
    };
    let score = mean(&r.per_image.iter().map(|s| s.surface_dice).collect::<Vec<_>>());
    let failed = r.diverged || !score.is_finite();
    GridRow {
        pair: c.pair.label(),
        scarcity: c.scarcity().to_string(),
        seed: c.repeat,
        tau,
        lambda,
        mean_surface_dice: if failed { 0.0 } else { score },
        failed,
        fraction_tuned: r.fraction_tuned,
    }
}

/// Mean over non-failed rows selected by `pick`; NaN when none survive.
fn grid_mean(rows: &[GridRow], pick: impl Fn(&GridRow) -> bool) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| !r.failed && pick(r)).map(|r| r.mean_surface_dice).collect();
    mean(&v)
}

/// First grid value with the highest finite score.
fn argmax(values: &[f64], scores: &[f64]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&v, &s) in values.iter().zip(scores) {
        if s.is_finite() && best.is_none_or(|(_, b)| s > b) {
            best = Some((v, s));
        }
    }
    best.map(|(v, _)| v)
}

fn search_context<'a>(plan: &'a ExperimentPlan, dataset: &'a Dataset) -> Result<CellContext<'a>> {
    plan.validate()?;
    if plan.validation_pairs.is_empty() {
        return Err(Error::Config("grid search needs at least one validation pair".into()));
    }
    check_domains(dataset, &plan.validation_pairs)?;
    Ok(CellContext {
        dataset,
        runs_root: &plan.runs_root,
        experiment: &plan.experiment,
        seed: plan.seed,
        profile: plan.profile,
    })
}

/// Trains the dual-path model on each validation pair for every tau in the
/// grid (lambda from the plan, scarcity `tau_search_slices`) and picks the
/// tau with the best mean score.
pub fn run_grid_search_tau(plan: &ExperimentPlan, dataset: &Dataset) -> Result<TauSearch> {
    if plan.tau_grid.is_empty() {
        return Err(Error::Config("tau grid is empty".into()));
    }
    let ctx = search_context(plan, dataset)?;
    let (lambda, _) = plan.spottunet_params();
    let points: Vec<(f64, f64)> = plan.tau_grid.iter().map(|&t| (lambda, t)).collect();
    let cells = grid_cells(plan, plan.tau_search_slices, &points, "tau");
    log::info!("tau search `{}`: {} runs", plan.experiment, cells.len());
    let results = run_cells(&ctx, &cells, plan.workers)?;
    let rows: Vec<GridRow> = cells.iter().zip(&results).map(|(c, r)| grid_row(c, r)).collect();
    let means: Vec<f64> = plan.tau_grid.iter().map(|&t| grid_mean(&rows, |r| r.tau == t)).collect();
    let best_tau = argmax(&plan.tau_grid, &means).ok_or_else(|| Error::Runtime("every tau search run diverged".into()))?;
    let search = TauSearch {
        scores: plan.tau_grid.iter().copied().zip(means).collect(),
        rows,
        best_tau,
    };
    let dir = plan.experiment_dir();
    write_csv(&dir.join(TAU_TABLE), &search.rows)?;
    let p = dir.join(TAU_BEST);
    fs::write(&p, serde_json::to_string_pretty(&serde_json::json!({ "tau": best_tau }))?).map_err(|e| Error::io(&p, e))?;
    Ok(search)
}

/// Trains the dual-path model for every lambda and scarcity level on the
/// validation pairs (tau from the plan) and picks the best lambda per
/// scarcity.
pub fn run_grid_search_lambda(plan: &ExperimentPlan, dataset: &Dataset) -> Result<LambdaSearch> {
    if plan.lambda_grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    let ctx = search_context(plan, dataset)?;
    let (_, tau) = plan.spottunet_params();
    let points: Vec<(f64, f64)> = plan.lambda_grid.iter().map(|&l| (l, tau)).collect();
    let cells: Vec<Cell> = plan
        .scarcity_grid
        .iter()
        .flat_map(|&s| grid_cells(plan, s, &points, "lambda"))
        .collect();
    log::info!("lambda search `{}`: {} runs", plan.experiment, cells.len());
    let results = run_cells(&ctx, &cells, plan.workers)?;
    let rows: Vec<GridRow> = cells.iter().zip(&results).map(|(c, r)| grid_row(c, r)).collect();
    let mut curves = Vec::new();
    for s in &plan.scarcity_grid {
        let sc = s.to_string();
        let scores: Vec<f64> = plan
            .lambda_grid
            .iter()
            .map(|&l| grid_mean(&rows, |r| r.lambda == l && r.scarcity == sc))
            .collect();
        let best_lambda = argmax(&plan.lambda_grid, &scores)
            .ok_or_else(|| Error::Runtime(format!("every lambda search run at scarcity {sc} diverged")))?;
        curves.push(LambdaCurve {
            scarcity: sc,
            lambdas: plan.lambda_grid.clone(),
            scores,
            best_lambda,
        });
    }
    let search = LambdaSearch { rows, curves };
    let dir = plan.experiment_dir();
    write_csv(&dir.join(LAMBDA_TABLE), &search.rows)?;
    write_csv(&dir.join(LAMBDA_CURVES), &curve_points(&search.curves))?;
    let p = dir.join(LAMBDA_BEST);
    fs::write(&p, serde_json::to_string_pretty(&search.best())?).map_err(|e| Error::io(&p, e))?;
    Ok(search)
}

pub fn curve_points(curves: &[LambdaCurve]) -> Vec<CurvePoint> {
    curves
        .iter()
        .flat_map(|c| {
            c.lambdas.iter().zip(&c.scores).map(move |(&lambda, &s)| CurvePoint {
                scarcity: c.scarcity.clone(),
                lambda,
                mean_surface_dice: s,
                is_best: lambda == c.best_lambda,
            })
        })
        .collect()
}

/// Rebuilds curves from `lambda_curves.csv` rows, keeping file order.
pub fn curves_from_points(points: &[CurvePoint]) -> Vec<LambdaCurve> {
    let mut curves: Vec<LambdaCurve> = Vec::new();
    for p in points {
        let idx = match curves.iter().position(|c| c.scarcity == p.scarcity) {
            Some(i) => i,
            None => {
                curves.push(LambdaCurve {
                    scarcity: p.scarcity.clone(),
                    lambdas: Vec::new(),
                    scores: Vec::new(),
                    best_lambda: f64::NAN,
                });
                curves.len() - 1
            }
        };
        let c = &mut curves[idx];
        c.lambdas.push(p.lambda);
        c.scores.push(p.mean_surface_dice);
        if p.is_best {
            c.best_lambda = p.lambda;
        }
    }
    curves
}

pub fn read_curve_points(path: &std::path::Path) -> Result<Vec<CurvePoint>> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::Profile;

    fn row(tau: f64, score: f64, failed: bool) -> GridRow {
        GridRow {
            pair: "a__b".into(),
            scarcity: "4".into(),
            seed: 0,
            tau,
            lambda: 0.0,
            mean_surface_dice: score,
            failed,
            fraction_tuned: None,
        }
    }

    #[test]
    fn failed_rows_never_win() {
        let rows = vec![row(0.1, 0.5, false), row(1.0, 0.0, true), row(2.0, 0.4, false)];
        let grid = [0.1, 1.0, 2.0];
        let means: Vec<f64> = grid.iter().map(|&t| grid_mean(&rows, |r| r.tau == t)).collect();
        assert!(means[1].is_nan());
        assert_eq!(argmax(&grid, &means), Some(0.1));
        assert_eq!(argmax(&[1.0], &[f64::NAN]), None);
        assert_eq!(argmax(&[1.0, 2.0], &[0.3, 0.3]), Some(1.0));
    }

    #[test]
    fn empty_grids_are_rejected() {
        let ds = crate::datagen::Dataset {
            config: crate::datagen::DatasetConfig::compact(0),
            domains: Vec::new(),
        };
        let mut plan = ExperimentPlan::desk("d", "r", Profile::Compact);
        plan.tau_grid.clear();
        assert!(matches!(run_grid_search_tau(&plan, &ds), Err(Error::Config(_))));
        plan.lambda_grid.clear();
        assert!(matches!(run_grid_search_lambda(&plan, &ds), Err(Error::Config(_))));
    }

    #[test]
    fn curve_points_round_trip() {
        let curves = vec![
            LambdaCurve {
                scarcity: "4".into(),
                lambdas: vec![0.0, 0.01],
                scores: vec![0.5, 0.6],
                best_lambda: 0.01,
            },
            LambdaCurve {
                scarcity: "full".into(),
                lambdas: vec![0.0, 0.01],
                scores: vec![0.7, 0.65],
                best_lambda: 0.0,
            },
        ];
        assert_eq!(curves_from_points(&curve_points(&curves)), curves);
    }
}
