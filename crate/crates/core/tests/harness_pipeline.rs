use std::fs;
use std::path::Path;

use spottunet_core::datagen::{build_dataset, Dataset, DatasetConfig, DomainSpec, ScarcitySetup, SplitSizes};
use spottunet_core::harness::{
    load_baseline, pretrain_domain, run_comparison, run_grid_search_lambda, run_grid_search_tau, DomainPair, ExperimentPlan,
    PlanStrategy, RESULTS_FILE,
};
use spottunet_core::strategies::{read_run_config, read_run_result, Profile, StrategyKind, TrainSchedule};
use spottunet_core::Error;

fn tiny_dataset() -> Dataset {
    let mut c = DatasetConfig::compact(5);
    c.split = SplitSizes { train: 8, val: 2, test: 3 };
    let shifted = c.domains[2].clone();
    let mut other = c.domains[1].clone();
    other.domain_id = "other".into();
    c.domains = vec![DomainSpec::identity("src"), shifted, other];
    build_dataset(&c).unwrap()
}

fn tiny_schedule() -> TrainSchedule {
    TrainSchedule {
        epochs: 2,
        iters_per_epoch: 2,
        lr_initial: 1e-2,
        lr_reduced: 1e-3,
        reduce_at_epoch: 1,
        batch_size: 2,
    }
}

fn plan(ds: &Dataset, runs: &Path) -> ExperimentPlan {
    let target = ds.domains[1].spec.domain_id.clone();
    let with = |kind| PlanStrategy {
        kind,
        schedule: Some(tiny_schedule()),
    };
    ExperimentPlan {
        experiment: "tiny".into(),
        dataset_root: "unused".into(),
        runs_root: runs.to_path_buf(),
        seed: 3,
        profile: Profile::Compact,
        pairs: vec![DomainPair::new("src", &target)],
        validation_pairs: vec![DomainPair::new("src", "other")],
        scarcity_grid: vec![ScarcitySetup::Slices(2), ScarcitySetup::FULL],
        strategies: vec![
            with(StrategyKind::TransferOnly),
            with(StrategyKind::FinetuneAll),
            with(StrategyKind::FinetuneFirstK { k: 3 }),
            with(StrategyKind::HistogramMatchTransfer),
            with(StrategyKind::Spottunet { lambda: 0.01, tau: 0.5 }),
        ],
        seeds: vec![0, 1],
        tau_grid: vec![0.5, 2.0],
        lambda_grid: vec![0.0, 0.05],
        tau_search_slices: ScarcitySetup::Slices(2),
        lambda_by_scarcity: Default::default(),
        workers: 1,
    }
}

fn pretrain_all(ds: &Dataset, runs: &Path) {
    for r in [0, 1] {
        pretrain_domain(ds, runs, "src", Profile::Compact, &tiny_schedule(), r, 3).unwrap();
    }
}

fn result_dirs(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                if p.join("result.json").exists() {
                    out.push(p.clone());
                }
                stack.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn missing_baseline_names_the_pretrain_command() {
    let ds = tiny_dataset();
    let tmp = tempfile::tempdir().unwrap();
    let err = run_comparison(&plan(&ds, tmp.path()), &ds).unwrap_err();
    assert!(matches!(err, Error::Missing(_)));
    assert!(err.to_string().contains("spottunet pretrain --domain src --profile compact --repeat 0"));
    assert!(load_baseline(tmp.path(), "src", Profile::Compact, 0).is_err());
}

#[test]
fn comparison_is_complete_hygienic_resumable_and_worker_invariant() {
    let ds = tiny_dataset();
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("a");
    pretrain_all(&ds, &runs);
    let p = plan(&ds, &runs);
    let cmp = run_comparison(&p, &ds).unwrap();
    assert_eq!(cmp.rows.len(), 2 * 5 * 2);
    let csv_path = p.experiment_dir().join(RESULTS_FILE);
    let first = fs::read(&csv_path).unwrap();

    // Every run directory is auditable and split-clean; every mean is
    // recomputable from the stored per-image scores.
    let dirs = result_dirs(&p.experiment_dir());
    assert_eq!(dirs.len(), 20);
    for row in &cmp.rows {
        let dir = p.experiment_dir().join(&row.run_dir);
        let config = read_run_config(&dir).unwrap();
        assert!(config.finetune_ids.iter().all(|id| !config.test_ids.contains(id)));
        let result = read_run_result(&dir).unwrap().unwrap();
        let per: Vec<f64> = result.per_image.iter().map(|s| s.surface_dice).collect();
        assert_eq!(row.mean_surface_dice, per.iter().sum::<f64>() / per.len() as f64);
        assert!(dir.join("checkpoint/params.bin").exists() && dir.join("log.csv").exists());
    }
    // Scarce subsets are shared by all strategies of a cell.
    let subsets: Vec<Vec<usize>> = cmp
        .rows
        .iter()
        .filter(|r| r.scarcity == "2" && r.seed == 0)
        .map(|r| read_run_config(&p.experiment_dir().join(&r.run_dir)).unwrap().finetune_ids)
        .collect();
    assert!(subsets.windows(2).all(|w| w[0] == w[1]));

    // Resume: a removed result is recomputed, the others are left alone.
    let victim = p.experiment_dir().join(&cmp.rows[1].run_dir);
    fs::remove_file(victim.join("result.json")).unwrap();
    let keep = p.experiment_dir().join(&cmp.rows[4].run_dir).join("result.json");
    let stamp = fs::metadata(&keep).unwrap().modified().unwrap();
    run_comparison(&p, &ds).unwrap();
    assert_eq!(fs::read(&csv_path).unwrap(), first);
    assert_eq!(fs::metadata(&keep).unwrap().modified().unwrap(), stamp);

    // Same plan in a fresh root with two workers.
    let runs_b = tmp.path().join("b");
    pretrain_all(&ds, &runs_b);
    let mut pb = p.clone();
    pb.runs_root = runs_b;
    pb.workers = 2;
    run_comparison(&pb, &ds).unwrap();
    assert_eq!(fs::read(pb.experiment_dir().join(RESULTS_FILE)).unwrap(), first);

    // A changed configuration never silently reuses old runs.
    let mut changed = p.clone();
    changed.strategies[4].kind = StrategyKind::Spottunet { lambda: 0.5, tau: 0.5 };
    assert!(matches!(run_comparison(&changed, &ds), Err(Error::Config(_))));
}

#[test]
fn grid_searches_produce_full_tables() {
    let ds = tiny_dataset();
    let tmp = tempfile::tempdir().unwrap();
    pretrain_all(&ds, tmp.path());
    let p = plan(&ds, tmp.path());
    let tau = run_grid_search_tau(&p, &ds).unwrap();
    assert_eq!(tau.rows.len(), 2 * 2);
    assert!(p.tau_grid.contains(&tau.best_tau));
    let lambda = run_grid_search_lambda(&p, &ds).unwrap();
    assert_eq!(lambda.rows.len(), 2 * 2 * 2);
    assert_eq!(lambda.curves.len(), 2);
    for c in &lambda.curves {
        assert_eq!(c.lambdas, p.lambda_grid);
        let best = c.scores[c.lambdas.iter().position(|&l| l == c.best_lambda).unwrap()];
        assert!(c.scores.iter().all(|&s| s <= best));
    }
    let mut single = p.clone();
    single.tau_grid = vec![2.0];
    assert_eq!(run_grid_search_tau(&single, &ds).unwrap().best_tau, 2.0);
    let mut none = p;
    none.validation_pairs.clear();
    assert!(matches!(run_grid_search_tau(&none, &ds), Err(Error::Config(_))));
}
