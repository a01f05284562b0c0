use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spottunet_core::datagen::{build_dataset, Dataset, DatasetConfig};
use spottunet_core::harness::{
    collect_policy_frequencies, curves_from_points, pretrain_domain, read_curve_points, read_results, render_lambda_curves,
    render_policy_map, render_scarcity_curves, run_comparison, run_grid_search_lambda, run_grid_search_tau, run_oracle,
    ExperimentPlan,
};
use spottunet_core::seeding::seed_from_env;
use spottunet_core::strategies::{read_run_config, Profile, TrainSchedule};
use spottunet_core::{DualPath32, Error, Result};

/// Block-wise adaptive fine-tuning experiments on synthetic multi-scanner data.
///
/// The global experiment seed can be overridden with the SPOTTUNET_SEED
/// environment variable. Exit codes: 0 success, 1 invalid input, 2 runtime failure.
#[derive(Parser, Debug)]
#[command(name = "spottunet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic dataset generation.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train the baseline network on one source domain.
    Pretrain {
        #[arg(long)]
        domain: String,
        #[arg(long, value_enum)]
        profile: ProfileArg,
        /// Repeat index; comparison runs with seed r use repeat r.
        #[arg(long, default_value_t = 0)]
        repeat: u64,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
    },
    /// In-domain cross-validation upper bound.
    Oracle {
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
        #[arg(long, default_value_t = 0)]
        repeat: u64,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
    },
    /// Validation grid search over tau or lambda.
    Gridsearch {
        #[arg(value_enum)]
        param: GridParam,
        #[arg(long)]
        plan: PathBuf,
    },
    /// Run every strategy on every pair, scarcity level and seed of a plan.
    Compare {
        #[arg(long)]
        plan: PathBuf,
        /// Overrides the plan's worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Block-wise fine-tuning frequencies of a dual-path run.
    PolicyMap {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
    /// Figures from results.csv or lambda_curves.csv.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated strategy labels to draw.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
}

#[derive(Subcommand, Debug)]
enum DatasetAction {
    /// Render every domain of a dataset config.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
    Compact,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Compact => Profile::Compact,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum GridParam {
    Tau,
    Lambda,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn load_plan(path: &Path) -> Result<ExperimentPlan> {
    let mut plan = ExperimentPlan::load(path)?;
    plan.seed = seed_from_env(plan.seed)?;
    Ok(plan)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset {
            action: DatasetAction::Build { config, out },
        } => {
            let mut cfg: DatasetConfig = read_json(&config)?;
            cfg.seed = seed_from_env(cfg.seed)?;
            let ds = build_dataset(&cfg)?;
            ds.write(&out)?;
            println!("wrote {} domains to {}", ds.domains.len(), out.display());
        }
        Command::Pretrain {
            domain,
            profile,
            repeat,
            data,
            runs,
        } => {
            let profile = Profile::from(profile);
            let ds = Dataset::read(&data)?;
            let res = pretrain_domain(&ds, &runs, &domain, profile, &TrainSchedule::pretrain(profile), repeat, seed_from_env(0)?)?;
            println!("{domain}: source test surface dice {:.4}", res.mean_surface_dice);
        }
        Command::Oracle {
            domain,
            folds,
            profile,
            repeat,
            data,
            runs,
        } => {
            let ds = Dataset::read(&data)?;
            let rep = run_oracle(&ds, &runs, &domain, profile.into(), folds, repeat, seed_from_env(0)?)?;
            println!("{domain}: oracle surface dice {:.4} over {folds} folds", rep.mean_surface_dice);
        }
        Command::Gridsearch { param, plan } => {
            let plan = load_plan(&plan)?;
            let ds = Dataset::read(&plan.dataset_root)?;
            match param {
                GridParam::Tau => {
                    let s = run_grid_search_tau(&plan, &ds)?;
                    for (t, v) in &s.scores {
                        println!("tau {t}: {v:.4}");
                    }
                    println!("best tau {}", s.best_tau);
                }
                GridParam::Lambda => {
                    let s = run_grid_search_lambda(&plan, &ds)?;
                    for c in &s.curves {
                        println!("scarcity {}: best lambda {}", c.scarcity, c.best_lambda);
                    }
                }
            }
        }
        Command::Compare { plan, workers } => {
            let mut plan = load_plan(&plan)?;
            if let Some(w) = workers {
                plan.workers = w;
                plan.validate()?;
            }
            let ds = Dataset::read(&plan.dataset_root)?;
            let cmp = run_comparison(&plan, &ds)?;
            for s in &cmp.summary {
                println!("{:>8} {:<20} {:.4}", s.scarcity, s.strategy, s.mean_surface_dice);
            }
            println!("results in {}", plan.experiment_dir().display());
        }
        Command::PolicyMap { run, out, data } => {
            let config = read_run_config(&run)?;
            let model = DualPath32::load(&run.join("checkpoint")).map_err(|e| {
                Error::Config(format!("{} is not a dual-path run: {e}", run.display()))
            })?;
            let ds = Dataset::read(&data)?;
            let target = ds.domain(&config.target)?;
            let test = target.samples_by_id(&config.test_ids)?;
            let stats = collect_policy_frequencies(&model, &test)?;
            render_policy_map(&stats, model.frozen().config())?.write(&out)?;
            println!("policy map of {} inputs written to {}", stats.n_inputs, out.display());
        }
        Command::Plot {
            results,
            out,
            strategies,
        } => {
            let header = std::fs::read_to_string(&results)
                .map_err(|e| Error::io(&results, e))?
                .lines()
                .next()
                .unwrap_or_default()
                .to_string();
            let plot = if header.split(',').any(|h| h == "lambda") {
                render_lambda_curves(&curves_from_points(&read_curve_points(&results)?))?
            } else {
                render_scarcity_curves(&read_results(&results)?, strategies.as_deref())?
            };
            plot.write(&out)?;
            println!("wrote {}.svg and {}.csv to {}", plot.name, plot.name, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
