//! Command-line pipeline for modeling meal-level blood-glucose impact.
//!
//! `aca run` drives the whole flow: ingest or generate meal logs, fit the
//! component model and the OLS baseline per user and meal subset, run the
//! paired bootstrap, and emit plot-ready curves, metrics, bend reports and
//! threshold ranges. The stage subcommands (`synth`, `fit`, `marginal`,
//! `bootstrap`, `evaluate`, `ranges`) expose the same steps individually
//! over persisted files, with identical determinism guarantees.

mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use pipeline::{
    bootstrap_stage, evaluate_stage, fit_stage, load_input, marginal_stage, parse_subset,
    ranges_stage, run_pipeline, synth_stage, Settings,
};

#[derive(Parser)]
#[command(name = "aca", version, about = "Attributable components analysis of meal/BG data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Master seed for all randomized steps.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of model components.
    #[arg(long, default_value_t = 2)]
    components: usize,
    /// Smoothness penalty strength, shared across covariates.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Grid nodes per real covariate.
    #[arg(long, default_value_t = 11)]
    grid_nodes: usize,
    /// Evaluation points per marginal curve.
    #[arg(long, default_value_t = 25)]
    eval_points: usize,
    /// Bootstrap replicas.
    #[arg(long, default_value_t = 100)]
    bootstrap_iters: usize,
    /// Rows drawn per bootstrap replica.
    #[arg(long, default_value_t = 500)]
    bootstrap_size: usize,
    /// Confidence level for the bands.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Minimum total meals for a user to be modeled.
    #[arg(long, default_value_t = 30)]
    min_meals: usize,
}

impl CommonArgs {
    fn settings(&self, threshold: Option<f64>) -> Settings {
        Settings {
            seed: self.seed,
            components: self.components,
            lambda: self.lambda,
            grid_nodes: self.grid_nodes,
            eval_points: self.eval_points,
            bootstrap_iters: self.bootstrap_iters,
            bootstrap_size: self.bootstrap_size,
            level: self.level,
            min_meals: self.min_meals,
            threshold,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: ingest/generate, fit, bootstrap, evaluate, ranges.
    Run {
        /// Meal-log CSV (exclusive with --synth).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Synthetic-data spec file (exclusive with --input).
        #[arg(long)]
        synth: Option<PathBuf>,
        /// BG-impact threshold for range extraction (mg/dl).
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic meal logs from a spec file.
    Synth {
        #[arg(long)]
        synth: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit both models for one user and subset; persist them.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        user: String,
        /// all|breakfast|lunch|dinner|other
        #[arg(long, default_value = "all")]
        subset: String,
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Marginal curve of a persisted model over one covariate.
    Marginal {
        /// A .model.json produced by `fit` or `run`.
        #[arg(long)]
        model: PathBuf,
        /// The CSV the model was fitted on.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        covariate: String,
        #[arg(long, default_value_t = 25)]
        eval_points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired bootstrap bands for one user and subset.
    Bootstrap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long, default_value = "all")]
        subset: String,
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score persisted models and curves: metrics.csv and bends.csv.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        curves: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold ranges over persisted curves: ranges.csv.
    Ranges {
        #[arg(long)]
        curves: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            input,
            synth,
            threshold,
            common,
            out,
        } => {
            if input.is_some() == synth.is_some() {
                bail!("exactly one of --input and --synth is required");
            }
            let settings = common.settings(threshold);
            let log = run_pipeline(input.as_deref(), synth.as_deref(), &settings, &out)?;
            print!("{log}");
            Ok(())
        }
        Command::Synth { synth, seed, out } => {
            let (path, log) = synth_stage(&synth, seed, &out)?;
            println!("{log}");
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Fit {
            input,
            user,
            subset,
            common,
            out,
        } => {
            let settings = common.settings(None);
            let records = load_input(&input)?.records;
            let subset = parse_subset(&subset)?;
            let (_, log) = fit_stage(&records, &user, subset, &settings, &out)?;
            println!("{log}");
            Ok(())
        }
        Command::Marginal {
            model,
            input,
            covariate,
            eval_points,
            out,
        } => {
            let path = marginal_stage(&model, &input, &covariate, eval_points, &out)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Bootstrap {
            input,
            user,
            subset,
            common,
            out,
        } => {
            let settings = common.settings(None);
            let records = load_input(&input)?.records;
            let subset = parse_subset(&subset)?;
            let pair = pipeline::fit_pair(&records, &user, subset, &settings)?;
            let log = bootstrap_stage(&pair, &user, subset, &settings, &out)?;
            println!("{log}");
            Ok(())
        }
        Command::Evaluate {
            input,
            models,
            curves,
            out,
        } => {
            let log = evaluate_stage(&input, &models, &curves, &out)?;
            println!("{log}");
            Ok(())
        }
        Command::Ranges {
            curves,
            threshold,
            out,
        } => {
            let log = ranges_stage(&curves, threshold, &out)?;
            println!("{log}");
            Ok(())
        }
    }
}
