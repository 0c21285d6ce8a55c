//! `esmda` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use esmda_core::config::load_config;
use esmda_core::{
    exact_posterior, posterior_distance, run_esmda, summarize, write_record, BuiltinModel,
    Ensemble, EsmdaError, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "esmda",
    version,
    about = "Ensemble smoother with multiple data assimilation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run and write ensembles and diagnostics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for forward-model evaluation.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and its alpha schedule without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the exact posterior of a linear-model config as JSON.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare an ensemble CSV against the exact posterior of a linear config.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ensemble: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERICAL
            })
        }
    }
}

fn dispatch(command: Command) -> Result<(), EsmdaError> {
    match command {
        Command::Run {
            config,
            seed,
            parallelism,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = parallelism {
                if p == 0 {
                    return Err(EsmdaError::InvalidArgument(
                        "--parallelism must be at least 1".into(),
                    ));
                }
                cfg.parallelism = p;
            }
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            run(&cfg)
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let problem = cfg.problem()?;
            let report = &problem.schedule_report;
            println!(
                "config ok: N_m = {}, N_d = {}, N_e = {}, N_a = {}",
                problem.prior.dim(),
                problem.d_hist.len(),
                cfg.n_e,
                problem.schedule.n_a()
            );
            println!(
                "schedule {:?}: sum(1/alpha) - 1 = {:e}{}",
                problem.schedule.alphas(),
                report.residual,
                if report.valid {
                    ""
                } else {
                    " (violation allowed by override)"
                }
            );
            Ok(())
        }
        Command::Oracle { config } => {
            let cfg = load_config(&config)?;
            let post = oracle(&cfg)?;
            let rows: Vec<Vec<f64>> = post
                .covariance
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect();
            let json = serde_json::json!({
                "mean": post.mean.as_slice(),
                "covariance": rows,
            });
            println!("{}", serde_json::to_string_pretty(&json)?);
            Ok(())
        }
        Command::Compare { config, ensemble } => {
            let cfg = load_config(&config)?;
            let post = oracle(&cfg)?;
            let file = std::fs::File::open(&ensemble).map_err(|e| EsmdaError::Io {
                path: ensemble.clone(),
                source: e,
            })?;
            let e = Ensemble::read_csv(file, 0).map_err(|err| match err {
                EsmdaError::Csv { message, .. } => EsmdaError::Csv {
                    path: ensemble.clone(),
                    message,
                },
                other => other,
            })?;
            if e.dim() != post.mean.len() {
                return Err(EsmdaError::Dimension {
                    context: format!("ensemble {}", ensemble.display()),
                    expected: post.mean.len(),
                    found: e.dim(),
                });
            }
            let d = posterior_distance(&e, &post)?;
            println!("{}", serde_json::to_string_pretty(&d)?);
            Ok(())
        }
    }
}

fn run(cfg: &RunConfig) -> Result<(), EsmdaError> {
    let record = run_esmda(cfg)?;
    let written = write_record(&record, &cfg.output_dir)?;
    println!("ensemble,alpha,mean_mismatch,min_mismatch,max_mismatch");
    for row in summarize(&record) {
        println!(
            "{},{},{},{},{}",
            row.ensemble,
            row.alpha
                .map_or_else(|| "final".to_string(), |a| a.to_string()),
            row.mean_mismatch,
            row.min_mismatch,
            row.max_mismatch
        );
    }
    eprintln!(
        "{} forward evaluations; wrote {} files to {}",
        record.evaluations,
        written.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn oracle(cfg: &RunConfig) -> Result<esmda_core::GaussianPosterior, EsmdaError> {
    let problem = cfg.problem()?;
    match &problem.model {
        BuiltinModel::Linear(model) => {
            exact_posterior(&problem.prior, model, &problem.d_hist, &problem.noise)
        }
        _ => Err(EsmdaError::Config {
            location: "forward_model.type".into(),
            message: "the exact posterior exists only for the linear model".into(),
        }),
    }
}
