//! Command line front end.
//!
//! Exit codes: 0 on success, 2 for config or validation problems, 3 when a
//! confidence construction eliminated every candidate, 4 when a lemma check
//! found a violation, 1 for anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use linmdp_core::harness::{fit_slope, read_regret_csv, run_experiment, sweep, ExperimentConfig};
use linmdp_core::oracle::{self, LemmaReport};
use linmdp_core::Error;

#[derive(Parser)]
#[command(name = "linmdp", version, about = "Regret experiments on finite linear MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config and print its summary.
    Run {
        /// Path to an experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config under several consecutive seeds and aggregate.
    Sweep {
        /// Path to an experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Number of seeds, consecutive from the config's seed.
        #[arg(long)]
        seeds: u64,
        /// Replace the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the planner's supporting inequalities by brute force.
    Verify {
        /// Restrict to one lemma id (default: all).
        #[arg(long)]
        lemma: Option<String>,
        /// Trial count (default: per-lemma).
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a log-log slope to a regret csv over an episode window.
    Slope {
        /// Path to a regret.csv produced by `run`.
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        kmin: usize,
        #[arg(long)]
        kmax: usize,
    },
}

const LEMMA_IDS: [&str; 6] = [
    "var-square",
    "center-dominance",
    "group-max",
    "elliptical-potential",
    "value-drift",
    "total-variance",
];

fn run_lemma(id: &str, trials: Option<usize>, seed: u64) -> Result<LemmaReport, Error> {
    let t = |default: usize| trials.unwrap_or(default);
    Ok(match id {
        "var-square" => oracle::run_var_square(t(1000), seed),
        "center-dominance" => oracle::run_center_dominance(t(200), seed.wrapping_add(1), 4096),
        "group-max" => oracle::run_group_max(t(1000), seed.wrapping_add(2)),
        "elliptical-potential" => oracle::run_elliptical_potential(t(200), seed.wrapping_add(3)),
        "value-drift" => oracle::run_value_drift(t(200), seed.wrapping_add(4)),
        "total-variance" => oracle::run_total_variance(t(20), seed.wrapping_add(5), 256),
        other => {
            return Err(Error::Config(format!(
                "unknown lemma id {other}; known ids: {}",
                LEMMA_IDS.join(", ")
            )))
        }
    })
}

fn verify(lemma: Option<&str>, trials: Option<usize>, seed: u64) -> Result<(), Error> {
    let reports: Vec<LemmaReport> = match lemma {
        Some(id) => vec![run_lemma(id, trials, seed)?],
        None => LEMMA_IDS
            .iter()
            .map(|id| run_lemma(id, trials, seed))
            .collect::<Result<_, _>>()?,
    };
    let mut out = serde_json::Map::new();
    for r in &reports {
        out.insert(
            r.id.clone(),
            serde_json::json!({
                "trials": r.trials,
                "violations": r.violations,
                "worst_margin": r.worst_margin,
                "witness": r.witness,
                "notes": r.notes,
            }),
        );
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    let violations: usize = reports.iter().map(|r| r.violations).sum();
    if violations > 0 {
        let ids: Vec<&str> = reports
            .iter()
            .filter(|r| r.violations > 0)
            .map(|r| r.id.as_str())
            .collect();
        return Err(Error::LemmaViolation(format!(
            "{violations} violating trials in: {}",
            ids.join(", ")
        )));
    }
    Ok(())
}

fn load_config(path: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load_json(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(dir) = out {
        config.out_dir = Some(dir);
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let config = load_config(&config, seed, out)?;
            let run = run_experiment(&config)?;
            println!("{}", serde_json::to_string_pretty(&run.summary)?);
            Ok(())
        }
        Command::Sweep { config, seeds, out } => {
            if seeds == 0 {
                return Err(Error::Config("sweep needs at least one seed".into()));
            }
            let config = load_config(&config, None, out)?;
            let list: Vec<u64> = (0..seeds).map(|i| config.seed.wrapping_add(i)).collect();
            let summary = sweep(&config, &list)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Verify { lemma, trials, seed } => verify(lemma.as_deref(), trials, seed),
        Command::Slope { log, kmin, kmax } => {
            let rows = read_regret_csv(&log)?;
            let (slope, intercept, r_squared) = fit_slope(&rows, kmin, kmax)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "slope": slope,
                    "intercept": intercept,
                    "r_squared": r_squared,
                    "kmin": kmin,
                    "kmax": kmax,
                }))?
            );
            Ok(())
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::Config(_) => 2,
        Error::EmptyConfidenceSet(_) | Error::EmptyModelClass(_) => 3,
        Error::LemmaViolation(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
