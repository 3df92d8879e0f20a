use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use kmbdf::gradcheck;
use kmbdf::harness::{self, timing::timing_csv, ExperimentConfig, SweepGrid, TimingConfig};
use kmbdf::models::LinearForecaster;

#[derive(Parser, Debug)]
#[command(name = "kmbdf", version, about = "Kernel-balanced direct forecasting experiments")]
struct Cli {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML experiment config. Defaults to the built-in AR(1) task.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// `key.path=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write its report, loss trace and checkpoint.
    Train(ConfigArgs),
    /// Train once per value of one config key.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dotted config key, e.g. `objective.alpha`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Score a saved checkpoint on the validation and test splits.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Time the objective's forward and backward pass on one thread.
    Timing {
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 96)]
        history: usize,
        #[arg(long, default_value_t = 21)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_values_t = harness::timing::DEFAULT_HORIZONS)]
        horizons: Vec<usize>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        per_case: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Permutation MMD test between real and forecast test joints.
    MmdTest {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 200)]
        permutations: usize,
        #[arg(long, default_value_t = 500)]
        max_windows: usize,
    },
}

fn load_config(args: &ConfigArgs, cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => ExperimentConfig::default().with_overrides(&overrides)?,
    };
    Ok(match &cli.out {
        Some(out) => ExperimentConfig {
            out: Some(out.clone()),
            ..cfg
        },
        None => cfg,
    })
}

fn write_json(dir: Option<&Path>, name: &str, value: &serde_json::Value) -> anyhow::Result<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        std::fs::write(&path, serde_json::to_string_pretty(value)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<serde_json::Value> {
    match &cli.command {
        Command::Train(args) => {
            let cfg = load_config(args, cli)?;
            let run = harness::train(&cfg)?;
            if let Some(dir) = &cfg.out {
                harness::write_run(&run, dir)?;
            }
            Ok(json!({
                "command": "train",
                "objective": run.report.objective,
                "best_epoch": run.report.best_epoch,
                "test_mse": run.report.test.mse,
                "test_mae": run.report.test.mae,
                "test_mmd2": run.report.test_mmd2,
                "out": cfg.out,
            }))
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let cfg = load_config(config, cli)?;
            let result = harness::run_sweep(&cfg, &SweepGrid::new(param.clone(), values.clone()))?;
            if let Some(dir) = &cfg.out {
                result.write(dir)?;
            }
            Ok(json!({
                "command": "sweep",
                "baseline": result.baseline.test,
                "rows": result.rows,
                "out": cfg.out,
            }))
        }
        Command::Evaluate { config, checkpoint } => {
            let cfg = load_config(config, cli)?;
            let report = harness::evaluate_checkpoint(&cfg, checkpoint)?;
            let value = serde_json::to_value(&report)?;
            write_json(cfg.out.as_deref(), "evaluation.json", &value)?;
            Ok(json!({ "command": "evaluate", "result": value }))
        }
        Command::Timing {
            batch,
            history,
            channels,
            top_k,
            reps,
            horizons,
        } => {
            let tcfg = TimingConfig {
                batch: *batch,
                history: *history,
                channels: *channels,
                top_k: *top_k,
                reps: *reps,
                seed: cli.seed.unwrap_or(0),
                horizons: horizons.clone(),
            };
            let rows = harness::timing_probe(&tcfg)?;
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("timing.csv"), timing_csv(&rows))?;
            }
            Ok(json!({ "command": "timing", "config": tcfg, "rows": rows }))
        }
        Command::Gradcheck {
            per_case,
            tolerance,
        } => {
            let entries = gradcheck::run_suite(cli.seed.unwrap_or(0), *per_case)?;
            let failed: Vec<&str> = entries
                .iter()
                .filter(|e| !e.passes(*tolerance))
                .map(|e| e.name.as_str())
                .collect();
            let value = json!({
                "command": "gradcheck",
                "tolerance": tolerance,
                "entries": entries,
                "passed": failed.is_empty(),
            });
            write_json(cli.out.as_deref(), "gradcheck.json", &value)?;
            if !failed.is_empty() {
                anyhow::bail!(GradcheckFailed(failed.join(", ")));
            }
            Ok(value)
        }
        Command::MmdTest {
            config,
            checkpoint,
            permutations,
            max_windows,
        } => {
            let cfg = load_config(config, cli)?;
            let model = LinearForecaster::load(checkpoint)?;
            let res = harness::forecast_mmd_test(&cfg, &model, *max_windows, *permutations)?;
            let value = serde_json::to_value(&res)?;
            write_json(cfg.out.as_deref(), "mmd_test.json", &value)?;
            Ok(json!({ "command": "mmd-test", "result": value }))
        }
    }
}

#[derive(Debug)]
struct GradcheckFailed(String);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gradient check failed for: {}", self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let kind = if let Some(e) = err.downcast_ref::<kmbdf::Error>() {
        e.kind()
    } else if err.downcast_ref::<GradcheckFailed>().is_some() {
        "gradcheck"
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else {
        "internal"
    };
    json!({
        "error": {
            "kind": kind,
            "message": format!("{err:#}"),
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let value = json!({ "error": { "kind": "usage", "message": e.to_string() } });
            eprintln!("{value}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}
