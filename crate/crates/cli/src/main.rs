use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use v2x_noma::config::{load_config, RunConfig};
use v2x_noma_cli::{cmd_oracle_check, cmd_run, cmd_sweep, OracleOptions, RunOptions, SweepSpec};

#[derive(Parser)]
#[command(name = "v2x-noma", version, about = "NOMA V2X sidelink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory; defaults to the config's output_path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every seed of a run config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Include per-slot power-control traces in report.json.
        #[arg(long)]
        dump_power_traces: bool,
    },
    /// Simulate a grid of parameter values, schemes and seeds.
    Sweep {
        /// Sweep spec: parameter, values, schemes and a [base] run config.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare swap matching with brute force on random small instances.
    OracleCheck {
        /// Run config supplying channel and PHY parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        max_tx: usize,
        #[arg(long, default_value_t = 3)]
        max_sc: usize,
        #[arg(long, default_value_t = 2)]
        max_quota: usize,
        #[arg(long, default_value_t = 1000)]
        max_swap_iterations: u32,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            common,
            dump_power_traces,
        } => {
            let cfg = load_config(&config)?;
            let opts = RunOptions {
                out_dir: common.out.unwrap_or_else(|| cfg.output_path.clone()),
                workers: common.workers,
                dump_power_traces,
            };
            let summary = cmd_run(&cfg, &opts)?;
            for a in &summary.aggregate {
                println!(
                    "{} {} {}: mean {:.4} (95% CI {:.4}..{:.4}, n = {})",
                    a.scheme, a.mode, a.metric, a.mean, a.ci95_lo, a.ci95_hi, a.n
                );
            }
            println!("wrote {}", opts.out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, common } => {
            let spec = SweepSpec::load(&config)?;
            let out_dir = match common.out {
                Some(d) => d,
                None => spec.points()?[0].config.output_path.clone(),
            };
            let opts = RunOptions {
                out_dir,
                workers: common.workers,
                dump_power_traces: false,
            };
            let rows = cmd_sweep(&spec, &opts)?;
            println!("{} rows written to {}", rows.len(), opts.out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck {
            config,
            trials,
            seed,
            max_tx,
            max_sc,
            max_quota,
            max_swap_iterations,
        } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => RunConfig::default(),
            };
            let opts = OracleOptions {
                trials,
                seed,
                max_tx,
                max_sc,
                max_quota,
                max_swap_iterations,
            };
            let summary = cmd_oracle_check(&opts, &cfg);
            println!(
                "{} instances: mean utility ratio {:.4}, min {:.4}, max swap moves {}, {} violating",
                summary.trials,
                summary.mean_ratio,
                summary.min_ratio,
                summary.max_iterations,
                summary.failures.len()
            );
            if let Some(f) = summary.failures.first() {
                println!("{}", serde_json::to_string_pretty(f)?);
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
